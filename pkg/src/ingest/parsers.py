import os
from typing import Tuple

import numpy as np

from src.core.errors import IngestionError

try:
    from PIL import Image
except ImportError:  # PNG/JPEG support is optional; PPM never needs it
    Image = None

PPM_MAGIC = b"P6"
PPM_WHITESPACE = b" \t\r\n"


class ImageParser:
    """Decode images to uint8 H×W×3 arrays. PPM (P6) is parsed here; PNG/JPEG go through Pillow."""

    @staticmethod
    def read_image(file_path: str) -> np.ndarray:
        if not os.path.isfile(file_path):
            raise IngestionError(file_path, "no such file")
        lower = file_path.lower()
        if lower.endswith((".ppm", ".pnm")):
            return ImageParser._read_ppm(file_path)
        if lower.endswith((".png", ".jpg", ".jpeg")):
            return ImageParser._read_pillow(file_path)
        # unknown extension: sniff the magic
        with open(file_path, "rb") as f:
            head = f.read(2)
        if head == PPM_MAGIC:
            return ImageParser._read_ppm(file_path)
        raise IngestionError(file_path, "unsupported image format")

    @staticmethod
    def _read_ppm(file_path: str) -> np.ndarray:
        try:
            with open(file_path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise IngestionError(file_path, f"cannot read: {e}") from e
        return ImageParser.decode_ppm(raw, file_path)

    @staticmethod
    def decode_ppm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
        if raw[:2] != PPM_MAGIC:
            raise IngestionError(source, "not a P6 PPM file")
        pos = 2
        header = []
        while len(header) < 3:
            while pos < len(raw) and raw[pos:pos + 1] in (b" ", b"\t", b"\r", b"\n", b"#"):
                if raw[pos:pos + 1] == b"#":
                    end = raw.find(b"\n", pos)
                    pos = len(raw) if end < 0 else end + 1
                else:
                    pos += 1
            start = pos
            while pos < len(raw) and raw[pos:pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise IngestionError(source, "truncated or malformed PPM header")
            header.append(int(raw[start:pos]))
        width, height, maxval = header
        if width <= 0 or height <= 0:
            raise IngestionError(source, f"invalid PPM size {width}×{height}")
        if maxval != 255:
            raise IngestionError(source, f"only 8-bit PPM is supported (maxval {maxval})")
        if pos >= len(raw) or raw[pos] not in PPM_WHITESPACE:
            raise IngestionError(source, "truncated PPM header")
        pos += 1
        need = width * height * 3
        if len(raw) - pos < need:
            raise IngestionError(source, f"truncated PPM data ({len(raw) - pos} of {need} bytes)")
        return np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()

    @staticmethod
    def _read_pillow(file_path: str) -> np.ndarray:
        if Image is None:
            raise IngestionError(file_path, "PNG/JPEG decoding needs Pillow (pip install Pillow)")
        try:
            with Image.open(file_path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        except (OSError, ValueError) as e:
            raise IngestionError(file_path, f"cannot decode: {e}") from e


def encode_ppm(image: np.ndarray) -> bytes:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"encode_ppm expects uint8 H×W×3, got {arr.dtype} {arr.shape}")
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def write_ppm(file_path: str, image: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(file_path)), exist_ok=True)
    with open(file_path, "wb") as f:
        f.write(encode_ppm(image))


def _bilinear_axis(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centre source coordinates, clamped to the border."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a C×H×W float image."""
    C, H, W = image.shape
    if (H, W) == (out_h, out_w):
        return image.copy()
    y0, y1, wy = _bilinear_axis(H, out_h)
    x0, x1, wx = _bilinear_axis(W, out_w)
    wy = wy[None, :, None].astype(image.dtype)
    wx = wx[None, None, :].astype(image.dtype)
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def load_image(file_path: str, size: int) -> np.ndarray:
    """Decode, scale by 1/255 and resize to size×size. Returns float32 3×size×size in [0, 1]."""
    rgb = ImageParser.read_image(file_path)
    img = rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0)
    img = resize_bilinear(img, size, size)
    return np.clip(img, 0.0, 1.0).astype(np.float32, copy=False)
