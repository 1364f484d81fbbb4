"""
HDSW tensor container and the training checkpoint stored in it.

Container layout (all integers little-endian):

    "HDSW" | u32 version | u64 section count
    per section:
        u32 name length | UTF-8 name | u8 dtype code | u32 rank | u64 extent × rank | payload
    u32 CRC32 of every preceding byte

dtype codes: 1 float32, 2 float64, 3 int64, 4 uint8 (used for the JSON
metadata section). Sections are written in the order given, so identical
content gives byte-identical files.
"""

import json
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from src.core.errors import CheckpointError, ChecksumError, VersionMismatchError
from src.training.optim import OptimizerState

MAGIC = b"HDSW"
FORMAT_VERSION = 1
META_SECTION = "__meta__"

DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3, np.dtype("u1"): 4}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}

_HEADER = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")


# ── Container ────────────────────────────────────────────────────────────

def encode_container(sections: Mapping[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    parts = [_HEADER.pack(MAGIC, version, len(sections))]
    for name, arr in sections.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = DTYPE_CODES.get(np.dtype(dt))
        if code is None:
            raise CheckpointError(f"section '{name}': unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_container(raw: bytes, source: str = "<bytes>") -> "OrderedDict[str, np.ndarray]":
    if len(raw) < _HEADER.size + _CRC.size:
        raise ChecksumError(f"{source}: truncated container ({len(raw)} bytes)")
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not an HDSW container")
    body, (stored,) = raw[:-_CRC.size], _CRC.unpack_from(raw, len(raw) - _CRC.size)
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{source}: checksum mismatch (truncated or corrupted file)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{source}: container version {version}, this build reads {FORMAT_VERSION}")

    sections: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = _HEADER.size
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BI", body, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            dt = CODE_DTYPES.get(code)
            if dt is None:
                raise CheckpointError(f"{source}: section '{name}' has unknown dtype code {code}")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise ChecksumError(f"{source}: section '{name}' runs past the end of the file")
            sections[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as e:
        raise ChecksumError(f"{source}: malformed container: {e}") from e
    if pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - pos} trailing bytes after the last section")
    return sections


def save_tensors(path: str, sections: Mapping[str, np.ndarray]) -> None:
    """Write atomically (temp file + rename)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(encode_container(sections))
    os.replace(tmp, path)


def load_tensors(path: str) -> "OrderedDict[str, np.ndarray]":
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read: {e}") from e
    return decode_container(raw, path)


# ── Checkpoint ───────────────────────────────────────────────────────────

@dataclass
class Checkpoint:
    config: Dict[str, Any]
    labels: List[str]
    params: "OrderedDict[str, np.ndarray]"
    buffers: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    epoch: int = 0
    seed: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def model_state(self) -> Dict[str, np.ndarray]:
        """Keys in the form Module.load_registry() expects."""
        state = OrderedDict((f"param/{k}", v) for k, v in self.params.items())
        state.update((f"buffer/{k}", v) for k, v in self.buffers.items())
        return state


def checkpoint_sections(ckpt: Checkpoint) -> "OrderedDict[str, np.ndarray]":
    meta = {
        "config": ckpt.config,
        "labels": list(ckpt.labels),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "history": ckpt.history,
        "adam_t": ckpt.optimizer.t,
    }
    sections: "OrderedDict[str, np.ndarray]" = OrderedDict()
    sections[META_SECTION] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    for prefix, store in (("param/", ckpt.params), ("buffer/", ckpt.buffers),
                          ("adam.m/", ckpt.optimizer.m), ("adam.v/", ckpt.optimizer.v)):
        for name, arr in store.items():
            sections[prefix + name] = arr
    return sections


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    save_tensors(path, checkpoint_sections(ckpt))
    return path


def load_checkpoint(path: str) -> Checkpoint:
    sections = load_tensors(path)
    if META_SECTION not in sections:
        raise CheckpointError(f"{path}: missing {META_SECTION} section")
    try:
        meta = json.loads(sections.pop(META_SECTION).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable metadata: {e}") from e

    stores: Dict[str, "OrderedDict[str, np.ndarray]"] = {
        "param/": OrderedDict(), "buffer/": OrderedDict(), "adam.m/": OrderedDict(), "adam.v/": OrderedDict(),
    }
    for key, arr in sections.items():
        for prefix, store in stores.items():
            if key.startswith(prefix):
                store[key[len(prefix):]] = arr
                break
        else:
            raise CheckpointError(f"{path}: unexpected section '{key}'")

    return Checkpoint(
        config=meta["config"],
        labels=list(meta["labels"]),
        params=stores["param/"],
        buffers=stores["buffer/"],
        optimizer=OptimizerState(stores["adam.m/"], stores["adam.v/"], int(meta.get("adam_t", 0))),
        epoch=int(meta["epoch"]),
        seed=int(meta["seed"]),
        history=list(meta.get("history", [])),
    )
