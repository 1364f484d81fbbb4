import os
import sys
import tempfile

import numpy as np

# Ensure imports work from project root
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.core.config import desk_preset
from src.evaluation.metrics import metrics_from_cm
from src.evaluation.reference import reference_matrix
from src.ingest.manifest import read_manifest, stratified_split
from src.ingest.synthetic import generate_synthetic
from src.models.hybrid import build_model
from src.tensor import Tape, Tensor, backward, ops


def run_tests() -> bool:
    print("Starting Ecosystem Component Tests...\n")

    try:
        print("1. Testing tape autodiff...")
        x = Tensor(np.array([3.0]), requires_grad=True, dtype="float64")
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        g = backward(tape, loss)[x.node_id].data
        if not np.allclose(g, [6.0]):
            raise AssertionError(f"d(x²)/dx at 3 should be 6, got {g}")
        print("   ✅ Gradient of x² at 3 is 6.")

        print("\n2. Testing desk model forward...")
        cfg = desk_preset()
        model = build_model(cfg, seed=0).eval()
        logits = model(Tensor(np.zeros((1, 3, 64, 64)), dtype="float32"))
        if logits.shape != (1, cfg.model.num_classes):
            raise AssertionError(f"expected 1×{cfg.model.num_classes} logits, got {logits.shape}")
        print(f"   ✅ Desk model built ({model.parameter_count():,} parameters), logits {logits.shape}.")

        print("\n3. Testing synthetic data + split...")
        with tempfile.TemporaryDirectory() as tmp:
            manifest = read_manifest(generate_synthetic(tmp, per_class=4, seed=0))
            split = stratified_split(manifest, 0.25, seed=0)
            n_test = len(split.subset("test"))
            if len(manifest) != 20 or n_test != 5:
                raise AssertionError(f"expected 20 entries / 5 test, got {len(manifest)} / {n_test}")
        print("   ✅ 20 PPM images written, 5 held out.")

        print("\n4. Testing metrics against the published matrix...")
        report = metrics_from_cm(reference_matrix("ca_dense_swinv2"))
        if abs(report.accuracy - 6145 / 6236) > 1e-12:
            raise AssertionError(f"accuracy {report.accuracy} != 6145/6236")
        print(f"   ✅ {report.summary()}")

        print("\n🎉 All components successfully loaded and tested without errors!")
        return True

    except Exception as e:
        print(f"\n❌ Test Failed: {str(e)}")
        return False


def test_ecosystem():
    assert run_tests()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
