import copy
import math
import os
import struct

import numpy as np
import pytest

from src.core.config import from_dict
from src.core.errors import CheckpointError, ChecksumError, ContractError, TrainingAborted, VersionMismatchError
from src.evaluation.evaluate import evaluate_checkpoint
from src.tensor import Tensor, grad_check
from src.training.checkpoint import (
    DTYPE_CODES,
    META_SECTION,
    Checkpoint,
    encode_container,
    load_checkpoint,
    load_tensors,
    save_checkpoint,
    save_tensors,
)
from src.training.losses import cross_entropy, softmax
from src.training.optim import Adam, LrSchedule, OptimizerState, adam_step, lr_at
from src.training.trainer import (
    FINAL_CHECKPOINT,
    LOG_FILENAME,
    RESOLVED_CONFIG_FILENAME,
    Trainer,
    train,
)
from tests.conftest import TINY


# ── Schedule, loss, optimizer ────────────────────────────────────────────

def test_step_schedule():
    s = LrSchedule()
    assert lr_at(0, s) == 1e-3
    assert lr_at(19, s) == 1e-3
    assert lr_at(20, s) == pytest.approx(1.5e-4, rel=1e-12)
    assert lr_at(40, s) == pytest.approx(2.25e-5, rel=1e-12)
    with pytest.raises(ContractError):
        lr_at(-1, s)


def test_cross_entropy_of_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((3, 5)), dtype="float64"), [0, 2, 4])
    assert abs(loss.item() - math.log(5)) < 1e-9


def test_cross_entropy_is_stable_for_large_logits():
    logits = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]), dtype="float64")
    assert cross_entropy(logits, [0, 1]).item() == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(softmax(logits.data).sum(axis=1), 1.0)


def test_cross_entropy_gradient(rng):
    logits = Tensor(rng.standard_normal((4, 5)), dtype="float64")
    report = grad_check(lambda t: cross_entropy(t, [1, 0, 4, 4]), logits)
    assert report.max_rel_error < 1e-6


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ContractError):
        cross_entropy(Tensor(np.zeros((2, 3)), dtype="float64"), [0, 3])


def test_first_adam_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), dtype="float64")
    state = adam_step({"p": p}, {"p": np.array([0.5, -3.0])}, OptimizerState(), lr=0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)
    assert state.t == 1


def test_adam_weight_decay_is_decoupled():
    p = Tensor(np.array([1.0]), dtype="float64")
    adam_step({"p": p}, {"p": np.array([2.0])}, OptimizerState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(p.data, [0.9 * (1 - 0.05)], atol=1e-7)


def test_adam_treats_missing_gradients_as_zero():
    p, q = Tensor(np.ones(2), dtype="float64"), Tensor(np.ones(2), dtype="float64")
    opt = Adam({"p": p, "q": q})
    opt.step({"p": np.ones(2)}, lr=0.1)
    np.testing.assert_array_equal(q.data, [1.0, 1.0])
    assert opt.state.t == 1 and set(opt.state.m) == {"p", "q"}


# ── Checkpoints ──────────────────────────────────────────────────────────

def make_checkpoint(model, cfg):
    return Checkpoint(
        config=cfg.to_dict(),
        labels=["a", "b", "c", "d", "e"],
        params={k: t.data for k, t in model.named_parameters().items()},
        buffers={k: t.data for k, t in model.named_buffers().items()},
        optimizer=OptimizerState({"head.classifier.bias": np.arange(5, dtype=np.float32)},
                                 {"head.classifier.bias": np.ones(5, dtype=np.float32)}, 7),
        epoch=3,
        seed=11,
        history=[{"epoch": 0, "lr": 0.001, "train_loss": 1.5, "train_acc": 0.2, "test_acc": None}],
    )


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_model, tiny_config):
    ckpt = make_checkpoint(tiny_model, tiny_config)
    path = save_checkpoint(ckpt, str(tmp_path / "a.hdsw"))
    back = load_checkpoint(path)
    assert back.config == ckpt.config and back.labels == ckpt.labels
    assert (back.epoch, back.seed, back.optimizer.t) == (3, 11, 7)
    assert back.history == ckpt.history
    assert list(back.params) == list(ckpt.params)
    for k, v in ckpt.params.items():
        assert back.params[k].dtype == v.dtype
        np.testing.assert_array_equal(back.params[k], v)
    np.testing.assert_array_equal(back.optimizer.m["head.classifier.bias"], np.arange(5))

    again = save_checkpoint(back, str(tmp_path / "b.hdsw"))
    with open(path, "rb") as f1, open(again, "rb") as f2:
        assert f1.read() == f2.read()


def test_checkpoint_restores_a_fresh_model(tmp_path, tiny_config, tiny_model):
    from src.models.hybrid import build_model

    path = save_checkpoint(make_checkpoint(tiny_model, tiny_config), str(tmp_path / "m.hdsw"))
    other = build_model(tiny_config, seed=99)
    other.load_registry(load_checkpoint(path).model_state())
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32)), dtype="float32")
    np.testing.assert_array_equal(other.eval()(x).data, tiny_model.eval()(x).data)


def test_truncated_checkpoint(tmp_path):
    path = str(tmp_path / "t.hdsw")
    save_tensors(path, {"w": np.ones((3, 3), dtype=np.float32)})
    raw = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(raw[:-7])
    with pytest.raises(ChecksumError):
        load_tensors(path)


def test_flipped_byte_fails_the_checksum(tmp_path):
    path = str(tmp_path / "c.hdsw")
    save_tensors(path, {"w": np.arange(4, dtype=np.float64)})
    raw = bytearray(open(path, "rb").read())
    raw[30] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(ChecksumError):
        load_tensors(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.hdsw"
    path.write_bytes(encode_container({"w": np.zeros(2, dtype=np.float32)}, version=2))
    with pytest.raises(VersionMismatchError):
        load_tensors(str(path))


def test_metadata_travels_as_a_uint8_section(tmp_path, tiny_model, tiny_config):
    path = save_checkpoint(make_checkpoint(tiny_model, tiny_config), str(tmp_path / "m.hdsw"))
    raw = open(path, "rb").read()
    name_len = struct.unpack_from("<I", raw, 16)[0]
    assert raw[20:20 + name_len] == META_SECTION.encode("utf-8")
    assert raw[20 + name_len] == DTYPE_CODES[np.dtype("u1")] == 4
    assert sorted(DTYPE_CODES.values()) == [1, 2, 3, 4]


def test_not_a_container(tmp_path):
    path = tmp_path / "x.hdsw"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        load_tensors(str(path))


# ── Training runs ────────────────────────────────────────────────────────

def tiny_config_with(**train_keys):
    raw = copy.deepcopy(TINY)
    raw["train"].update(train_keys)
    return from_dict(raw)


def test_fixed_seed_runs_are_identical(tmp_path, tiny_config, synthetic_manifest):
    a = train(tiny_config, synthetic_manifest, epochs=2, seed=0, out_dir=str(tmp_path / "a"))
    b = train(tiny_config, synthetic_manifest, epochs=2, seed=0, out_dir=str(tmp_path / "b"))
    c = train(tiny_config, synthetic_manifest, epochs=2, seed=1, out_dir=str(tmp_path / "c"))
    assert a.losses == b.losses
    assert a.losses != c.losses
    assert all(np.isfinite(a.losses))


def test_resumed_run_matches_uninterrupted_run(tmp_path, tiny_config, synthetic_manifest):
    full = train(tiny_config, synthetic_manifest, epochs=2, seed=0, out_dir=str(tmp_path / "full"))
    half = train(tiny_config, synthetic_manifest, epochs=1, seed=0, out_dir=str(tmp_path / "half"))
    resumed = Trainer.resume(half.checkpoint_path, synthetic_manifest, out_dir=str(tmp_path / "resumed"),
                             epochs=2).fit()
    assert resumed.losses == full.losses
    for name, p in full.model.named_parameters().items():
        np.testing.assert_array_equal(resumed.model.named_parameters()[name].data, p.data)


def test_run_artifacts(tmp_path, synthetic_manifest):
    cfg = tiny_config_with(eval_every=1)
    out = tmp_path / "run"
    result = train(cfg, synthetic_manifest, epochs=2, seed=0, out_dir=str(out))
    names = set(os.listdir(out))
    assert {RESOLVED_CONFIG_FILENAME, LOG_FILENAME, FINAL_CHECKPOINT,
            "checkpoint_0001.hdsw", "checkpoint_0002.hdsw"} <= names
    lines = (out / LOG_FILENAME).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,lr,train_loss,train_acc,test_acc"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]
    assert all(r.test_acc is not None for r in result.history)
    final = load_checkpoint(result.checkpoint_path)
    assert final.epoch == 2 and final.seed == 0 and len(final.history) == 2


def test_log_without_evaluation_has_four_columns(tmp_path, tiny_config, synthetic_manifest):
    out = tmp_path / "run"
    train(tiny_config, synthetic_manifest, epochs=1, out_dir=str(out))
    assert (out / LOG_FILENAME).read_text(encoding="utf-8").splitlines()[0] == "epoch,lr,train_loss,train_acc"


def test_trainer_holds_out_the_stratified_split(tiny_config, synthetic_manifest, tmp_path):
    trainer = Trainer(tiny_config, synthetic_manifest, seed=0, out_dir=str(tmp_path))
    assert len(trainer.train_set) == 40 and len(trainer.test_set) == 10
    assert not {e.path for e in trainer.train_set.entries} & {e.path for e in trainer.test_set.entries}


def test_trainer_cache_is_capped_by_config(synthetic_manifest, tmp_path):
    cfg = tiny_config_with()
    cfg.data.cache_items = 8
    trainer = Trainer(cfg, synthetic_manifest, seed=0, out_dir=str(tmp_path))
    trainer.fit(1)
    assert trainer.cache.max_items == 8 and len(trainer.cache) == 8
    assert trainer.cache.evictions > 0


def test_non_finite_loss_aborts(tmp_path, tiny_config, synthetic_manifest):
    trainer = Trainer(tiny_config, synthetic_manifest, seed=0, out_dir=str(tmp_path))
    bias = trainer.model.head.classifier.bias
    bias.assign(np.full(bias.shape, np.nan))
    with pytest.raises(TrainingAborted) as err:
        trainer.fit(1)
    assert err.value.last_good is None


def test_abort_names_the_last_good_checkpoint(tmp_path, tiny_config, synthetic_manifest):
    half = train(tiny_config, synthetic_manifest, epochs=1, out_dir=str(tmp_path / "half"))
    trainer = Trainer.resume(half.checkpoint_path, synthetic_manifest, out_dir=str(tmp_path / "more"), epochs=2)
    bias = trainer.model.head.classifier.bias
    bias.assign(np.full(bias.shape, np.inf))
    with pytest.raises(TrainingAborted) as err:
        trainer.fit()
    assert err.value.last_good == half.checkpoint_path


@pytest.mark.slow
def test_desk_model_overfits_fifty_images(tmp_path, synthetic_manifest):
    # desk defaults: dropout 0.3, lr ×0.15 every 20 epochs, weight decay 0.04, batch 16
    cfg = from_dict({"train": {"epochs": 200, "checkpoint_every": 0, "progress": False}})
    assert cfg.model.fusion.dropout == 0.3 and cfg.train.lr_decay_factor == 0.15
    result = train(cfg, synthetic_manifest, seed=0, out_dir=str(tmp_path / "run"))
    assert result.history[-1].train_acc >= 0.99

    evaluated = evaluate_checkpoint(result.checkpoint_path, synthetic_manifest, "train", str(tmp_path / "eval"))
    assert evaluated.confusion.total == 40
    assert evaluated.report.accuracy >= 0.99
    assert evaluated.report.accuracy == result.history[-1].train_acc
