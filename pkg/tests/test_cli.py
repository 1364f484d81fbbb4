import os

import numpy as np
import pytest
import yaml

from src.cli.app import CLIApp
from src.ingest.manifest import CLASS_NAMES
from src.training.checkpoint import Checkpoint, save_checkpoint
from tests.conftest import TINY


@pytest.fixture
def app(tmp_path, monkeypatch):
    # keep a ./config.yaml in the working directory from leaking into the runs
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("HDSW_SEED", raising=False)
    return CLIApp()


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY), encoding="utf-8")
    return str(path)


def manifest_path(synthetic_dir):
    return os.path.join(synthetic_dir, "manifest.tsv")


def test_gen_synthetic(app, tmp_path, capsys):
    out = tmp_path / "synth"
    assert app.run(["gen-synthetic", "--out", str(out), "--per-class", "2", "--size", "16"]) == 0
    assert (out / "manifest.tsv").exists()
    assert len((out / "manifest.tsv").read_text(encoding="utf-8").splitlines()) == 10
    assert "Wrote" in capsys.readouterr().out


def test_train_then_eval(app, tmp_path, tiny_yaml, synthetic_dir):
    run_dir = tmp_path / "run"
    code = app.run(["train", "--config", tiny_yaml, "--manifest", manifest_path(synthetic_dir),
                    "--epochs", "1", "--seed", "0", "--out", str(run_dir)])
    assert code == 0
    ckpt = run_dir / "final.hdsw"
    assert ckpt.exists() and (run_dir / "train_log.csv").exists()

    eval_dir = tmp_path / "eval"
    code = app.run(["eval", "--checkpoint", str(ckpt), "--manifest", manifest_path(synthetic_dir),
                    "--split", "test", "--out", str(eval_dir)])
    assert code == 0
    assert {"metrics.csv", "confusion.csv", "roc.csv", "pr.csv", "features.csv", "pca.csv"} <= set(os.listdir(eval_dir))


def test_train_resume(app, tmp_path, tiny_yaml, synthetic_dir):
    run_dir = tmp_path / "run"
    assert app.run(["train", "--config", tiny_yaml, "--manifest", manifest_path(synthetic_dir),
                    "--epochs", "1", "--out", str(run_dir)]) == 0
    assert app.run(["train", "--config", tiny_yaml, "--manifest", manifest_path(synthetic_dir),
                    "--resume", str(run_dir / "final.hdsw"), "--epochs", "2", "--out", str(run_dir)]) == 0
    lines = (run_dir / "train_log.csv").read_text(encoding="utf-8").splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]


def zero_classifier_checkpoint(path, tiny_config):
    from src.models.hybrid import build_model

    model = build_model(tiny_config, seed=0)
    for t in (model.head.classifier.weight, model.head.classifier.bias):
        t.assign(np.zeros(t.shape))
    ckpt = Checkpoint(
        config=tiny_config.to_dict(),
        labels=list(CLASS_NAMES),
        params={k: t.data for k, t in model.named_parameters().items()},
        buffers={k: t.data for k, t in model.named_buffers().items()},
        seed=0,
    )
    return save_checkpoint(ckpt, str(path))


def test_predict_line_format(app, tmp_path, tiny_config, synthetic_manifest, capsys):
    ckpt = zero_classifier_checkpoint(tmp_path / "zero.hdsw", tiny_config)
    image = synthetic_manifest.resolve(synthetic_manifest.entries[0])
    capsys.readouterr()
    assert app.run(["predict", "--checkpoint", ckpt, "--image", image]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    label, probs = line.split("\t")
    assert label == "Bacterial Blight"
    assert probs == ",".join(["0.200000"] * 5)


def test_inspect_shapes_only(app, tiny_yaml, capsys):
    assert app.run(["inspect", "--config", tiny_yaml, "--variant", "all", "--shapes-only"]) == 0
    out = capsys.readouterr().out
    assert "Shape trace" in out
    for variant in ("customized_swinv2", "ca_swinv2", "dense_swinv2", "ca_dense_swinv2"):
        assert variant in out


def test_inspect_counts_macs(app, tiny_yaml, capsys):
    assert app.run(["inspect", "--config", tiny_yaml]) == 0
    assert "MACs" in capsys.readouterr().out


def test_bad_config_exits_2(app, tmp_path, synthetic_dir):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  learning_rate: 0.1\n", encoding="utf-8")
    assert app.run(["train", "--config", str(bad), "--manifest", manifest_path(synthetic_dir)]) == 2


def test_unknown_inspect_variant_exits_2(app, tiny_yaml):
    assert app.run(["inspect", "--config", tiny_yaml, "--variant", "resnet", "--shapes-only"]) == 2


def test_missing_manifest_exits_2(app, tiny_yaml):
    assert app.run(["train", "--config", tiny_yaml]) == 2


def test_missing_image_exits_4(app, tmp_path, tiny_config, capsys):
    ckpt = zero_classifier_checkpoint(tmp_path / "zero.hdsw", tiny_config)
    assert app.run(["predict", "--checkpoint", ckpt, "--image", str(tmp_path / "nope.ppm")]) == 4
    assert "IngestionError" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_4(app, tmp_path, synthetic_dir):
    broken = tmp_path / "broken.hdsw"
    broken.write_bytes(b"HDSW" + bytes(40))
    assert app.run(["eval", "--checkpoint", str(broken), "--manifest", manifest_path(synthetic_dir),
                    "--out", str(tmp_path / "e")]) == 4


def test_class_mismatch_exits_3(app, tmp_path, tiny_config, synthetic_dir):
    ckpt_path = zero_classifier_checkpoint(tmp_path / "zero.hdsw", tiny_config)
    from src.training.checkpoint import load_checkpoint

    ckpt = load_checkpoint(ckpt_path)
    ckpt.labels = ["a", "b", "c", "d", "e"]
    save_checkpoint(ckpt, ckpt_path)
    assert app.run(["eval", "--checkpoint", ckpt_path, "--manifest", manifest_path(synthetic_dir),
                    "--out", str(tmp_path / "e")]) == 3
