"""
Trainer: the cross-entropy training loop.

Everything random is derived from the run seed:
  split           stratified_split(manifest, test_fraction, seed)
  weights         build_model(cfg, seed)
  epoch order     (seed, epoch)
  augmentation    (seed, epoch, entry index, aug_seed)
  dropout         (seed, epoch, step, 0xD0)
so a run resumed from a checkpoint continues exactly as the uninterrupted run.

Artifacts in out_dir: resolved_config.json, train_log.csv,
checkpoint_XXXX.hdsw every `checkpoint_every` epochs and final.hdsw.
"""

import copy
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from src.core.config import RunConfig, from_dict
from src.core.errors import ConfigError, NumericError, TrainingAborted
from src.ingest.augment import AugmentationSpec
from src.ingest.loader import ImageCache, batch_iterator
from src.ingest.manifest import DatasetManifest, minority_oversample, stratified_split
from src.models.hybrid import HybridModel, build_model
from src.tensor.tensor import Tape, Tensor, backward
from src.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.training.losses import cross_entropy
from src.training.optim import Adam, LrSchedule, lr_at

logger = logging.getLogger(__name__)

DROPOUT_STREAM = 0xD0
LOG_FILENAME = "train_log.csv"
RESOLVED_CONFIG_FILENAME = "resolved_config.json"
FINAL_CHECKPOINT = "final.hdsw"


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: Optional[float] = None
    seconds: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"epoch": self.epoch, "lr": self.lr, "train_loss": self.train_loss,
                "train_acc": self.train_acc, "test_acc": self.test_acc}


@dataclass
class TrainResult:
    model: HybridModel
    history: List[EpochRecord] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    out_dir: str = ""

    @property
    def losses(self) -> List[float]:
        return [r.train_loss for r in self.history]


def split_manifest(manifest: DatasetManifest, cfg: RunConfig, seed: int) -> DatasetManifest:
    """The train/test tagging every command agrees on for a given (config, seed)."""
    return stratified_split(manifest, cfg.data.test_fraction, seed)


def dropout_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, step, DROPOUT_STREAM])


def accuracy_on(model: HybridModel, manifest: DatasetManifest, cfg: RunConfig,
                cache: Optional[ImageCache] = None) -> float:
    """Eval-mode accuracy over a manifest (no tape, no augmentation)."""
    if len(manifest) == 0:
        return 0.0
    was_training = model.training
    model.eval()
    correct = 0
    try:
        for batch in batch_iterator(manifest, cfg.train.batch_size, cfg.data.input_size, shuffle=False,
                                    workers=cfg.data.workers, cache=cache):
            logits = model(Tensor(batch.images, dtype=model.dtype))
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
    finally:
        model.train(was_training)
    return correct / len(manifest)


class Trainer:
    def __init__(self, cfg: RunConfig, manifest: DatasetManifest, seed: int = 0, out_dir: Optional[str] = None):
        self.cfg = copy.deepcopy(cfg)
        self.cfg.data.seed = seed
        self.seed = seed
        self.out_dir = out_dir or self.cfg.train.out_dir
        self.split = split_manifest(manifest, self.cfg, seed)
        self.train_set = self.split.subset("train")
        if len(self.train_set) == 0:
            raise ConfigError("train split is empty", "data.manifest")
        if self.cfg.data.oversample:
            self.train_set = minority_oversample(self.train_set, self.cfg.data.balance_factor)
        self.test_set = self.split.subset("test")

        self.model = build_model(self.cfg, seed)
        self.optimizer = Adam.from_config(self.model.named_parameters(), self.cfg.train)
        self.schedule = LrSchedule.from_config(self.cfg.train)
        self.spec = AugmentationSpec.from_config(self.cfg.data.augmentation)
        self.cache = ImageCache(self.cfg.data.cache_items)
        self.history: List[EpochRecord] = []
        self.start_epoch = 0
        self.last_good: Optional[str] = None

    # ── Persistence ──────────────────────────────────────────────────────
    def checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            config=self.cfg.to_dict(),
            labels=list(self.split.labels.names),
            params={k: t.data for k, t in self.model.named_parameters().items()},
            buffers={k: t.data for k, t in self.model.named_buffers().items()},
            optimizer=self.optimizer.state,
            epoch=epoch,
            seed=self.seed,
            history=[r.to_dict() for r in self.history],
        )

    def save(self, epoch: int, name: str) -> str:
        path = save_checkpoint(self.checkpoint(epoch), os.path.join(self.out_dir, name))
        self.last_good = path
        logger.debug("saved checkpoint %s", path)
        return path

    def restore(self, ckpt: Checkpoint) -> None:
        self.model.load_registry(ckpt.model_state())
        self.optimizer.load_state(ckpt.optimizer)
        self.history = [EpochRecord(int(h["epoch"]), h["lr"], h["train_loss"], h["train_acc"], h.get("test_acc"))
                        for h in ckpt.history]
        self.start_epoch = ckpt.epoch

    @classmethod
    def resume(cls, path: str, manifest: DatasetManifest, out_dir: Optional[str] = None,
               epochs: Optional[int] = None) -> "Trainer":
        ckpt = load_checkpoint(path)
        cfg = from_dict(ckpt.config)
        if epochs is not None:
            cfg.train.epochs = epochs
        trainer = cls(cfg, manifest, seed=ckpt.seed, out_dir=out_dir)
        trainer.restore(ckpt)
        trainer.last_good = path
        return trainer

    def write_log(self) -> str:
        path = os.path.join(self.out_dir, LOG_FILENAME)
        with_test = self.cfg.train.eval_every > 0
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "train_acc"] + (["test_acc"] if with_test else []))
            for r in self.history:
                row = [r.epoch, repr(r.lr), f"{r.train_loss:.6f}", f"{r.train_acc:.6f}"]
                if with_test:
                    row.append("" if r.test_acc is None else f"{r.test_acc:.6f}")
                w.writerow(row)
        return path

    # ── Loop ─────────────────────────────────────────────────────────────
    def train_epoch(self, epoch: int) -> EpochRecord:
        t0 = time.perf_counter()
        lr = lr_at(epoch, self.schedule)
        self.model.train()
        params = self.model.named_parameters()
        total_loss, correct, seen = 0.0, 0, 0
        batches = batch_iterator(self.train_set, self.cfg.train.batch_size, self.cfg.data.input_size,
                                 seed=self.seed, epoch=epoch, spec=self.spec,
                                 workers=self.cfg.data.workers, cache=self.cache)
        show = self.cfg.train.progress and sys.stderr.isatty()
        for step, batch in enumerate(tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not show)):
            x = Tensor(batch.images, dtype=self.model.dtype)
            with Tape() as tape:
                logits = self.model(x, rng=dropout_rng(self.seed, epoch, step))
                loss = cross_entropy(logits, batch.labels)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingAborted(f"non-finite loss {value} at epoch {epoch}, step {step}", self.last_good)
            grads = backward(tape, loss)
            named = {name: grads[p.node_id].data for name, p in params.items() if tape.owns(p)}
            try:
                self.optimizer.step(named, lr)
            except NumericError as e:
                raise TrainingAborted(str(e), self.last_good) from e
            n = len(batch)
            total_loss += value * n
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            seen += n
        return EpochRecord(epoch, lr, total_loss / seen, correct / seen, seconds=time.perf_counter() - t0)

    def fit(self, epochs: Optional[int] = None) -> TrainResult:
        epochs = self.cfg.train.epochs if epochs is None else epochs
        os.makedirs(self.out_dir, exist_ok=True)
        self.cfg.save_resolved(os.path.join(self.out_dir, RESOLVED_CONFIG_FILENAME))
        every, eval_every = self.cfg.train.checkpoint_every, self.cfg.train.eval_every
        logger.info("training %s/%s for epochs %d..%d on %d samples (seed %d)", self.cfg.model.preset,
                    self.cfg.model.variant, self.start_epoch, epochs - 1, len(self.train_set), self.seed)

        for epoch in range(self.start_epoch, epochs):
            record = self.train_epoch(epoch)
            if eval_every and (epoch + 1) % eval_every == 0 and len(self.test_set):
                record.test_acc = accuracy_on(self.model, self.test_set, self.cfg, self.cache)
            self.history.append(record)
            self.write_log()
            logger.info("epoch %d  lr %.3g  loss %.4f  acc %.4f%s  (%.1fs)", epoch, record.lr, record.train_loss,
                        record.train_acc, "" if record.test_acc is None else f"  test {record.test_acc:.4f}",
                        record.seconds)
            if every and (epoch + 1) % every == 0:
                self.save(epoch + 1, f"checkpoint_{epoch + 1:04d}.hdsw")

        final = self.save(max(epochs, self.start_epoch), FINAL_CHECKPOINT)
        self.write_log()
        return TrainResult(self.model, list(self.history), final, self.out_dir)


def train(cfg: RunConfig, manifest: DatasetManifest, epochs: Optional[int] = None, seed: int = 0,
          out_dir: Optional[str] = None) -> TrainResult:
    return Trainer(cfg, manifest, seed=seed, out_dir=out_dir).fit(epochs)
