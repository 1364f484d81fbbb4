"""
Evaluation of a trained model over one split of a manifest.

Writes into out_dir:
    metrics.csv    metric,class,value
    confusion.csv  class-name header row and column, cm[target][predicted]
    roc.csv        class,x,y   (x = FPR, y = TPR)
    pr.csv         class,x,y   (x = recall, y = precision)
    features.csv   sample_id,label,f0..f{D-1}   (post-GAP fused features)
    pca.csv        sample_id,label,pc1,pc2
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.core.config import RunConfig, from_dict
from src.core.errors import DimensionError
from src.evaluation.curves import CurveSet, roc_pr_curves
from src.evaluation.metrics import ConfusionMatrix, MetricsReport, confusion, metrics_from_cm
from src.evaluation.pca import PCAProjection, pca_2d
from src.ingest.loader import ImageCache, batch_iterator
from src.ingest.manifest import DatasetManifest
from src.models.hybrid import HybridModel, build_model
from src.tensor.tensor import Tensor
from src.training.checkpoint import Checkpoint, load_checkpoint
from src.training.losses import softmax
from src.training.trainer import split_manifest

logger = logging.getLogger(__name__)

ARTIFACTS = ("metrics.csv", "confusion.csv", "roc.csv", "pr.csv", "features.csv", "pca.csv")


@dataclass
class Predictions:
    probs: np.ndarray  # N×K
    labels: np.ndarray  # N
    features: np.ndarray  # N×D
    sample_ids: List[str]

    @property
    def preds(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


@dataclass
class EvalResult:
    report: MetricsReport
    confusion: ConfusionMatrix
    curves: CurveSet
    predictions: Predictions
    pca: Optional[PCAProjection] = None
    out_dir: Optional[str] = None


def load_model(path: str) -> Tuple[HybridModel, RunConfig, Checkpoint]:
    """Rebuild the model a checkpoint was trained with and load its weights."""
    ckpt = load_checkpoint(path)
    cfg = from_dict(ckpt.config)
    model = build_model(cfg, ckpt.seed)
    model.load_registry(ckpt.model_state())
    model.eval()
    return model, cfg, ckpt


def predict_manifest(model: HybridModel, manifest: DatasetManifest, batch_size: int = 16,
                     workers: int = 0, cache: Optional[ImageCache] = None) -> Predictions:
    """Eval-mode forward in manifest order; no tape, no augmentation."""
    model.eval()
    probs, labels, feats = [], [], []
    for batch in batch_iterator(manifest, batch_size, model.input_size, shuffle=False, workers=workers, cache=cache):
        logits, f = model(Tensor(batch.images, dtype=model.dtype), return_features=True)
        probs.append(softmax(logits.data.astype(np.float64)))
        feats.append(f.data)
        labels.append(batch.labels)
    K = model.num_classes
    return Predictions(
        probs=np.concatenate(probs) if probs else np.zeros((0, K)),
        labels=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
        features=np.concatenate(feats) if feats else np.zeros((0, 0)),
        sample_ids=[e.path for e in manifest.entries],
    )


def evaluate(model: HybridModel, manifest: DatasetManifest, out_dir: Optional[str] = None,
             batch_size: int = 16, workers: int = 0) -> EvalResult:
    if len(manifest.labels) != model.num_classes:
        raise DimensionError(f"manifest has {len(manifest.labels)} classes, model predicts {model.num_classes}")
    preds = predict_manifest(model, manifest, batch_size, workers)
    names = manifest.labels.names
    cm = confusion(preds.preds, preds.labels, model.num_classes, names)
    report = metrics_from_cm(cm, ci_n=len(manifest))
    curves = roc_pr_curves(preds.probs, preds.labels, names)
    report.roc_auc, report.pr_auc = curves.roc_auc, curves.pr_auc
    report.class_roc_auc = {c.class_name: c.auc for c in curves.roc}
    report.class_pr_auc = {c.class_name: c.auc for c in curves.pr}
    report.flags.extend(curves.flags)

    projection = None
    if preds.features.shape[0] >= 3 and preds.features.shape[1] >= 2:
        projection = pca_2d(preds.features, preds.labels)

    result = EvalResult(report, cm, curves, preds, projection, out_dir)
    if out_dir:
        write_artifacts(result, out_dir)
    return result


def evaluate_checkpoint(path: str, manifest: DatasetManifest, split: str = "test",
                        out_dir: Optional[str] = None) -> EvalResult:
    """Re-derive the run's train/test split from the checkpoint and evaluate one side of it."""
    model, cfg, ckpt = load_model(path)
    if tuple(ckpt.labels) != tuple(manifest.labels.names):
        raise DimensionError(f"checkpoint classes {list(ckpt.labels)} do not match the manifest's "
                             f"{list(manifest.labels.names)}")
    part = split_manifest(manifest, cfg, ckpt.seed).subset(split)
    logger.info("evaluating %s on %d %s samples", path, len(part), split)
    return evaluate(model, part, out_dir, cfg.train.batch_size, cfg.data.workers)


# ── Artifacts ────────────────────────────────────────────────────────────

def _writer(path: str):
    f = open(path, "w", encoding="utf-8", newline="")
    return f, csv.writer(f, lineterminator="\n")


def write_artifacts(result: EvalResult, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    names = result.confusion.class_names
    p = result.predictions
    written = []

    path = os.path.join(out_dir, "metrics.csv")
    f, w = _writer(path)
    with f:
        w.writerow(["metric", "class", "value"])
        for metric, cls, value in result.report.rows():
            w.writerow([metric, cls, repr(float(value))])
    written.append(path)

    path = os.path.join(out_dir, "confusion.csv")
    f, w = _writer(path)
    with f:
        w.writerow(["target\\predicted", *names])
        for name, row in zip(names, result.confusion.counts):
            w.writerow([name, *(int(v) for v in row)])
    written.append(path)

    for kind, curves in (("roc", result.curves.roc), ("pr", result.curves.pr)):
        path = os.path.join(out_dir, f"{kind}.csv")
        f, w = _writer(path)
        with f:
            w.writerow(["class", "x", "y"])
            for c in curves:
                for x, y in zip(c.x, c.y):
                    w.writerow([c.class_name, repr(float(x)), repr(float(y))])
        written.append(path)

    path = os.path.join(out_dir, "features.csv")
    f, w = _writer(path)
    with f:
        D = p.features.shape[1] if p.features.ndim == 2 else 0
        w.writerow(["sample_id", "label", *(f"f{i}" for i in range(D))])
        for sid, label, row in zip(p.sample_ids, p.labels, p.features):
            w.writerow([sid, int(label), *(repr(float(v)) for v in row)])
    written.append(path)

    path = os.path.join(out_dir, "pca.csv")
    f, w = _writer(path)
    with f:
        w.writerow(["sample_id", "label", "pc1", "pc2"])
        if result.pca is not None:
            for sid, label, (a, b) in zip(p.sample_ids, p.labels, result.pca.coords):
                w.writerow([sid, int(label), repr(float(a)), repr(float(b))])
    written.append(path)

    logger.debug("wrote %d evaluation artifacts to %s", len(written), out_dir)
    return written
