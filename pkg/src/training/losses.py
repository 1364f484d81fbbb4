import numpy as np

from src.core.errors import ContractError, DimensionError
from src.tensor.tensor import Tensor, record


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of −log softmax(logits)[label], via log-sum-exp."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects B×K logits, got {logits.shape}")
    B, K = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != B:
        raise DimensionError(f"cross_entropy: {B} logits rows but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ContractError(f"labels must be in [0, {K}), got range [{y.min()}, {y.max()}]")
    logp = log_softmax(logits.data)
    rows = np.arange(B)
    out = Tensor.wrap(np.asarray(-logp[rows, y].mean(), dtype=logits.dtype))

    def backward(g):
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (grad * (g / B),)

    return record("cross_entropy", (logits,), out, backward)
