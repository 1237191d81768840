import numpy as np

from .layers import softmax_fn
from .ops import ShapeError


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), (2.0 / n) * diff


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    p = softmax_fn(logits)
    B = logits.shape[0]
    rows = np.arange(B)
    loss = -np.mean(np.log(np.maximum(p[rows, labels], 1e-12)))
    d = p.copy()
    d[rows, labels] -= 1.0
    return float(loss), d / B
