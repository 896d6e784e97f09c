"""Dense numeric kernels used by training, prediction and relevance propagation.

Everything is float64 on plain numpy arrays: the networks here are small and
double precision keeps finite-difference and conservation checks sharp.
Vectors are 1-D arrays, matrices 2-D, data tensors 3-D, all row-major.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteInput, ShapeMismatch

# Probabilities are clipped at this floor before taking logs.
LOSS_CLIP = 1e-12

Vec = np.ndarray
Mat = np.ndarray
Tensor3 = np.ndarray


def as_f64(x) -> np.ndarray:
    """Coerce to a float64 array without copying when already one."""
    return np.asarray(x, dtype=np.float64)


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"{what} contains NaN or infinity")


def matvec(w: Mat, x: Vec) -> Vec:
    """Matrix-vector product w @ x with shape checking."""
    w = as_f64(w)
    x = as_f64(x)
    if w.ndim != 2 or x.ndim != 1:
        raise ShapeMismatch(f"matvec expects (n,d) and (d,), got {w.shape} and {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"matvec: {w.shape} incompatible with {x.shape}")
    return w @ x


def affine(w: Mat, x: Vec, b: Vec) -> Vec:
    """w @ x + b with shape checking."""
    b = as_f64(b)
    y = matvec(w, x)
    if b.shape != y.shape:
        raise ShapeMismatch(f"affine: bias {b.shape} does not match output {y.shape}")
    return y + b


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, overflow-safe for large |x|."""
    x = as_f64(x)
    _require_finite(x, "sigmoid input")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_(x) -> np.ndarray:
    """Elementwise hyperbolic tangent."""
    x = as_f64(x)
    _require_finite(x, "tanh input")
    return np.tanh(x)


def softmax(x, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis``, computed with max subtraction for stability."""
    x = as_f64(x)
    _require_finite(x, "softmax input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(p: Vec, y_index: int) -> float:
    """Negative log probability of the true class, clipped at LOSS_CLIP.

    ``p`` must be a probability vector (sums to one within 1e-9).
    """
    p = as_f64(p)
    if p.ndim != 1:
        raise ShapeMismatch(f"cross_entropy expects a vector, got shape {p.shape}")
    if not 0 <= y_index < p.shape[0]:
        raise ShapeMismatch(f"class index {y_index} out of range for {p.shape[0]} classes")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return float(-np.log(max(float(p[y_index]), LOSS_CLIP)))
