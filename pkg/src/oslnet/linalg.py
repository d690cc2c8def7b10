"""Dense double-precision kernels shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Vectors and
batches are stored column-wise: a batch of ``n`` samples of width ``d`` is a
``d x n`` matrix.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable."""


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a 2-D float64 array; 1-D input becomes a column."""
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def softmax(logits) -> np.ndarray:
    """Column-wise softmax with max subtraction."""
    z = as_matrix(logits)
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = as_matrix(logits)
    shifted = z - z.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the column-wise softmax."""
    return probs * (grad_probs - (probs * grad_probs).sum(axis=0, keepdims=True))


def relu(x) -> np.ndarray:
    return np.maximum(as_matrix(x), 0.0)


def spectral_norm(a, iters: int = 1000, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest singular value of ``a`` by power iteration on ``a.T @ a``.

    Iteration stops once two successive estimates differ by less than
    ``tol`` (relative to the current estimate) or after ``iters`` rounds.
    The start vector is drawn from a generator seeded with ``seed``.
    """
    a = as_matrix(a)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    v = np.random.default_rng(seed).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # start vector landed in the null space; restart along a basis vector
            v = np.zeros_like(v)
            v[int(np.argmax(np.abs(gram).sum(axis=0)))] = 1.0
            continue
        new_est = float(v @ w)
        v = w / norm_w
        if abs(new_est - est) <= tol * max(new_est, 1.0):
            est = new_est
            break
        est = new_est
    # Rayleigh quotient on the converged vector
    est = float(v @ (gram @ v))
    return float(np.sqrt(max(est, 0.0)))
