"""Classification losses with gradients with respect to the logits.

Every loss takes a ``k x n`` probability matrix (softmax of the logits) and a
length-``n`` integer label vector and returns the batch-mean loss together
with ``dL/dlogits``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix

LOSS_NAMES = ("cross_entropy", "focal", "center", "truncated_lq", "large_margin")

_TINY = np.finfo(np.float64).tiny


class LabelError(ValueError):
    """Label outside ``[0, k)``."""


@dataclass(frozen=True)
class LossKind:
    """A loss variant and its hyperparameters.

    ``lam`` is the center-loss weight; ``lam_anneal`` the initial blending
    weight of the large-margin target logit.
    """

    name: str = "cross_entropy"
    gamma: float = 0.0
    lam: float = 1e-10
    alpha_center: float = 0.5
    q: float = 0.5
    k_thresh: float = 0.1
    m: int = 2
    lam_anneal: float = 100.0
    lam_decay: float = 0.99
    lam_floor: float = 0.1

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {LOSS_NAMES}")
        if self.gamma < 0:
            raise ValueError("focal gamma must be >= 0")
        if self.lam < 0:
            raise ValueError("center-loss weight must be >= 0")
        if not 0 < self.q <= 1:
            raise ValueError("truncated Lq requires 0 < q <= 1")
        if not 0 <= self.k_thresh < 1:
            raise ValueError("truncated Lq requires 0 <= k_thresh < 1")
        if self.m != 2:
            raise ValueError("only margin order m=2 is supported")

    def anneal(self, epoch: int) -> float:
        return max(self.lam_floor, self.lam_anneal * self.lam_decay**epoch)


def _check(probs, labels):
    p = as_matrix(probs)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != p.shape[1]:
        raise ShapeError(f"{y.shape[0]} labels for {p.shape[1]} samples")
    if y.size and (y.min() < 0 or y.max() >= p.shape[0]):
        raise LabelError(f"labels must lie in [0, {p.shape[0]}), got range [{y.min()}, {y.max()}]")
    return p, y


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((k, y.shape[0]))
    out[y, np.arange(y.shape[0])] = 1.0
    return out


def cross_entropy(probs, labels):
    p, y = _check(probs, labels)
    n = y.shape[0]
    pt = p[y, np.arange(n)]
    loss = float(-np.log(np.maximum(pt, _TINY)).mean())
    return loss, (p - _onehot(y, p.shape[0])) / n


def focal(probs, labels, gamma: float):
    """Mean of ``-(1 - p_t)^gamma * log p_t``."""
    p, y = _check(probs, labels)
    n = y.shape[0]
    pt = p[y, np.arange(n)]
    log_pt = np.log(np.maximum(pt, _TINY))
    one_minus = 1.0 - pt
    loss = float((-(one_minus**gamma) * log_pt).mean())
    # dL/dp_t; the gamma term vanishes as p_t -> 1 for every gamma >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g_term = np.where(one_minus > 0, gamma * one_minus ** (gamma - 1.0) * log_pt, 0.0)
    dl_dpt = g_term - one_minus**gamma / np.maximum(pt, _TINY)
    # dp_t/dz_j = p_t (delta_jt - p_j)
    grad = (dl_dpt * pt) * (_onehot(y, p.shape[0]) - p)
    return loss, grad / n


def truncated_lq(probs, labels, q: float, k_thresh: float):
    """Thresholded truncated Lq loss: ``(1 - p_y^q)/q`` above the threshold, constant below."""
    p, y = _check(probs, labels)
    n = y.shape[0]
    pt = p[y, np.arange(n)]
    active = pt > k_thresh
    per_sample = np.where(active, (1.0 - pt**q) / q, (1.0 - k_thresh**q) / q)
    # dL/dz_j = -p_t^q (delta_jt - p_j)
    coef = np.where(active, -(pt**q), 0.0)
    grad = coef * (_onehot(y, p.shape[0]) - p)
    return float(per_sample.mean()), grad / n


@dataclass
class ClassCenters:
    centers: np.ndarray
    alpha: float = 0.5

    @classmethod
    def zeros(cls, dim: int, k: int, alpha: float = 0.5) -> "ClassCenters":
        return cls(np.zeros((dim, k)), alpha)

    def update(self, delta: np.ndarray) -> None:
        self.centers += delta


def center_loss(features, labels, centers: ClassCenters, lam: float):
    """``lam/2 * mean ||f_i - c_{y_i}||^2``.

    Returns ``(loss_term, grad_features, center_update)``; the update moves
    every class present in the batch toward its batch mean by ``centers.alpha``
    and is not applied here.
    """
    f = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = y.shape[0]
    if n == 0:
        raise ValueError("center loss needs a non-empty batch")
    c = centers.centers
    if f.shape[0] != c.shape[0]:
        raise ShapeError(f"feature dim {f.shape[0]} does not match centers dim {c.shape[0]}")
    if y.max() >= c.shape[1] or y.min() < 0:
        raise LabelError(f"labels must lie in [0, {c.shape[1]})")
    diff = f - c[:, y]
    loss = float(0.5 * lam * (diff**2).sum() / n)
    grad = lam * diff / n
    update = np.zeros_like(c)
    for cls in np.unique(y):
        batch_mean = f[:, y == cls].mean(axis=1)
        update[:, cls] = centers.alpha * (batch_mean - c[:, cls])
    return loss, grad, update


def psi(cos_theta):
    """Margin function for m=2: ``2c^2-1`` for ``c >= 0``, ``-2c^2-1`` otherwise."""
    c = np.asarray(cos_theta, dtype=np.float64)
    return np.where(c >= 0, 2 * c * c - 1, -2 * c * c - 1)


def large_margin_logits(weights, features, labels, m: int = 2, lam_anneal: float = 0.0):
    """Dense logits ``W^T x`` with the target logit replaced by its margin version.

    The target score ``|w||x| cos(theta)`` becomes
    ``(lam_anneal * |w||x| cos(theta) + |w||x| psi(theta)) / (1 + lam_anneal)``.
    Samples with a zero-norm feature or target weight column keep the plain
    logit.
    """
    logits, _ = _large_margin(weights, features, labels, m, lam_anneal, need_grad=False)
    return logits


def large_margin_backward(weights, features, labels, grad_logits, m: int = 2, lam_anneal: float = 0.0):
    """Return ``(grad_weights, grad_features)`` of the margin logits for upstream ``grad_logits``."""
    _, back = _large_margin(weights, features, labels, m, lam_anneal, need_grad=True)
    return back(as_matrix(grad_logits))


def _large_margin(weights, features, labels, m, lam_anneal, need_grad):
    if m != 2:
        raise ValueError("only margin order m=2 is supported")
    w = as_matrix(weights)
    x = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if w.shape[0] != x.shape[0]:
        raise ShapeError(f"weights {w.shape} do not match features {x.shape}")
    if y.shape[0] != x.shape[1]:
        raise ShapeError(f"{y.shape[0]} labels for {x.shape[1]} samples")
    n = y.shape[0]
    cols = np.arange(n)
    logits = w.T @ x
    wy = w[:, y]
    a = np.linalg.norm(wy, axis=0)
    b = np.linalg.norm(x, axis=0)
    u = logits[y, cols]
    ok = (a > 0) & (b > 0)
    ab = np.where(ok, a * b, 1.0)
    s = np.where(u >= 0, 1.0, -1.0)
    # |w||x| psi(cos) = s * 2u^2/(ab) - ab
    margin = s * 2 * u * u / ab - ab
    if np.isinf(lam_anneal):
        ok = np.zeros_like(ok)
        lam_anneal = 0.0
    blend = 1.0 / (1.0 + lam_anneal)
    target = np.where(ok, (lam_anneal * u + margin) * blend, u)
    out = logits.copy()
    out[y, cols] = target
    if not need_grad:
        return out, None

    def backward(g):
        gw = x @ g.T
        gx = w @ g
        gt = np.where(ok, g[y, cols], 0.0)
        # undo the plain-logit contribution on the target entry, then add the blended one
        a_safe = np.where(ok, a, 1.0)
        b_safe = np.where(ok, b, 1.0)
        dmargin_du = s * 4 * u / ab
        dmargin_dx = dmargin_du * wy - (s * 2 * u * u / (a_safe * b_safe**3) + a_safe / b_safe) * x
        dmargin_dw = dmargin_du * x - (s * 2 * u * u / (a_safe**3 * b_safe) + b_safe / a_safe) * wy
        dtarget_dx = (lam_anneal * wy + dmargin_dx) * blend - wy
        dtarget_dw = (lam_anneal * x + dmargin_dw) * blend - x
        gx = gx + gt * dtarget_dx
        np.add.at(gw.T, y, (gt * dtarget_dw).T)
        return gw, gx

    return out, backward
