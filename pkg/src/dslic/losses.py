"""Loss functions with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LossValue", "tv_loss", "objectness_loss", "total_loss", "mse_loss", "TV_EPS"]

TV_EPS = 1e-12


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray


def tv_loss(patch, eps=TV_EPS):
    """Total variation of an (H, W) or (H, W, C) patch.

    Sums ``sqrt(dy^2 + dx^2 + eps)`` over the positions that have both a
    next row and a next column, channel by channel. With ``eps=0`` the
    gradient at perfectly flat positions is taken as zero.
    """
    p = np.asarray(patch, dtype=np.float64)
    squeeze = p.ndim == 2
    if squeeze:
        p = p[:, :, None]
    grad = np.zeros_like(p)
    if p.shape[0] < 2 or p.shape[1] < 2:
        return LossValue(0.0, grad[:, :, 0] if squeeze else grad)
    core = p[:-1, :-1]
    dy = core - p[1:, :-1]
    dx = core - p[:-1, 1:]
    t = np.sqrt(dy * dy + dx * dx + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(t > 0, 1.0 / t, 0.0)
    gy = dy * inv
    gx = dx * inv
    grad[:-1, :-1] += gy + gx
    grad[1:, :-1] -= gy
    grad[:-1, 1:] -= gx
    value = float(np.sum(t))
    return LossValue(value, grad[:, :, 0] if squeeze else grad)


def objectness_loss(scores):
    """Maximum objectness score; the subgradient picks the first maximum."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score grid")
    idx = int(np.argmax(s))
    grad = np.zeros_like(s)
    grad.flat[idx] = 1.0
    return LossValue(float(s.flat[idx]), grad)


def total_loss(tv, obj, alpha):
    """``alpha * tv + obj``; both gradients must already be in patch space."""
    return LossValue(alpha * tv.value + obj.value, alpha * tv.grad + obj.grad)


def mse_loss(clustered, target):
    """Squared error summed over channels and averaged over pixels."""
    c = np.asarray(clustered, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if c.shape != t.shape:
        raise ValueError(f"shape mismatch: {c.shape} vs {t.shape}")
    n = c.shape[0] * c.shape[1] if c.ndim >= 2 else c.size
    r = c - t
    return LossValue(float(np.sum(r * r)) / n, (2.0 / n) * r)
