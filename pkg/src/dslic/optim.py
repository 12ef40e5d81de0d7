"""AMSGrad updates and a reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = ["OptimizerState", "amsgrad_step", "scheduler_update"]


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    vhat: np.ndarray
    step: int = 0
    lr: float = 0.03
    best: float = math.inf
    stall: int = 0
    n_reductions: int = 0

    @classmethod
    def zeros(cls, shape, lr=0.03):
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), lr=lr)


def amsgrad_step(state, grad, params, beta1=0.9, beta2=0.999, eps=1e-8):
    """One AMSGrad update; returns ``(new_state, new_params)``.

    Only the first moment is bias corrected; the step is
    ``lr * m_hat / (sqrt(vhat) + eps)`` with ``vhat`` the running maximum
    of the second moment.
    """
    g = np.asarray(grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if g.shape != params.shape or g.shape != state.m.shape:
        raise ValueError(f"shape mismatch: grad {g.shape}, params {params.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g.ravel()))
        raise FloatingPointError(
            f"non-finite gradient at {bad.size} entries (first flat index {bad[0]}) in step {state.step + 1}"
        )
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    vhat = np.maximum(state.vhat, v)
    m_hat = m / (1.0 - beta1**t)
    new_params = params - state.lr * m_hat / (np.sqrt(vhat) + eps)
    return replace(state, m=m, v=v, vhat=vhat, step=t), new_params


def scheduler_update(state, epoch_loss, factor=0.5, patience=50, threshold=1e-4, min_lr=1e-5):
    """Reduce-on-plateau in minimisation mode with an absolute threshold.

    The learning rate is multiplied by ``factor`` once more than
    ``patience`` consecutive epochs fail to beat the best loss by
    ``threshold``.
    """
    if not math.isfinite(epoch_loss):
        raise ValueError(f"epoch loss must be finite, got {epoch_loss}")
    if epoch_loss < state.best - threshold:
        return replace(state, best=float(epoch_loss), stall=0)
    stall = state.stall + 1
    if stall > patience:
        lr = max(state.lr * factor, min_lr)
        return replace(state, lr=lr, stall=0, n_reductions=state.n_reductions + int(lr < state.lr))
    return replace(state, stall=stall)
