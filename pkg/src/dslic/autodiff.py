"""Backward pass through SLIC.

With the assignment held fixed, each clustered color channel is the
cluster-mean operator ``P = A diag(1/|S|) A^T`` applied to the input
channel, and ``P`` is also its Jacobian. ``P`` is symmetric, so the
vector-Jacobian product is the same within-cluster mean pooling. It is
applied in O(N) without forming the N x N matrix.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .image import check_image, to_features
from .losses import mse_loss
from .slic import ClusterState, _run, cluster_mean, reconstruct, run_slic

__all__ = [
    "JacobianFactors",
    "GradCheckReport",
    "AllProbesExcludedError",
    "factors_from",
    "apply_vjp",
    "grad_check",
    "toy_optimize",
    "write_trace_csv",
]


@dataclass(frozen=True)
class JacobianFactors:
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def inv_sizes(self):
        return 1.0 / self.sizes

    @property
    def n_pixels(self):
        return self.labels.shape[0]


def factors_from(state: ClusterState) -> JacobianFactors:
    sizes = np.asarray(state.sizes)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("every cluster must be nonempty to build the Jacobian")
    return JacobianFactors(state.labels.copy(), sizes.astype(np.float64))


def apply_vjp(factors: JacobianFactors, upstream):
    """Within-cluster mean of ``upstream`` (any shape with N pixels leading)."""
    g = np.asarray(upstream, dtype=np.float64)
    n = factors.n_pixels
    if g.ndim < 2 or int(np.prod(g.shape[:-1])) != n:
        raise ValueError(f"gradient of shape {g.shape} does not match {n} pixels")
    flat = g.reshape(n, -1)
    means = cluster_mean(factors.labels, flat, factors.sizes)
    return means[factors.labels].reshape(g.shape)


class AllProbesExcludedError(RuntimeError):
    """Every probe flipped a cluster assignment under perturbation."""


@dataclass
class GradCheckReport:
    rows: list
    max_abs_err: float
    max_rel_err: float
    n_probes: int
    n_excluded: int

    @property
    def excluded_fraction(self):
        return self.n_excluded / self.n_probes

    def summary(self):
        return (
            f"probes={self.n_probes} excluded={self.n_excluded} "
            f"max_abs_err={self.max_abs_err:.3e} max_rel_err={self.max_rel_err:.3e}"
        )

    def write_csv(self, path):
        fields = ["probe_pixel", "channel", "analytic", "numeric", "abs_err", "rel_err", "excluded"]
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            out.writeheader()
            for row in self.rows:
                out.writerow({**row, "excluded": int(row["excluded"])})


def _rel(a, b):
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def grad_check(img, cfg, probes=64, eps=1e-5, target=None, seed=0):
    """Compare the analytic SLIC gradient with central finite differences.

    The scalar checked is ``sum(C_hat)``, or the pixel MSE against
    ``target`` when one is given. Each numeric derivative re-runs the full
    clustering on the perturbed image; a probe is excluded when either
    perturbation changes any pixel's assignment.
    """
    img = check_image(img)
    if not eps > 0:
        raise ValueError("eps must be positive")
    h, w, _ = img.shape
    n = h * w
    if target is not None:
        target = check_image(target, "target")
        if target.shape != img.shape:
            raise ValueError(f"target shape {target.shape} != image shape {img.shape}")

    def scalar_diff(plus, minus):
        # s(plus) - s(minus), accumulated elementwise to avoid cancellation.
        d = plus - minus
        if target is None:
            return float(np.sum(d))
        return float(np.sum(d * (plus + minus - 2.0 * target.reshape(-1, 3)))) / n

    state = run_slic(img, cfg)
    clustered = reconstruct(img, state)
    upstream = np.ones_like(img) if target is None else mse_loss(clustered, target).grad
    analytic = apply_vjp(factors_from(state), upstream).reshape(n, 3)

    rng = np.random.default_rng(seed)
    picks = rng.choice(n * 3, size=min(probes, n * 3), replace=False)
    base = to_features(img)
    rows = []
    for flat in picks.tolist():
        pixel, channel = divmod(flat, 3)
        clustered_pm = []
        flipped = False
        for sign in (1.0, -1.0):
            feats = base.copy()
            feats[pixel, 2 + channel] += sign * eps
            st = _run(feats, (h, w), cfg)
            flipped |= not np.array_equal(st.labels, state.labels)
            clustered_pm.append(st.centroids[st.labels, 2:5])
        numeric = scalar_diff(*clustered_pm) / (2.0 * eps)
        a = float(analytic[pixel, channel])
        rows.append(
            {
                "probe_pixel": pixel,
                "channel": channel,
                "analytic": a,
                "numeric": numeric,
                "abs_err": abs(a - numeric),
                "rel_err": _rel(a, numeric),
                "excluded": flipped,
            }
        )
    kept = [r for r in rows if not r["excluded"]]
    if not kept:
        raise AllProbesExcludedError(f"all {len(rows)} probes changed the clustering")
    return GradCheckReport(
        rows=rows,
        max_abs_err=max(r["abs_err"] for r in kept),
        max_rel_err=max(r["rel_err"] for r in kept),
        n_probes=len(rows),
        n_excluded=len(rows) - len(kept),
    )


def toy_optimize(start, target, cfg, steps, lr, scale_lr=False, callback=None):
    """Gradient descent on the raw image so its clustering matches ``target``.

    Every step re-clusters the current image, takes the pixel-MSE gradient
    through the cluster-mean operator and clamps the result to [0, 1].
    With ``scale_lr`` the step size is ``lr * N / 2``, which cancels the
    ``2 / N`` factor of the MSE gradient.

    Returns the final raw image and the loss at steps ``0..steps``.
    ``callback(step, raw, clustered)`` is called before each update and
    once after the last.
    """
    current = check_image(start, "start", copy=True)
    target = check_image(target, "target")
    if current.shape != target.shape:
        raise ValueError(f"start shape {current.shape} != target shape {target.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = current.shape[0] * current.shape[1]
    step_size = lr * n / 2.0 if scale_lr else lr
    trace = []
    for step in range(steps + 1):
        state = run_slic(current, cfg)
        clustered = reconstruct(current, state)
        loss = mse_loss(clustered, target)
        trace.append(loss.value)
        if callback is not None:
            callback(step, current, clustered)
        if step == steps:
            break
        grad = apply_vjp(factors_from(state), loss.grad)
        current = np.clip(current - step_size * grad, 0.0, 1.0)
    return current, np.array(trace)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["step", "loss"])
        for step, value in enumerate(np.asarray(trace).tolist()):
            out.writerow([step, repr(value)])
