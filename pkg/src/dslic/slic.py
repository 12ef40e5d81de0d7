"""Forward SLIC on joint (position, color) pixel features.

Pixels are assigned to the centroid minimising the weighted squared
distance ``|| w * (x_i - mu_j) ||^2`` with ``w = [omega, omega, 1, 1, 1]``,
and centroids are the means of their members. Distances are evaluated
against every centroid (no locality window) so results are exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .image import check_image, to_features

__all__ = [
    "SlicConfig",
    "ClusterState",
    "SlicSuperpixels",
    "init_centroids",
    "assign",
    "update_centroids",
    "run_slic",
    "reconstruct",
    "cluster_mean",
    "grid_seeds",
    "write_assignment_csv",
    "write_centroids_csv",
]

# Candidate pairs are refined with exact distances; anything within this
# relative margin of the expanded-form minimum is re-checked.
_CANDIDATE_MARGIN = 1e-9
_CHUNK = 1 << 21


@dataclass(frozen=True)
class SlicConfig:
    k: int = 256
    omega: float = 0.1
    max_iters: int = 10
    tol: float = 1e-6

    def validate(self, n_pixels=None):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if n_pixels is not None and self.k > n_pixels:
            raise ValueError(f"k={self.k} exceeds the number of pixels ({n_pixels})")
        if not (self.omega >= 0 and math.isfinite(self.omega)):
            raise ValueError(f"omega must be finite and nonnegative, got {self.omega}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be nonnegative, got {self.tol}")
        return self

    @property
    def weights(self):
        w = float(self.omega)
        return np.array([w, w, 1.0, 1.0, 1.0])


@dataclass(frozen=True)
class ClusterState:
    """Centroids (K, 5), per-pixel labels (N,), cluster sizes (K,) and the
    clustering objective. ``history`` holds the objective after every
    half-step of the run that produced this state."""

    centroids: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray
    objective: float
    n_iter: int = 0
    history: tuple = field(default=(), repr=False)

    @property
    def k(self):
        return self.centroids.shape[0]


def cluster_mean(labels, values, sizes):
    """Per-cluster mean of ``values`` (N, d) -> (K, d).

    Sums are accumulated in pixel order so the result is reproducible.
    """
    values = np.asarray(values, dtype=np.float64)
    k = len(sizes)
    sums = np.empty((k, values.shape[1]))
    for c in range(values.shape[1]):
        sums[:, c] = np.bincount(labels, weights=values[:, c], minlength=k)
    return sums / sizes[:, None]


def _nearest(xw, mw):
    """Exact weighted nearest centroid for each row of ``xw``.

    Returns (labels, squared distances). Ties go to the lowest index.
    """
    n, k = xw.shape[0], mw.shape[0]
    xx = np.einsum("ij,ij->i", xw, xw)
    mm = np.einsum("ij,ij->i", mw, mw)
    margin = _CANDIDATE_MARGIN * (xx.max() + mm.max()) + 1e-300
    labels = np.empty(n, dtype=np.intp)
    dist = np.empty(n)
    step = max(1, _CHUNK // k)
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d = xx[lo:hi, None] - 2.0 * (xw[lo:hi] @ mw.T) + mm[None, :]
        rows, cols = np.nonzero(d <= d.min(axis=1, keepdims=True) + margin)
        diff = xw[lo + rows] - mw[cols]
        exact = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((cols, exact, rows))
        r = rows[order]
        first = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
        labels[lo:hi] = cols[order][first]
        dist[lo:hi] = exact[order][first]
    return labels, dist


def _objective(dist):
    return math.fsum(dist)


def _sq_dist_to_own(features, centroids, labels, weights):
    # Same rounding as _nearest, so an unchanged assignment scores identically.
    diff = features * weights - (centroids * weights)[labels]
    return np.einsum("ij,ij->i", diff, diff)


def _repair_empty(features, centroids, labels, dist, weights):
    """Reseed empty clusters at the worst-fit pixels and reassign."""
    k = centroids.shape[0]
    for attempt in range(4):
        sizes = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return centroids, labels, dist
        for j in empty:
            donors = sizes[labels] >= 2
            i = int(np.argmax(np.where(donors, dist, -1.0)))
            sizes[labels[i]] -= 1
            sizes[j] = 1
            centroids[j] = features[i]
            labels[i] = j
            dist[i] = 0.0
        if attempt == 3:
            # Reassignment keeps losing ties to lower-index duplicates;
            # keep the forced members (each at distance zero).
            break
        labels, dist = _nearest(features * weights, centroids * weights)
    return centroids, labels, dist


def grid_seeds(height, width, k):
    """(k, 2) array of (x, y) seed positions on a near-regular grid.

    Rows of seeds are spaced ``height / rows`` apart and each row holds
    ``k // rows`` or ``k // rows + 1`` evenly spaced seeds, so exactly
    ``k`` distinct positions are produced for any ``1 <= k <= height*width``.
    """
    n_rows = int(round(math.sqrt(k * height / width)))
    n_rows = min(max(n_rows, -(-k // width), 1), height, k)
    base, extra = divmod(k, n_rows)
    seeds = []
    for r in range(n_rows):
        count = base + (1 if r < extra else 0)
        y = (r + 0.5) * height / n_rows - 0.5
        for c in range(count):
            seeds.append(((c + 0.5) * width / count - 0.5, y))
    return np.array(seeds, dtype=np.float64)


def _with_assignment(features, centroids, labels, dist, **kw):
    sizes = np.bincount(labels, minlength=centroids.shape[0])
    return ClusterState(centroids, labels, sizes, _objective(dist), **kw)


def init_centroids(features, cfg, shape=None):
    """Grid-seeded centroids, colored by their nearest pixel, plus one
    assignment pass.

    ``shape`` is the (height, width) of the source image; it is inferred
    from the spatial columns of ``features`` when omitted.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    cfg.validate(n)
    if shape is None:
        shape = (int(features[:, 1].max()) + 1, int(features[:, 0].max()) + 1)
    height, width = shape
    pos = grid_seeds(height, width, cfg.k)
    px = np.clip(np.floor(pos[:, 0] + 0.5), 0, width - 1).astype(np.intp)
    py = np.clip(np.floor(pos[:, 1] + 0.5), 0, height - 1).astype(np.intp)
    colors = features[py * width + px, 2:5]
    centroids = np.hstack([pos, colors])
    return assign(features, centroids, cfg)


def assign(features, state, cfg):
    """Assign every pixel to its nearest centroid, repairing empty clusters.

    ``state`` may be a :class:`ClusterState` or a bare (K, 5) centroid array.
    """
    features = np.asarray(features, dtype=np.float64)
    centroids = state.centroids if isinstance(state, ClusterState) else state
    centroids = np.array(centroids, dtype=np.float64)
    w = cfg.weights
    labels, dist = _nearest(features * w, centroids * w)
    centroids, labels, dist = _repair_empty(features, centroids, labels, dist, w)
    kw = {}
    if isinstance(state, ClusterState):
        kw = {"n_iter": state.n_iter, "history": state.history}
    return _with_assignment(features, centroids, labels, dist, **kw)


def update_centroids(features, state, cfg):
    """Move each centroid to the mean of its members."""
    features = np.asarray(features, dtype=np.float64)
    if np.any(state.sizes == 0):
        state = assign(features, state, cfg)
    centroids = cluster_mean(state.labels, features, state.sizes)
    objective = _objective(_sq_dist_to_own(features, centroids, state.labels, cfg.weights))
    return replace(state, centroids=centroids, objective=objective)


def run_slic(img, cfg):
    """Cluster ``img`` into ``cfg.k`` superpixels.

    Alternates mean updates and reassignment until the assignment stops
    changing, the objective decreases by less than ``cfg.tol``, or
    ``cfg.max_iters`` rounds have run. Centroids of the returned state are
    always the exact means of the returned assignment.
    """
    img = check_image(img)
    return _run(to_features(img), img.shape[:2], cfg)


def _run(features, shape, cfg, init=None):
    # Unvalidated entry point: finite-difference probes may step outside [0, 1].
    # ``init`` replaces grid seeding with an already assigned state.
    cfg.validate(features.shape[0])
    state = init_centroids(features, cfg, shape=shape) if init is None else init
    history = [state.objective]
    n_iter = 0
    for n_iter in range(1, cfg.max_iters + 1):
        updated = update_centroids(features, state, cfg)
        new = assign(features, updated, cfg)
        history += [updated.objective, new.objective]
        changed = not np.array_equal(new.labels, state.labels)
        decrease = state.objective - new.objective
        state = new
        if not changed or decrease < cfg.tol:
            break
    state = update_centroids(features, state, cfg)
    history.append(state.objective)
    return replace(state, n_iter=n_iter, history=tuple(history))


def reconstruct(img, state):
    """Clustered image: every pixel takes its cluster's mean color."""
    img = check_image(img)
    h, w, _ = img.shape
    if state.labels.shape != (h * w,):
        raise ValueError(f"state has {state.labels.shape[0]} labels, image has {h * w} pixels")
    return state.centroids[state.labels, 2:5].reshape(h, w, 3)


def write_assignment_csv(state, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["pixel_index", "cluster_index"])
        out.writerows(enumerate(state.labels.tolist()))


def write_centroids_csv(state, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["cluster", "px", "py", "r", "g", "b"])
        for j, row in enumerate(state.centroids.tolist()):
            out.writerow([j] + [repr(v) for v in row])


class SlicSuperpixels(TransformerMixin, BaseEstimator):
    """SLIC superpixels with an exact backward pass.

    ``fit`` clusters one (H, W, 3) image. ``transform`` replaces every
    pixel of an image of the same size by the mean over its fitted
    superpixel, which on the fitted image gives the clustered image.
    ``backward`` maps a gradient on the clustered image back to the input
    image with the assignment held fixed.

    Parameters
    ----------
    n_segments : int
        Number of superpixels K.
    omega : float
        Spatial sensitivity; larger values give more compact superpixels.
    max_iter : int
        Cap on assign/update rounds.
    tol : float
        Stop once the objective decreases by less than this.
    """

    def __init__(self, n_segments=256, omega=0.1, max_iter=10, tol=1e-6):
        self.n_segments = n_segments
        self.omega = omega
        self.max_iter = max_iter
        self.tol = tol

    def _config(self):
        return SlicConfig(k=self.n_segments, omega=self.omega, max_iters=self.max_iter, tol=self.tol)

    def fit(self, X, y=None):
        img = check_image(X)
        from .autodiff import factors_from

        self.state_ = run_slic(img, self._config())
        self.factors_ = factors_from(self.state_)
        self.image_shape_ = img.shape[:2]
        self.labels_ = self.state_.labels.reshape(self.image_shape_)
        self.cluster_centers_ = self.state_.centroids
        self.sizes_ = self.state_.sizes
        self.objective_ = self.state_.objective
        self.n_iter_ = self.state_.n_iter
        return self

    def _check_shape(self, arr):
        if arr.shape[:2] != tuple(self.image_shape_):
            raise ValueError(f"expected image of size {self.image_shape_}, got {arr.shape[:2]}")

    def transform(self, X):
        check_is_fitted(self, "state_")
        img = check_image(X)
        self._check_shape(img)
        from .autodiff import apply_vjp

        return apply_vjp(self.factors_, img)

    def predict(self, X):
        """Label map of ``X`` against the fitted centroids."""
        check_is_fitted(self, "state_")
        img = check_image(X)
        self._check_shape(img)
        w = self._config().weights
        labels, _ = _nearest(to_features(img) * w, self.cluster_centers_ * w)
        return labels.reshape(self.image_shape_)

    def backward(self, grad):
        check_is_fitted(self, "state_")
        from .autodiff import apply_vjp

        return apply_vjp(self.factors_, grad)
