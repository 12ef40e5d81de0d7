"""Expectation over transformation: random placement and color jitter of a
patch inside scene images, with the adjoint pass back to patch pixels.

A warp is a sparse bilinear resampling operator from patch pixels to scene
pixels, so its backward pass is the transpose of the same matrix.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .image import check_image, read_image

__all__ = [
    "EotParams",
    "Transform",
    "SceneSpec",
    "Placement",
    "AppliedPatch",
    "sample_transforms",
    "warp_patch",
    "composite",
    "apply_patch",
    "backward_to_patch",
    "load_scenes",
]

_SNAP = 1e-9


@dataclass(frozen=True)
class EotParams:
    """Uniform sampling ranges for the random transforms.

    Rotation is in degrees, scale multiplies the nominal patch side,
    brightness is added and contrast multiplied on the patch region, and
    noise is the half-width of per-pixel uniform noise.
    """

    rotation: tuple = (-20.0, 20.0)
    scale: tuple = (0.75, 1.25)
    brightness: tuple = (-0.1, 0.1)
    contrast: tuple = (0.8, 1.2)
    noise: float = 0.1
    samples: int = 1
    patch_scale: float = 0.3

    def __post_init__(self):
        for name in ("rotation", "scale", "brightness", "contrast"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range must satisfy lo <= hi, got ({lo}, {hi})")
        if self.scale[0] <= 0:
            raise ValueError("scale range must be positive")
        if self.noise < 0:
            raise ValueError("noise amplitude must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.patch_scale <= 0:
            raise ValueError("patch_scale must be positive")

    @classmethod
    def identity(cls, samples=1, patch_scale=0.3):
        return cls((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0), 0.0, samples, patch_scale)


@dataclass(frozen=True)
class Transform:
    angle: float = 0.0
    scale: float = 1.0
    brightness: float = 0.0
    contrast: float = 1.0
    noise: float = 0.0
    noise_seed: int = 0

    def noise_field(self, shape):
        if self.noise == 0:
            return np.zeros(shape)
        return np.random.default_rng(self.noise_seed).uniform(-self.noise, self.noise, size=shape)


def sample_transforms(params, rng, count=1):
    """Draw ``count`` independent transforms; reproducible for a seeded ``rng``."""
    out = []
    for _ in range(count):
        angle = rng.uniform(*params.rotation)
        scale = rng.uniform(*params.scale)
        brightness = rng.uniform(*params.brightness)
        contrast = rng.uniform(*params.contrast)
        seed = int(rng.integers(2**63 - 1))
        out.append(Transform(angle, scale, brightness, contrast, params.noise, seed))
    return out


@dataclass(frozen=True)
class SceneSpec:
    image: np.ndarray
    boxes: tuple

    def __post_init__(self):
        img = check_image(self.image, "scene")
        object.__setattr__(self, "image", img)
        h, w, _ = img.shape
        boxes = tuple(tuple(float(v) for v in b) for b in self.boxes)
        for x, y, bw, bh in boxes:
            if bw <= 0 or bh <= 0:
                raise ValueError(f"box ({x}, {y}, {bw}, {bh}) must have positive size")
            if x < 0 or y < 0 or x + bw > w or y + bh > h:
                raise ValueError(f"box ({x}, {y}, {bw}, {bh}) exceeds scene bounds {w}x{h}")
        object.__setattr__(self, "boxes", boxes)


@dataclass
class Placement:
    transform: Transform
    box: tuple
    affine: np.ndarray  # 2x3, patch (x, y) -> scene (x, y)
    operator: sparse.csr_matrix  # raw bilinear weights, scene pixels x patch pixels
    mask: np.ndarray  # (H, W) coverage, operator @ 1
    gate: np.ndarray = field(default=None, repr=False)  # clamp pass-through, (H, W, 3)

    @property
    def normalized(self):
        inv = np.zeros_like(self.mask.ravel())
        support = self.mask.ravel() > 0
        inv[support] = 1.0 / self.mask.ravel()[support]
        return sparse.diags(inv) @ self.operator


@dataclass
class AppliedPatch:
    composited: np.ndarray
    placements: list
    mask: np.ndarray
    patch_shape: tuple


def _affine(patch_shape, transform, box, patch_scale):
    ph, pw = patch_shape
    x, y, bw, bh = box
    side = patch_scale * math.sqrt(bw * bh) * transform.scale
    s = side / pw
    theta = math.radians(transform.angle)
    c, si = math.cos(theta), math.sin(theta)
    lin = s * np.array([[c, -si], [si, c]])
    center = np.array([x + (bw - 1) / 2.0, y + (bh - 1) / 2.0])
    pc = np.array([(pw - 1) / 2.0, (ph - 1) / 2.0])
    return np.hstack([lin, (center - lin @ pc)[:, None]])


def _snap(u):
    r = np.rint(u)
    return np.where(np.abs(u - r) < _SNAP, r, u)


def warp_operator(patch_shape, scene_shape, affine):
    """Sparse bilinear operator mapping patch pixels onto scene pixels."""
    ph, pw = patch_shape
    sh, sw = scene_shape
    lin, off = affine[:, :2], affine[:, 2]
    corners = np.array([[-1, -1], [pw, -1], [-1, ph], [pw, ph]], dtype=np.float64)
    mapped = corners @ lin.T + off
    x0 = max(int(math.floor(mapped[:, 0].min())), 0)
    x1 = min(int(math.ceil(mapped[:, 0].max())), sw - 1)
    y0 = max(int(math.floor(mapped[:, 1].min())), 0)
    y1 = min(int(math.ceil(mapped[:, 1].max())), sh - 1)
    if x0 > x1 or y0 > y1:
        raise ValueError("warped patch lies entirely outside the scene")
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    scene_xy = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src = np.linalg.solve(lin, (scene_xy - off).T).T
    u, v = _snap(src[:, 0]), _snap(src[:, 1])
    iu, iv = np.floor(u).astype(np.intp), np.floor(v).astype(np.intp)
    fu, fv = u - iu, v - iv
    scene_idx = ys.ravel() * sw + xs.ravel()
    rows, cols, vals = [], [], []
    for du, dv, wgt in (
        (0, 0, (1 - fu) * (1 - fv)),
        (1, 0, fu * (1 - fv)),
        (0, 1, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        cu, cv = iu + du, iv + dv
        ok = (wgt > 0) & (cu >= 0) & (cu < pw) & (cv >= 0) & (cv < ph)
        rows.append(scene_idx[ok])
        cols.append(cv[ok] * pw + cu[ok])
        vals.append(wgt[ok])
    op = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(sh * sw, ph * pw),
    )
    if op.nnz == 0:
        raise ValueError("warped patch lies entirely outside the scene")
    return op


def warp_patch(patch, transform, box, scene_shape, patch_scale=0.3):
    """Resample ``patch`` into scene coordinates.

    The patch side becomes ``patch_scale * sqrt(w * h) * transform.scale``,
    rotated about its center, which sits on the box center. Returns the
    warped colors (un-premultiplied, zero off the support), the coverage
    mask and the :class:`Placement` needed for the backward pass.
    """
    patch = np.asarray(patch, dtype=np.float64)
    ph, pw, _ = patch.shape
    affine = _affine((ph, pw), transform, box, patch_scale)
    op = warp_operator((ph, pw), scene_shape, affine)
    mask = np.minimum(np.asarray(op.sum(axis=1)).ravel(), 1.0).reshape(scene_shape)
    placement = Placement(transform, tuple(box), affine, op, mask)
    warped = (placement.normalized @ patch.reshape(-1, 3)).reshape(*scene_shape, 3)
    return warped, mask, placement


def composite(scene, warped, mask, brightness=0.0, contrast=1.0, noise=None):
    """Blend the jittered patch over the scene.

    ``out = (1 - mask) * scene + mask * clip(contrast * warped + brightness + noise)``.
    Returns ``out`` and the clamp pass-through gate.
    """
    jittered = contrast * warped + brightness
    if noise is not None:
        jittered = jittered + noise
    gate = ((jittered >= 0.0) & (jittered <= 1.0)).astype(np.float64)
    m = mask[..., None]
    out = (1.0 - m) * scene + m * np.clip(jittered, 0.0, 1.0)
    return np.clip(out, 0.0, 1.0), gate


def apply_patch(scene, patch, transforms, patch_scale=0.3):
    """Paste ``patch`` into every box of ``scene``, one transform per box."""
    if len(transforms) != len(scene.boxes):
        raise ValueError(f"need {len(scene.boxes)} transforms, got {len(transforms)}")
    out = scene.image
    shape = out.shape[:2]
    total_mask = np.zeros(shape)
    placements = []
    for tf, box in zip(transforms, scene.boxes):
        warped, mask, pl = warp_patch(patch, tf, box, shape, patch_scale)
        out, pl.gate = composite(out, warped, mask, tf.brightness, tf.contrast, tf.noise_field(out.shape))
        total_mask = total_mask + mask * (1.0 - total_mask)
        placements.append(pl)
    return AppliedPatch(out, placements, total_mask, tuple(np.shape(patch)[:2]))


def backward_to_patch(applied, upstream):
    """Gradient on the composited scene -> gradient on the patch pixels."""
    if not applied.placements or any(p.gate is None for p in applied.placements):
        raise ValueError("applied patch is missing its placement records")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != applied.composited.shape:
        raise ValueError(f"gradient shape {g.shape} != composite shape {applied.composited.shape}")
    ph, pw = applied.patch_shape
    total = np.zeros((ph * pw, 3))
    for pl in reversed(applied.placements):
        m = pl.mask[..., None]
        inner = g * m * pl.gate * pl.transform.contrast
        total += pl.normalized.T @ inner.reshape(-1, 3)
        g = g * (1.0 - m)
    return total.reshape(ph, pw, 3)


def load_scenes(directory, filename="scenes.csv"):
    """Read ``image_path,x,y,w,h`` rows; rows sharing an image form one scene."""
    path = os.path.join(directory, filename)
    boxes = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_path", "x", "y", "w", "h"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            box = tuple(float(row[k]) for k in ("x", "y", "w", "h"))
            boxes.setdefault(row["image_path"], []).append(box)
    if not boxes:
        raise ValueError(f"{path}: no scenes listed")
    return [SceneSpec(read_image(os.path.join(directory, p)), tuple(b)) for p, b in boxes.items()]
