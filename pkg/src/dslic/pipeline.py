"""Adversarial patch training with superpixel clustering in the loop.

Each optimizer step re-clusters the raw patch, pastes the clustered patch
into every scene under random transforms, scores the composites with the
surrogate detector and back-propagates ``alpha * TV + max objectness``
through the composite, the warp and the clustering to the raw pixels.
"""
from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import apply_vjp, factors_from
from .image import check_image, to_features, write_image
from .losses import LossValue, objectness_loss, total_loss, tv_loss
from .optim import OptimizerState, amsgrad_step, scheduler_update
from .slic import SlicConfig, _run, assign, reconstruct
from .surrogate import SurrogateDetector
from .transforms import EotParams, apply_patch, backward_to_patch, sample_transforms

__all__ = [
    "TrainConfig",
    "TrainReport",
    "PatchTrainer",
    "train_patch",
    "evaluate_patch",
    "parse_config",
    "read_config",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"DSLIC1"


@dataclass(frozen=True)
class TrainConfig:
    slic: SlicConfig = field(default_factory=SlicConfig)
    alpha: float = 2.5
    lr: float = 0.03
    epochs: int = 200
    batch: int = 0  # scenes per step; 0 means all scenes
    eot: EotParams = field(default_factory=EotParams)
    sched_factor: float = 0.5
    sched_patience: int = 50
    sched_threshold: float = 1e-4
    min_lr: float = 1e-5
    patch_size: tuple = (64, 64)
    seed: int = 0
    victim_seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.sched_patience < 1:
            raise ValueError("sched_patience must be >= 1")
        if not 0 < self.sched_factor < 1:
            raise ValueError("sched_factor must lie in (0, 1)")
        if self.batch < 0:
            raise ValueError("batch must be >= 0")
        h, w = self.patch_size
        self.slic.validate(h * w)

    def to_flat(self):
        flat = {k: getattr(self, k) for k in _TOP_KEYS}
        flat.update(
            k=self.slic.k,
            omega=self.slic.omega,
            slic_max_iters=self.slic.max_iters,
            slic_tol=self.slic.tol,
            rot_deg=self.eot.rotation[1],
            scale_lo=self.eot.scale[0],
            scale_hi=self.eot.scale[1],
            bright=self.eot.brightness[1],
            contrast_lo=self.eot.contrast[0],
            contrast_hi=self.eot.contrast[1],
            noise=self.eot.noise,
            samples=self.eot.samples,
            patch_scale=self.eot.patch_scale,
        )
        return flat

    @classmethod
    def from_flat(cls, **kw):
        """Build a config from the flat ``key=value`` names used in config files."""
        unknown = set(kw) - set(FLAT_DEFAULTS)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        p = {**FLAT_DEFAULTS, **kw}
        slic = SlicConfig(k=int(p["k"]), omega=float(p["omega"]), max_iters=int(p["slic_max_iters"]), tol=float(p["slic_tol"]))
        eot = EotParams(
            rotation=(-float(p["rot_deg"]), float(p["rot_deg"])),
            scale=(float(p["scale_lo"]), float(p["scale_hi"])),
            brightness=(-float(p["bright"]), float(p["bright"])),
            contrast=(float(p["contrast_lo"]), float(p["contrast_hi"])),
            noise=float(p["noise"]),
            samples=int(p["samples"]),
            patch_scale=float(p["patch_scale"]),
        )
        top = {k: p[k] for k in _TOP_KEYS}
        top["patch_size"] = _parse_size(top["patch_size"])
        return cls(slic=slic, eot=eot, **top)


_TOP_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("slic", "eot")]

FLAT_DEFAULTS = {
    "k": 256,
    "omega": 0.1,
    "slic_max_iters": 10,
    "slic_tol": 1e-6,
    "alpha": 2.5,
    "lr": 0.03,
    "epochs": 200,
    "batch": 0,
    "rot_deg": 20.0,
    "scale_lo": 0.75,
    "scale_hi": 1.25,
    "bright": 0.1,
    "contrast_lo": 0.8,
    "contrast_hi": 1.2,
    "noise": 0.1,
    "samples": 1,
    "patch_scale": 0.3,
    "sched_factor": 0.5,
    "sched_patience": 50,
    "sched_threshold": 1e-4,
    "min_lr": 1e-5,
    "patch_size": (64, 64),
    "seed": 0,
    "victim_seed": 0,
    "warm_start": False,
}


def _parse_size(value):
    if isinstance(value, str):
        parts = value.lower().replace(" ", "").split("x")
        if len(parts) == 1:
            parts = parts * 2
        return tuple(int(v) for v in parts)
    if isinstance(value, int):
        return (value, value)
    return tuple(int(v) for v in value)


def _coerce(key, text):
    default = FLAT_DEFAULTS[key]
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{key}: expected a boolean, got {text!r}")
        return low in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return _parse_size(text)


def parse_config(text):
    """Parse flat ``key = value`` lines (``#`` comments) into a dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FLAT_DEFAULTS:
            raise KeyError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value.strip("\"'"))
    return out


def read_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass
class TrainReport:
    epochs: list  # dicts with epoch, loss, l_obj, l_tv, lr
    raw_patch: np.ndarray
    patch: np.ndarray
    initial_patch: np.ndarray
    optimizer: OptimizerState
    wall_s: float = 0.0

    def column(self, name):
        return np.array([row[name] for row in self.epochs])

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["epoch", "loss", "l_obj", "l_tv", "lr"])
            for row in self.epochs:
                out.writerow([row["epoch"]] + [repr(float(row[k])) for k in ("loss", "l_obj", "l_tv", "lr")])


def _cluster(raw, cfg, previous=None):
    h, w, _ = raw.shape
    features = to_features(raw)
    init = None
    if previous is not None:
        init = assign(features, previous.centroids, cfg)
    return _run(features, (h, w), cfg, init=init)


def _objectness(patch, scenes, transforms_per_scene, cfg, detector):
    """Mean max-objectness over (scene, sample) pairs and its patch gradient."""
    value = 0.0
    grad = np.zeros_like(patch)
    count = 0
    for scene, draws in zip(scenes, transforms_per_scene):
        for tfs in draws:
            applied = apply_patch(scene, patch, tfs, cfg.eot.patch_scale)
            obj = objectness_loss(detector.score_map(applied.composited))
            value += obj.value
            grad += backward_to_patch(applied, detector.backward(applied.composited, obj.grad))
            count += 1
    return LossValue(value / count, grad / count)


def _draw(scenes, cfg, rng):
    return [[sample_transforms(cfg.eot, rng, len(s.boxes)) for _ in range(cfg.eot.samples)] for s in scenes]


def evaluate_patch(patch, scenes, cfg, detector=None, seed=0):
    """Mean max-objectness of ``patch`` under a fixed, seeded set of transforms."""
    detector = detector or SurrogateDetector(cfg.victim_seed)
    rng = np.random.default_rng([seed, 2])
    return _objectness(check_image(patch, "patch"), scenes, _draw(scenes, cfg, rng), cfg, detector).value


def initial_patch(cfg):
    h, w = cfg.patch_size
    return np.random.default_rng([cfg.seed, 0]).random((h, w, 3))


def train_patch(scenes, cfg, detector=None, patch=None, callback=None):
    """Optimise a patch against ``scenes``; deterministic for a fixed config.

    ``patch`` overrides the seeded random initial patch. ``callback`` is
    called with the epoch record after every epoch.
    """
    if not scenes:
        raise ValueError("at least one scene is required")
    detector = detector or SurrogateDetector(cfg.victim_seed)
    raw = initial_patch(cfg) if patch is None else check_image(patch, "patch", copy=True)
    if raw.shape[:2] != tuple(cfg.patch_size):
        raise ValueError(f"patch shape {raw.shape[:2]} != configured {cfg.patch_size}")
    start = raw.copy()
    rng = np.random.default_rng([cfg.seed, 1])
    batch = cfg.batch or len(scenes)
    opt = OptimizerState.zeros(raw.shape, lr=cfg.lr)
    state = None
    records = []
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        lr_used = opt.lr
        sums = np.zeros(3)
        n_steps = 0
        for lo in range(0, len(scenes), batch):
            group = scenes[lo : lo + batch]
            state = _cluster(raw, cfg.slic, state if cfg.warm_start else None)
            clustered = reconstruct(raw, state)
            obj = _objectness(clustered, group, _draw(group, cfg, rng), cfg, detector)
            tv = tv_loss(clustered)
            loss = total_loss(tv, obj, cfg.alpha)
            grad = apply_vjp(factors_from(state), loss.grad)
            opt, raw = amsgrad_step(opt, grad, raw)
            raw = np.clip(raw, 0.0, 1.0)
            sums += (loss.value, obj.value, tv.value)
            n_steps += 1
        mean = sums / n_steps
        opt = scheduler_update(
            opt, float(mean[0]), cfg.sched_factor, cfg.sched_patience, cfg.sched_threshold, cfg.min_lr
        )
        record = {"epoch": epoch, "loss": mean[0], "l_obj": mean[1], "l_tv": mean[2], "lr": lr_used}
        records.append(record)
        if callback is not None:
            callback(record)
    final = _cluster(raw, cfg.slic)
    return TrainReport(
        epochs=records,
        raw_patch=raw,
        patch=reconstruct(raw, final),
        initial_patch=start,
        optimizer=opt,
        wall_s=time.perf_counter() - t0,
    )


def save_checkpoint(path_prefix, report, epoch=None):
    """Write ``<prefix>.ppm`` (clustered patch) and ``<prefix>.bin``.

    The binary blob is ``DSLIC1``, a little-endian uint32 header length, a
    JSON header, then float64 arrays ``m, v, vhat, raw_patch``.
    """
    opt = report.optimizer
    write_image(report.patch, f"{path_prefix}.ppm")
    header = {
        "epoch": len(report.epochs) if epoch is None else epoch,
        "step": opt.step,
        "lr": opt.lr,
        "best": opt.best if math.isfinite(opt.best) else None,
        "stall": opt.stall,
        "n_reductions": opt.n_reductions,
        "shape": list(report.raw_patch.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(f"{path_prefix}.bin", "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in (opt.m, opt.v, opt.vhat, report.raw_patch):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a ``.bin`` checkpoint; returns ``(OptimizerState, raw_patch, epoch)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a DSLIC1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (size,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + size])
    pos += size
    shape = tuple(header["shape"])
    count = int(np.prod(shape))
    arrays = np.frombuffer(data, dtype="<f8", offset=pos)
    if arrays.size != 4 * count:
        raise ValueError(f"{path}: truncated checkpoint payload")
    m, v, vhat, raw = (arrays[i * count : (i + 1) * count].reshape(shape).copy() for i in range(4))
    best = header["best"] if header["best"] is not None else math.inf
    opt = OptimizerState(m, v, vhat, header["step"], header["lr"], best, header["stall"], header["n_reductions"])
    return opt, raw, header["epoch"]


class PatchTrainer(BaseEstimator):
    """Estimator wrapper around :func:`train_patch`.

    Parameters are the flat configuration keys, so a trainer can be
    built from a config file and varied with ``set_params`` or ``clone``.
    ``fit`` takes a list of :class:`~dslic.transforms.SceneSpec`.
    """

    def __init__(
        self,
        k=256,
        omega=0.1,
        slic_max_iters=10,
        slic_tol=1e-6,
        alpha=2.5,
        lr=0.03,
        epochs=200,
        batch=0,
        rot_deg=20.0,
        scale_lo=0.75,
        scale_hi=1.25,
        bright=0.1,
        contrast_lo=0.8,
        contrast_hi=1.2,
        noise=0.1,
        samples=1,
        patch_scale=0.3,
        sched_factor=0.5,
        sched_patience=50,
        sched_threshold=1e-4,
        min_lr=1e-5,
        patch_size=(64, 64),
        seed=0,
        victim_seed=0,
        warm_start=False,
    ):
        self.k = k
        self.omega = omega
        self.slic_max_iters = slic_max_iters
        self.slic_tol = slic_tol
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.batch = batch
        self.rot_deg = rot_deg
        self.scale_lo = scale_lo
        self.scale_hi = scale_hi
        self.bright = bright
        self.contrast_lo = contrast_lo
        self.contrast_hi = contrast_hi
        self.noise = noise
        self.samples = samples
        self.patch_scale = patch_scale
        self.sched_factor = sched_factor
        self.sched_patience = sched_patience
        self.sched_threshold = sched_threshold
        self.min_lr = min_lr
        self.patch_size = patch_size
        self.seed = seed
        self.victim_seed = victim_seed
        self.warm_start = warm_start

    def to_config(self):
        return TrainConfig.from_flat(**self.get_params())

    def fit(self, scenes, y=None):
        cfg = self.to_config()
        self.report_ = train_patch(list(scenes), cfg)
        self.patch_ = self.report_.patch
        self.raw_patch_ = self.report_.raw_patch
        return self

    def evaluate(self, scenes, seed=0):
        """Mean max-objectness of the fitted (clustered) patch on ``scenes``."""
        check_is_fitted(self, "patch_")
        return evaluate_patch(self.patch_, list(scenes), self.to_config(), seed=seed)
