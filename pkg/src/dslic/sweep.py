"""Grid sweep over superpixel count, spatial sensitivity, TV weight and seed."""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .losses import tv_loss
from .pipeline import TrainConfig, evaluate_patch, train_patch

__all__ = ["SweepSpec", "run_sweep", "RESULT_FIELDS", "TABLE_FIELDS"]

RESULT_FIELDS = ["k", "omega", "alpha", "seed", "final_obj", "final_tv", "final_total", "epochs", "wall_s"]
TABLE_FIELDS = ["k", "omega", "alpha", "mean_final_obj", "n_seeds"]


@dataclass(frozen=True)
class SweepSpec:
    k_values: tuple = tuple(range(500, 4001, 100))
    omega_values: tuple = (0.1, 1.0, 10.0)
    alpha_values: tuple = (0.0, 2.5)
    seeds: tuple = (0,)
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for name in ("k_values", "omega_values", "alpha_values", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        n = self.base.patch_size[0] * self.base.patch_size[1]
        too_big = [k for k in self.k_values if k > n]
        if too_big:
            raise ValueError(f"k values {too_big} exceed the patch pixel count {n}")

    def points(self):
        return list(product(self.k_values, self.omega_values, self.alpha_values, self.seeds))

    def config(self, k, omega, alpha, seed):
        base = self.base
        return replace(base, slic=replace(base.slic, k=int(k), omega=float(omega)), alpha=float(alpha), seed=int(seed))


def _run_point(args):
    spec, scenes, point, eval_seed = args
    cfg = spec.config(*point)
    t0 = time.perf_counter()
    report = train_patch(scenes, cfg)
    obj = evaluate_patch(report.patch, scenes, cfg, seed=eval_seed)
    tv = tv_loss(report.patch).value
    wall = time.perf_counter() - t0
    k, omega, alpha, seed = point
    return {
        "k": int(k),
        "omega": float(omega),
        "alpha": float(alpha),
        "seed": int(seed),
        "final_obj": obj,
        "final_tv": tv,
        "final_total": cfg.alpha * tv + obj,
        "epochs": len(report.epochs),
        "wall_s": wall,
    }


def _fmt(row, timing):
    out = {}
    for key in RESULT_FIELDS:
        value = row[key]
        if key == "wall_s" and not timing:
            value = 0.0
        out[key] = repr(value) if isinstance(value, float) else value
    return out


def run_sweep(spec, scenes, results_path, table_path=None, jobs=1, timing=True, eval_seed=0, log=None):
    """Train one patch per grid point and write one CSV row per point.

    Rows are written in grid order as soon as every earlier row is done,
    so an interrupted sweep leaves only complete rows. Returns the rows.
    """
    points = spec.points()
    tasks = [(spec, scenes, p, eval_seed) for p in points]
    rows = []
    with open(results_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        writer.writeheader()
        fh.flush()
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = pool.map(_run_point, tasks)
                for row in results:
                    _emit(writer, fh, row, rows, timing, log)
        else:
            for task in tasks:
                _emit(writer, fh, _run_point(task), rows, timing, log)
    if table_path is not None:
        write_table(rows, table_path)
    return rows


def _emit(writer, fh, row, rows, timing, log):
    writer.writerow(_fmt(row, timing))
    fh.flush()
    os.fsync(fh.fileno())
    rows.append(row)
    if log is not None:
        log(f"k={row['k']} omega={row['omega']} alpha={row['alpha']} seed={row['seed']} final_obj={row['final_obj']:.4f}")


def write_table(rows, path):
    """Mean final objectness per (k, omega, alpha), averaged over seeds."""
    groups = {}
    for row in rows:
        groups.setdefault((row["k"], row["omega"], row["alpha"]), []).append(row["final_obj"])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TABLE_FIELDS)
        for (k, omega, alpha), values in groups.items():
            out.writerow([k, repr(omega), repr(alpha), repr(float(np.mean(values))), len(values)])
