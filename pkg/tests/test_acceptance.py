"""Acceptance suite: one check per primary criterion, printed as PASS/FAIL lines.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines inline; they are also collected in the terminal summary.
"""
import csv
import time

import numpy as np
import pytest

from dslic.autodiff import apply_vjp, factors_from, grad_check, toy_optimize
from dslic.fixtures import desk_photo
from dslic.losses import mse_loss, tv_loss
from dslic.optim import OptimizerState, amsgrad_step, scheduler_update
from dslic.pipeline import TrainConfig, _cluster, evaluate_patch, train_patch
from dslic.image import write_image
from dslic.slic import SlicConfig, reconstruct, run_slic
from dslic.sweep import RESULT_FIELDS, TABLE_FIELDS, SweepSpec, run_sweep


def dense_operator(labels, k):
    a = np.zeros((len(labels), k))
    a[np.arange(len(labels)), labels] = 1.0
    return a @ np.diag(1.0 / a.sum(0)) @ a.T


def _fd_rel(f, grad, x, rng, probes, eps=1e-6):
    worst = 0.0
    for flat in rng.choice(x.size, probes, replace=False):
        idx = np.unravel_index(flat, x.shape)
        p, m = x.copy(), x.copy()
        p[idx] += eps
        m[idx] -= eps
        num = (f(p) - f(m)) / (2 * eps)
        scale = max(abs(num), abs(grad[idx]))
        if scale > 1e-8:
            worst = max(worst, abs(num - grad[idx]) / scale)
    return worst


def test_ac1_gradient_correctness(record_criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    details, ok = [], True
    for k in (4, 9, 25):
        img = rng.random((16, 16, 3))
        target = rng.random((16, 16, 3))
        for tgt in (None, target):
            rep = grad_check(img, SlicConfig(k=k), probes=96, eps=1e-5, target=tgt, seed=k)
            kept = rep.n_probes - rep.n_excluded
            ok &= kept >= 64 and rep.excluded_fraction <= 0.25 and rep.max_rel_err <= 1e-4
            details.append(f"K={k}{'/mse' if tgt is not None else '/sum'} kept={kept} rel={rep.max_rel_err:.1e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    record_criterion("AC1 gradient correctness", ok, "; ".join(details) + f"; {elapsed:.2f}s")
    assert ok


def test_ac2_operator_identities(record_criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 64 // h + 1))
        n = h * w
        k = int(rng.integers(1, n + 1))
        omega = float(10 ** rng.uniform(-2, 1))
        img = rng.random((h, w, 3))
        state = run_slic(img, SlicConfig(k=k, omega=omega))
        fac = factors_from(state)
        p = lambda g: apply_vjp(fac, g)
        g = rng.standard_normal((n, 3))
        u = rng.standard_normal((n, 3))
        pg = p(g)
        worst = max(
            worst,
            np.abs(p(pg) - pg).max(),
            abs(np.sum(u * pg) - np.sum(p(u) * g)),
            np.abs(p(np.ones((n, 1))) - 1.0).max(),
            np.abs(pg - dense_operator(state.labels, state.k) @ g).max(),
        )
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5
    record_criterion("AC2 operator identities", ok, f"100 draws, worst defect {worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_ac3_toy_convergence(record_criterion):
    t0 = time.perf_counter()
    cfg = SlicConfig(k=200, omega=1.0)
    photo = desk_photo(64)
    target = reconstruct(photo, run_slic(photo, cfg))
    start = np.random.default_rng(0).random(target.shape)
    _, trace = toy_optimize(start, target, cfg, steps=500, lr=0.5, scale_lr=True)
    elapsed = time.perf_counter() - t0
    ratio = trace[-1] / trace[0]
    ma = np.convolve(trace, np.ones(50) / 50, mode="valid")
    rise = float(np.max(np.diff(ma)))
    ok = ratio <= 0.05 and rise <= 1e-12 and elapsed < 60
    record_criterion(
        "AC3 toy convergence", ok, f"final/initial={ratio:.4f}, max MA rise={rise:.1e}, {elapsed:.1f}s"
    )
    assert ok


def test_ac4_slic_monotone(record_criterion):
    rng = np.random.default_rng(404)
    worst_rise, worst_rec = -np.inf, 0.0
    for _ in range(50):
        h, w = (int(v) for v in rng.integers(8, 33, size=2))
        k = int(rng.integers(2, min(80, h * w) + 1))
        cfg = SlicConfig(k=k, omega=float(10 ** rng.uniform(-2, 1)), max_iters=int(rng.integers(2, 15)))
        img = rng.random((h, w, 3))
        state = run_slic(img, cfg)
        worst_rise = max(worst_rise, float(np.max(np.diff(state.history), initial=-np.inf)))
        via_op = apply_vjp(factors_from(state), img.reshape(-1, 3)).reshape(img.shape)
        worst_rec = max(worst_rec, np.abs(reconstruct(img, state) - via_op).max())
    ok = worst_rise <= 1e-12 and worst_rec <= 1e-12
    record_criterion(
        "AC4 SLIC monotonicity", ok, f"50 images, max objective rise {worst_rise:.1e}, reconstruct defect {worst_rec:.1e}"
    )
    assert ok


def test_ac5_loss_gradients(record_criterion):
    rng = np.random.default_rng(505)
    patch = rng.random((12, 12, 3))
    tv_rel = _fd_rel(lambda x: tv_loss(x).value, tv_loss(patch).grad, patch, rng, 100)
    target = rng.random(patch.shape)
    mse_rel = _fd_rel(lambda x: mse_loss(x, target).value, mse_loss(patch, target).grad, patch, rng, 100)
    flat = tv_loss(np.full((9, 9, 3), 0.42), eps=0.0).value
    ok = tv_rel <= 1e-4 and mse_rel <= 1e-4 and flat == 0.0
    record_criterion("AC5 loss gradients", ok, f"TV rel {tv_rel:.1e}, MSE rel {mse_rel:.1e}, flat TV {flat}")
    assert ok


def test_ac6_optimizer(record_criterion):
    state, x = OptimizerState.zeros(1, lr=0.03), np.zeros(1)
    hit = None
    for step in range(1, 2001):
        state, x = amsgrad_step(state, 2 * (x - 3.0), x)
        if hit is None and abs(x[0] - 3.0) <= 1e-3:
            hit = step
    conv = abs(x[0] - 3.0) <= 1e-3
    s = OptimizerState.zeros(1, lr=0.03)
    for _ in range(52):
        s = scheduler_update(s, 1.0, patience=50)
    flat_ok = s.n_reductions == 1 and s.lr == 0.015
    s = OptimizerState.zeros(1, lr=0.03)
    for e in range(500):
        s = scheduler_update(s, 100.0 - 0.01 * e, patience=50)
    improving_ok = s.n_reductions == 0
    ok = conv and flat_ok and improving_ok
    record_criterion(
        "AC6 optimizer conformance",
        ok,
        f"|x-x*|={abs(x[0] - 3.0):.1e} (first within 1e-3 at step {hit}), "
        f"constant trace reductions={1 if flat_ok else 'wrong'}, improving trace reductions={s.n_reductions}",
    )
    assert ok


@pytest.mark.slow
def test_ac7_desk_training(desk_scenes, tmp_path, record_criterion):
    cfg = TrainConfig.from_flat(k=256, patch_size=(64, 64), epochs=200, seed=0, victim_seed=0)
    t0 = time.perf_counter()
    runs = []
    for name in ("a", "b"):
        rep = train_patch(desk_scenes, cfg)
        rep.write_trace_csv(tmp_path / f"{name}.csv")
        write_image(rep.patch, tmp_path / f"{name}.ppm")
        runs.append(rep)
    elapsed = time.perf_counter() - t0
    rep = runs[0]
    l_obj = rep.column("l_obj")
    train_ratio = l_obj[-1] / l_obj[0]
    start = reconstruct(rep.initial_patch, _cluster(rep.initial_patch, cfg.slic))
    eval_ratio = evaluate_patch(rep.patch, desk_scenes, cfg) / evaluate_patch(start, desk_scenes, cfg)
    same = all((tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes() for ext in ("csv", "ppm"))
    ok = train_ratio <= 0.5 and eval_ratio <= 0.5 and same and elapsed < 300
    record_criterion(
        "AC7 desk training",
        ok,
        f"epoch-mean L_obj {l_obj[0]:.3f} -> {l_obj[-1]:.3f} (ratio {train_ratio:.3f}), "
        f"held-out eval ratio {eval_ratio:.3f}, byte-identical rerun={same}, {elapsed:.1f}s for two runs",
    )
    assert ok


def test_ac8_sweep_structure(desk_scenes, tmp_path, record_criterion):
    default = SweepSpec()
    grid_ok = (
        list(default.k_values) == list(range(500, 4001, 100))
        and len(list(default.points())) == 36 * 3 * 2
        and len(set(default.seeds)) == 1
    )
    base = TrainConfig.from_flat(k=16, patch_size=(8, 8), epochs=2)
    spec = SweepSpec(k_values=(16, 32), omega_values=(1.0,), alpha_values=(0.0, 2.5), seeds=(0,), base=base)
    outputs = []
    for name in ("a", "b"):
        res, tab = tmp_path / f"{name}.csv", tmp_path / f"{name}_table.csv"
        run_sweep(spec, desk_scenes, res, tab, timing=False)
        outputs.append((res.read_bytes(), tab.read_bytes()))
    with open(tmp_path / "a.csv") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header_ok = reader.fieldnames == RESULT_FIELDS
    with open(tmp_path / "a_table.csv") as fh:
        table_ok = next(csv.reader(fh)) == TABLE_FIELDS
    rows_ok = [(r["k"], r["alpha"]) for r in rows] == [("16", "0.0"), ("16", "2.5"), ("32", "0.0"), ("32", "2.5")]
    ok = grid_ok and header_ok and table_ok and rows_ok and outputs[0] == outputs[1]
    record_criterion(
        "AC8 declared scope",
        ok,
        "sweep grid, CSV layout and fixed-seed reruns verified; detection AP tables, black-box transfer, "
        "the objectness-vs-K curve of a real detector and all physical-world results are not reproduced "
        "(they need a pretrained detector, its dataset or hardware)",
    )
    assert ok
