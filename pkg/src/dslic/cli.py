"""Command line interface: ``dslic {cluster,gradcheck,toy,train,sweep,fixtures}``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 check failed,
4 every gradient probe was excluded.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .autodiff import AllProbesExcludedError, grad_check, toy_optimize, write_trace_csv
from .fixtures import desk_photo, write_desk_scenes
from .image import ImageFormatError, read_image, write_image
from .pipeline import FLAT_DEFAULTS, TrainConfig, read_config, save_checkpoint, train_patch
from .slic import SlicConfig, reconstruct, run_slic, write_assignment_csv, write_centroids_csv
from .sweep import SweepSpec, run_sweep
from .transforms import load_scenes

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECK, EXIT_EXCLUDED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _number_list(cast):
    def parse(text):
        out = []
        for part in text.split(","):
            part = part.strip()
            if ":" in part:
                lo, hi, step = (cast(v) for v in part.split(":"))
                out.extend(cast(v) for v in np.arange(lo, hi + step / 2, step))
            elif part:
                out.append(cast(part))
        if not out:
            raise argparse.ArgumentTypeError("empty list")
        return tuple(out)

    return parse


def _seed(args, config=None):
    if args.seed is not None:
        return args.seed
    if config and "seed" in config:
        return config["seed"]
    env = os.environ.get("DSLIC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DSLIC_SEED must be an integer, got {env!r}") from None
    return 0


def _out_dir(args):
    path = args.out_dir or "."
    os.makedirs(path, exist_ok=True)
    return path


def _slic_cfg(args):
    return SlicConfig(k=args.k, omega=args.omega, max_iters=args.max_iters, tol=args.tol)


def cmd_cluster(args):
    img = read_image(args.input)
    state = run_slic(img, _slic_cfg(args))
    out_dir = _out_dir(args)
    out = args.out or os.path.join(out_dir, "clustered.ppm")
    write_image(reconstruct(img, state), out)
    write_assignment_csv(state, os.path.join(out_dir, "assignment.csv"))
    write_centroids_csv(state, os.path.join(out_dir, "centroids.csv"))
    print(f"objective={state.objective!r} n_iter={state.n_iter} k={state.k}")
    return EXIT_OK


def cmd_gradcheck(args):
    seed = _seed(args)
    if args.input:
        img = read_image(args.input)
    else:
        img = np.random.default_rng(seed).random((*args.random, 3))
    target = read_image(args.target) if args.target else None
    try:
        report = grad_check(img, _slic_cfg(args), probes=args.probes, eps=args.eps, target=target, seed=seed)
    except AllProbesExcludedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXCLUDED
    report.write_csv(args.report or os.path.join(_out_dir(args), "gradcheck.csv"))
    print(report.summary())
    return EXIT_OK if report.max_rel_err <= args.tol_check else EXIT_CHECK


def cmd_toy(args):
    seed = _seed(args)
    cfg = _slic_cfg(args)
    target = read_image(args.target) if args.target else desk_photo(64)
    if not args.raw_target:
        target = reconstruct(target, run_slic(target, cfg))
    if args.start:
        start = read_image(args.start)
    else:
        start = np.random.default_rng(seed).random(target.shape)
    if start.shape != target.shape:
        raise UsageError(f"start {start.shape[:2]} and target {target.shape[:2]} differ in size")
    if args.frames > args.steps + 1:
        raise UsageError(f"--frames {args.frames} exceeds the {args.steps + 1} available steps")
    out_dir = _out_dir(args)
    frame_steps = set()
    if args.frames:
        frame_steps = set(np.linspace(0, args.steps, args.frames).round().astype(int).tolist())
        if len(frame_steps) < args.frames:
            frame_steps = set(range(args.frames))
        os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)

    def on_step(step, raw, clustered):
        if step in frame_steps:
            write_image(clustered, os.path.join(out_dir, "frames", f"frame_{step:05d}.ppm"))

    final, trace = toy_optimize(start, target, cfg, args.steps, args.lr, scale_lr=not args.no_scale_lr, callback=on_step)
    write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    write_image(start, os.path.join(out_dir, "original.ppm"))
    write_image(target, os.path.join(out_dir, "target.ppm"))
    write_image(final, os.path.join(out_dir, "trained.ppm"))
    write_image(reconstruct(final, run_slic(final, cfg)), os.path.join(out_dir, "trained_clustered.ppm"))
    ratio = trace[-1] / trace[0] if trace[0] > 0 else 0.0
    print(f"initial_loss={trace[0]!r} final_loss={trace[-1]!r} ratio={ratio!r}")
    return EXIT_OK


def _train_config(args, overrides):
    config = read_config(args.config) if args.config else {}
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    config["seed"] = _seed(args, config)
    return TrainConfig.from_flat(**config)


def _train_overrides(args):
    return {
        "k": args.k,
        "omega": args.omega,
        "alpha": args.alpha,
        "epochs": args.epochs,
        "lr": args.lr,
        "patch_size": args.patch_size,
        "victim_seed": args.victim_seed,
    }


def cmd_train(args):
    cfg = _train_config(args, _train_overrides(args))
    scenes = load_scenes(args.scenes)
    out_dir = _out_dir(args)
    report = train_patch(scenes, cfg)
    report.write_trace_csv(os.path.join(out_dir, "trace.csv"))
    write_image(report.patch, os.path.join(out_dir, "patch.ppm"))
    write_image(report.raw_patch, os.path.join(out_dir, "raw_patch.ppm"))
    save_checkpoint(os.path.join(out_dir, "checkpoint"), report)
    last = report.epochs[-1]
    print(f"epochs={len(report.epochs)} loss={last['loss']!r} l_obj={last['l_obj']!r} l_tv={last['l_tv']!r}")
    return EXIT_OK


def cmd_sweep(args):
    overrides = _train_overrides(args)
    if overrides["k"] is None and args.k_values:
        # the base config must validate against the swept patch size
        overrides["k"] = min(args.k_values)
    cfg = _train_config(args, overrides)
    spec_kw = {"base": cfg}
    for name in ("k_values", "omega_values", "alpha_values", "seeds"):
        value = getattr(args, name)
        if value is not None:
            spec_kw[name] = value
    if args.seeds is None:
        spec_kw["seeds"] = (cfg.seed,)
    spec = SweepSpec(**spec_kw)
    scenes = load_scenes(args.scenes)
    out_dir = _out_dir(args)
    results = args.results or os.path.join(out_dir, "sweep.csv")
    table = os.path.join(out_dir, "obj_vs_k.csv")
    rows = run_sweep(
        spec, scenes, results, table, jobs=args.jobs, timing=not args.no_timing,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    print(f"points={len(rows)} results={results} table={table}")
    return EXIT_OK


def cmd_fixtures(args):
    out_dir = _out_dir(args)
    write_desk_scenes(os.path.join(out_dir, "scenes"))
    write_image(desk_photo(64), os.path.join(out_dir, "photo.ppm"))
    print(f"wrote fixtures to {out_dir}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: DSLIC_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--out-dir", default=None, help="output directory (default: current)")
    common.add_argument("--config", default=None, help="flat key=value config file")

    slic = argparse.ArgumentParser(add_help=False)
    slic.add_argument("--k", type=int, default=256, help="number of superpixels")
    slic.add_argument("--omega", type=float, default=0.1, help="spatial sensitivity")
    slic.add_argument("--max-iters", type=int, default=10)

    parser = _Parser(prog="dslic", description="Differentiable SLIC superpixels and patch training.")
    parser.add_argument("--version", action="version", version=f"dslic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", parents=[common, slic], help="cluster one image")
    p.add_argument("--input", required=True)
    p.add_argument("--tol", type=float, default=1e-6, help="objective decrease threshold")
    p.add_argument("--out", default=None, help="clustered image path (.ppm or .png)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("gradcheck", parents=[common, slic], help="finite-difference check of the SLIC gradient")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--random", type=_size, metavar="HxW")
    p.add_argument("--target", default=None, help="check the pixel MSE against this image instead of sum")
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", dest="tol_check", type=float, default=1e-4, help="max relative error to pass")
    p.add_argument("--slic-tol", dest="tol", type=float, default=1e-6)
    p.add_argument("--report", default=None, help="report CSV path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toy", parents=[common], help="optimise an image through SLIC toward a target")
    p.add_argument("--start", default=None, help="start image (default: seeded noise)")
    p.add_argument("--random", action="store_true", help="use a seeded random start (the default)")
    p.add_argument("--target", default=None, help="target image (default: built-in 64x64 photo)")
    p.add_argument("--raw-target", action="store_true", help="do not cluster the target first")
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--no-scale-lr", action="store_true", help="use lr as is instead of lr * N / 2")
    p.add_argument("--frames", type=int, default=0, help="number of clustered frames to save")
    p.set_defaults(func=cmd_toy)

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--scenes", required=True, help="directory with scenes.csv")
    train_opts.add_argument("--k", type=int, default=None)
    train_opts.add_argument("--omega", type=float, default=None)
    train_opts.add_argument("--alpha", type=float, default=None)
    train_opts.add_argument("--epochs", type=int, default=None)
    train_opts.add_argument("--lr", type=float, default=None)
    train_opts.add_argument("--patch-size", type=_size, default=None, metavar="HxW")
    train_opts.add_argument("--victim-seed", type=int, default=None)

    p = sub.add_parser("train", parents=[common, train_opts], help="train one patch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common, train_opts], help="train patches over a parameter grid")
    p.add_argument("--k-values", type=_number_list(int), default=None, help="e.g. 500:4000:100 or 500,1000")
    p.add_argument("--omega-values", type=_number_list(float), default=None)
    p.add_argument("--alpha-values", type=_number_list(float), default=None)
    p.add_argument("--seeds", type=_number_list(int), default=None)
    p.add_argument("--results", default=None, help="results CSV path")
    p.add_argument("--no-timing", action="store_true", help="write wall_s as 0 for byte-reproducible output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fixtures", parents=[common], help="write the synthetic desk fixtures")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dslic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError) as exc:
        print(f"dslic: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"dslic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
