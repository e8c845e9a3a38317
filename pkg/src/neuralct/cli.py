"""``nct`` command-line front end.

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures (the failing stage is named on stderr). ``NCT_THREADS`` sets the
number of worker processes; each job runs torch on a single thread.
"""
import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, NeuralCTError, NumericalError
from .fbp import FbpConfig, fbp_movie
from .optim import LossWeights, OptimConfig, write_trace
from .pipeline import PipelineConfig, dice, metrics_table, mse, reconstruct, summarize
from .projector import GantrySchedule, render_sinogram
from .scene import GridSpec, make_scene

log = logging.getLogger("neuralct")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
METRIC_COLUMNS = ["frame", "mse_fbp", "mse_nct", "dice_fbp", "dice_nct"]


def worker_count():
    """Size of the job pool, from ``NCT_THREADS`` (default 1)."""
    raw = os.environ.get("NCT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"NCT_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("NCT_THREADS must be >= 1")
    return value


def _single_thread():
    # one intra-op thread per job keeps reductions, and so outputs, identical
    # whether a job runs alone or inside the pool
    import torch

    torch.set_num_threads(1)


# -- jobs ---------------------------------------------------------------------


def expand_jobs(spec):
    """(name, overrides, seed) for every sweep point and seed."""
    axes = sorted(spec.sweep)
    points = itertools.product(*(spec.sweep[a] for a in axes)) if axes else [()]
    jobs = []
    for point in points:
        overrides = dict(zip(axes, point))
        for seed in spec.seeds:
            parts = [f"{a}={_fmt(v)}" for a, v in overrides.items()] + [f"seed={seed}"]
            jobs.append(("_".join(parts), overrides, seed))
    return jobs


def _fmt(value):
    return f"{value:g}" if isinstance(value, float) else str(value)


def _section(spec, name, overrides):
    values = dict(getattr(spec, name)) if name != "scene" else {}
    for axis, value in overrides.items():
        section, key = io.SWEEP_AXES[axis]
        if section == name:
            values[key] = value
    return values


def job_scene(spec, overrides):
    changes = _section(spec, "scene", overrides)
    try:
        return replace(spec.scene, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def job_config(spec, overrides, seed):
    """PipelineConfig for one job of an :class:`~neuralct.io.ExperimentSpec`."""
    try:
        optim = OptimConfig(**{**_section(spec, "optim", overrides), "k_samp": spec.k_samp})
        weights = LossWeights(**_section(spec, "weights", overrides))
        model = _section(spec, "model", overrides)
        pipe = dict(spec.pipeline)
        fbp = FbpConfig(
            window_views=pipe.pop("fbp_window_views", None),
            pad_factor=pipe.pop("fbp_pad_factor", 2),
            apodization=pipe.pop("fbp_apodization", None),
            k_samp=spec.k_samp,
        )
        if "class_intensity" in pipe and pipe["class_intensity"] is not None:
            value = pipe["class_intensity"]
            pipe["class_intensity"] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        return PipelineConfig(
            frames=spec.frames, seed=seed, fbp=fbp, optim=optim, weights=weights, **model, **pipe
        )
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from None


def simulate(spec, overrides):
    scene = job_scene(spec, overrides)
    grid = GridSpec(n=spec.n, T=spec.frames)
    movie = make_scene(scene, grid)
    schedule = GantrySchedule.per_rotation(spec.views_per_rotation, spec.rotations)
    return scene, movie, render_sinogram(movie, schedule, spec.k_samp)


# -- artifacts ----------------------------------------------------------------


def write_png(image, path):
    from PIL import Image

    data = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    # row 0 is the bottom of the field of view
    Image.fromarray(data[::-1]).save(path)


def frame_strip(movie, count=8):
    frames = np.asarray(movie.frames)
    idx = np.linspace(0, len(frames) - 1, min(count, len(frames))).round().astype(int)
    return np.concatenate([frames[i] for i in idx], axis=1)


def write_csv(rows, path, columns=None):
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in columns})


def _cell(value):
    return f"{value:.9g}" if isinstance(value, float) else value


# -- commands -----------------------------------------------------------------


def cmd_simulate(args):
    spec = io.load_spec(args.spec)
    out = Path(spec.output)
    seen = set()
    for name, overrides, _ in expand_jobs(spec):
        key = tuple(sorted((k, v) for k, v in overrides.items() if io.SWEEP_AXES[k][0] == "scene"))
        if key in seen:
            continue
        seen.add(key)
        scene, movie, sino = simulate(spec, overrides)
        job_dir = out / (_scene_name(key) or "scene")
        io.save_movie(movie, job_dir / "truth")
        io.save_sinogram(sino, job_dir / "sinogram")
        write_png(frame_strip(movie), job_dir / "truth.png")
        (job_dir / "scene.json").write_text(json.dumps(asdict(scene), indent=2, sort_keys=True) + "\n")
        print(job_dir)
    return 0


def _scene_name(key):
    return "_".join(f"{k}={_fmt(v)}" for k, v in key)


def cmd_fbp(args):
    sino = io.load(args.sino)
    if not hasattr(sino, "schedule"):
        raise ConfigError(f"{args.sino} is not a sinogram")
    frames = args.frames or sino.schedule.n_views
    cfg = FbpConfig(window_views=args.window, apodization=args.apodization)
    movie = fbp_movie(sino, GridSpec(n=sino.n_det, T=frames).times(), cfg)
    io.save_movie(movie, args.out)
    return 0


def run_job(spec, name, overrides, seed):
    """Simulate, reconstruct and score one job; returns its summary row."""
    _single_thread()
    out = Path(spec.output) / name
    out.mkdir(parents=True, exist_ok=True)
    scene, truth, sino = simulate(spec, overrides)
    cfg = job_config(spec, overrides, seed)
    cfg = replace(cfg, optim=replace(cfg.optim, checkpoint_dir=str(out / "checkpoints")))
    movie, record = reconstruct(sino, cfg=cfg, scene=scene)
    fbp = fbp_movie(sino, truth.grid.times(), cfg.fbp)
    fg = max(truth.class_intensity)
    table = metrics_table(truth, fbp, movie, fg)
    record.metrics = table
    io.save_movie(truth, out / "truth")
    io.save_sinogram(sino, out / "sinogram")
    io.save_movie(fbp, out / "fbp")
    io.save_movie(movie, out / "nct")
    write_csv(table, out / "metrics.csv", METRIC_COLUMNS)
    for stage, trace in record.traces.items():
        write_trace(trace, out / f"trace_{stage}.csv")
    record.traces = {k: f"trace_{k}.csv" for k in record.traces}
    record.stage_seconds = {}  # wall time is not reproducible; kept in the log
    (out / "record.json").write_text(record.to_json() + "\n")
    for label, m in (("truth", truth), ("fbp", fbp), ("nct", movie)):
        write_png(frame_strip(m), out / f"{label}.png")
    row = {"job": name, "seed": seed, **{k: overrides.get(k, "") for k in sorted(spec.sweep)}}
    for col in METRIC_COLUMNS[1:]:
        stats = summarize([r[col] for r in table])
        row.update({f"{col}_median": stats["median"], f"{col}_q1": stats["q1"], f"{col}_q3": stats["q3"]})
    return row


def cmd_reconstruct(args):
    spec = io.load_spec(args.spec)
    jobs = expand_jobs(spec)
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_job_tuple, [(spec, *job) for job in jobs]))
    else:
        rows = [run_job(spec, *job) for job in jobs]
    out = Path(spec.output)
    write_csv(rows, out / "summary.csv")
    make_plots(out)
    print(out / "summary.csv")
    return 0


def _run_job_tuple(args):
    return run_job(*args)


def cmd_metrics(args):
    pred, truth = io.load(args.pred), io.load(args.truth)
    if not hasattr(pred, "grid") or not hasattr(truth, "grid"):
        raise ConfigError("metrics need two intensity movies")
    if pred.grid.n != truth.grid.n or pred.grid.T != truth.grid.T:
        raise ConfigError(
            f"grids differ: pred n={pred.grid.n} T={pred.grid.T}, truth n={truth.grid.n} T={truth.grid.T}"
        )
    fg = args.fg if args.fg is not None else max(truth.class_intensity)
    m, d = mse(pred, truth), dice(pred, truth, fg)
    rows = [{"frame": i, "mse": float(m[i]), "dice": float(d[i])} for i in range(len(m))]
    if args.out:
        write_csv(rows, args.out)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=["frame", "mse", "dice"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
    return 0


def cmd_plot(args):
    paths = make_plots(Path(args.csv_dir))
    if not paths:
        raise ConfigError(f"nothing to plot in {args.csv_dir}")
    for p in paths:
        print(p)
    return 0


# -- plots --------------------------------------------------------------------


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def make_plots(directory):
    """Plot every metrics.csv (per-frame curves) and summary.csv (sweeps) found."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    written = []
    for path in sorted(directory.rglob("metrics.csv")):
        rows = _read_csv(path)
        if not rows or "dice_nct" not in rows[0]:
            continue
        frames = [int(r["frame"]) for r in rows]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        for ax, metric in zip(axes, ("dice", "mse")):
            for method in ("fbp", "nct"):
                ax.plot(frames, [float(r[f"{metric}_{method}"]) for r in rows], label=method.upper())
            ax.set_xlabel("frame")
            ax.set_ylabel(metric.upper())
            ax.legend()
        fig.tight_layout()
        target = path.with_name("metrics.png")
        fig.savefig(target, dpi=100)
        plt.close(fig)
        written.append(target)

    summary = directory / "summary.csv"
    if summary.exists():
        written += _plot_summary(_read_csv(summary), directory, plt)
    return written


def _group(rows, keys):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(float(r[k]) for k in keys), []).append(r)
    return dict(sorted(groups.items()))


def _plot_summary(rows, directory, plt):
    if not rows:
        return []
    axes = [k for k in io.SWEEP_AXES if k in rows[0] and rows[0][k] != ""]
    written = []
    for axis in axes:
        if axis in ("lambda_tvs", "lambda_tvt") and {"lambda_tvs", "lambda_tvt"} <= set(axes):
            continue
        groups = _group(rows, [axis])
        x = [k[0] for k in groups]
        fig, panels = plt.subplots(1, 2, figsize=(9, 3.2))
        for ax, metric in zip(panels, ("dice", "mse")):
            for method in ("fbp", "nct"):
                vals = [[float(r[f"{metric}_{method}_median"]) for r in g] for g in groups.values()]
                ax.errorbar(x, [np.mean(v) for v in vals], yerr=[np.std(v) for v in vals],
                            label=method.upper(), marker="o", capsize=3)
            ax.set_xlabel(axis)
            ax.set_ylabel(f"median {metric.upper()}")
            ax.legend()
        fig.tight_layout()
        target = directory / f"sweep_{axis}.png"
        fig.savefig(target, dpi=100)
        plt.close(fig)
        written.append(target)
    if {"lambda_tvs", "lambda_tvt"} <= set(axes):
        groups = _group(rows, ["lambda_tvs", "lambda_tvt"])
        xs = sorted({k[0] for k in groups})
        ys = sorted({k[1] for k in groups})
        grid = np.full((len(ys), len(xs)), np.nan)
        for (a, b), g in groups.items():
            grid[ys.index(b), xs.index(a)] = np.mean([float(r["dice_nct_median"]) for r in g])
        fig, ax = plt.subplots(figsize=(4.5, 4))
        im = ax.imshow(grid, origin="lower", vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
        ax.set_yticks(range(len(ys)), [f"{v:g}" for v in ys])
        ax.set_xlabel("lambda_tvs")
        ax.set_ylabel("lambda_tvt")
        fig.colorbar(im, label="median Dice (NCT)")
        fig.tight_layout()
        target = directory / "sweep_lambda.png"
        fig.savefig(target, dpi=100)
        plt.close(fig)
        written.append(target)
    return written


# -- entry point --------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="nct", description="Dynamic CT reconstruction with neural SDFs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render scene movies and sinograms from a spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fbp", help="sliding-window FBP of a sinogram")
    p.add_argument("sino")
    p.add_argument("out")
    p.add_argument("--frames", type=int, default=None, help="output frames (default: one per view)")
    p.add_argument("--window", type=int, default=None, help="views per frame (default: one rotation)")
    p.add_argument("--apodization", choices=["cosine"], default=None)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("reconstruct", help="simulate, run FBP and NeuralCT, write metrics and plots")
    p.add_argument("spec")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="per-frame MSE and Dice of a movie against ground truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--fg", type=float, default=None, help="foreground intensity (default: from truth)")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("plot", help="plot metrics.csv / summary.csv files under a directory")
    p.add_argument("csv_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        worker_count()
        _single_thread()
        return args.func(args)
    except ConfigError as exc:
        print(f"nct: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"nct: numerical failure in stage {exc.stage or 'unknown'}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NeuralCTError as exc:
        print(f"nct: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
