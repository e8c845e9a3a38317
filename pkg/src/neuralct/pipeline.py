"""End-to-end reconstruction: initialization, training, refinement and export.

::

    sinogram -> FBP movie -> GMM classes -> SDF images -> fit_initial
             -> fit_sinogram -> binarize -> (refine: SDF images -> fit_initial
             -> fit_sinogram)* -> intensity movie

Also holds the evaluation metrics (per-frame MSE and Dice) and their
median/IQR summaries.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, is_dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .fbp import FbpConfig, fbp_movie
from .initseg import SdfSmoothing, binary_to_sdf, gmm_segment
from .neural import (
    DEFAULT_F_MAX,
    DEFAULT_HIDDEN,
    DEFAULT_M,
    DEFAULT_MU,
    NeuralSdf,
    binarize,
    discretize,
    occupancy,
    pixel_scale,
)
from .optim import LossWeights, OptimConfig, fit_initial, fit_sinogram
from .scene import GridSpec, IntensityMovie

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Reconstruction settings.

    frames : number of output frames, evenly spaced over the acquisition
        (``None`` gives one frame per view).
    init_iterations : steps of the direct SDF fit (``None`` uses
        ``optim.max_iterations``).
    class_intensity : fixed a(k) per class; ``None`` estimates it from the
        mixture model.
    """

    K: int = 1
    kappa: int = 3
    tau_fraction: float = 0.02
    refinement_passes: int = 1
    frames: int = None
    hidden: int = DEFAULT_HIDDEN
    M: int = DEFAULT_M
    f_max: float = DEFAULT_F_MAX
    mu: float = DEFAULT_MU
    init_iterations: int = None
    init_lr: float = None
    class_intensity: tuple = None
    seed: int = 0
    fbp: FbpConfig = field(default_factory=FbpConfig)
    smoothing: SdfSmoothing = field(default_factory=SdfSmoothing)
    optim: OptimConfig = field(default_factory=OptimConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.K < 1 or self.refinement_passes < 0:
            raise ConfigError("K must be >= 1 and refinement_passes >= 0")
        if self.frames is not None and self.frames < 2:
            raise ConfigError(f"need at least 2 output frames, got {self.frames}")
        if self.class_intensity is not None and len(self.class_intensity) != self.K:
            raise ConfigError(f"class_intensity needs {self.K} entries")


@dataclass
class RunRecord:
    config: dict
    schedule: dict
    scene: dict = None
    seeds: dict = field(default_factory=dict)
    class_intensity: list = None
    stage_seconds: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    metrics: list = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, default=_jsonable)


def _jsonable(obj):
    if is_dataclass(obj):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    return str(obj)


class _Stages:
    """Times stages and rewraps failures with the stage name."""

    def __init__(self, record):
        self.record = record

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except NumericalError as exc:
            if exc.stage is None:
                exc.stage = name
            raise
        except ConfigError as exc:
            raise NumericalError(f"{name}: {exc}", stage=name) from exc
        self.record.stage_seconds[name] = self.record.stage_seconds.get(name, 0.0) + (
            time.perf_counter() - start
        )
        log.info("stage %s done in %.1fs", name, time.perf_counter() - start)
        return out


def _new_model(cfg, class_intensity, seed):
    return NeuralSdf(
        K=cfg.K,
        M=cfg.M,
        f_max=cfg.f_max,
        hidden=cfg.hidden,
        class_intensity=class_intensity,
        mu=cfg.mu,
        seed=seed,
    )


def _train(stages, record, cfg, sdf, times, sino, class_intensity, seed, tag):
    model = _new_model(cfg, class_intensity, seed)
    optim = replace(cfg.optim, seed=seed)
    init_optim = replace(optim, lr=cfg.init_lr or optim.lr)
    init = stages.run(
        f"fit_initial{tag}", fit_initial, model, sdf, times, init_optim, cfg.weights, cfg.init_iterations
    )
    train = stages.run(f"fit_sinogram{tag}", fit_sinogram, model, sino, optim, cfg.weights)
    record.traces[f"fit_initial{tag}"] = init.trace
    record.traces[f"fit_sinogram{tag}"] = train.trace
    return model


def reconstruct(sino, K=None, cfg=PipelineConfig(), scene=None, return_passes=False):
    """Reconstruct a time-resolved intensity movie from a sinogram.

    Returns ``(movie, record)``; with ``return_passes`` a third item lists
    the exported movie after each pass (initial fit first).
    """
    if K is not None and K != cfg.K:
        cfg = replace(cfg, K=K)
    n = sino.n_det
    T = cfg.frames or sino.schedule.n_views
    grid = GridSpec(n=n, T=T)
    times = grid.times()
    record = RunRecord(
        config=asdict(cfg),
        schedule={"n_views": sino.schedule.n_views, "rotations": sino.schedule.rotations, "n_det": n},
        scene=asdict(scene) if scene is not None else None,
        seeds={"pipeline": cfg.seed},
    )
    stages = _Stages(record)

    fbp = stages.run("fbp", fbp_movie, sino, times, cfg.fbp)
    seg = stages.run("gmm", gmm_segment, fbp.frames, cfg.K, cfg.kappa, cfg.seed, cfg.tau_fraction)
    intensity = tuple(cfg.class_intensity or seg.class_intensity)
    record.class_intensity = list(intensity)
    sdf = stages.run("sdf", binary_to_sdf, seg.masks, cfg.smoothing)

    passes = []
    model = None
    for p in range(cfg.refinement_passes + 1):
        tag = "" if p == 0 else f"_refine{p}"
        if p > 0:
            masks = stages.run(f"binarize{tag}", lambda: binarize(discretize(model, n, times), cfg.mu))
            sdf = stages.run(f"sdf{tag}", binary_to_sdf, masks, cfg.smoothing)
        model = _train(stages, record, cfg, sdf, times, sino, intensity, cfg.seed + p, tag)
        passes.append(stages.run(f"export{tag}", export_movie, model, grid))
    movie = passes[-1]
    return (movie, record, passes) if return_passes else (movie, record)


def export_movie(model, grid):
    """Intensity movie of a trained model on ``grid``."""
    values = discretize(model, grid.n, grid.times()).values
    a = model.class_intensity.detach().numpy().astype(np.float64)
    frames = (occupancy(values * pixel_scale(grid.n), model.mu) * a[None, :, None, None]).sum(axis=1)
    if not np.all(np.isfinite(frames)):
        raise NumericalError("exported movie is not finite", stage="export")
    return IntensityMovie(grid, np.clip(frames, 0.0, 1.0), tuple(float(v) for v in a))


# -- metrics ------------------------------------------------------------------


def _frames(movie):
    return np.asarray(getattr(movie, "frames", movie), dtype=np.float64)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ConfigError(f"movie shapes differ: {a.shape} vs {b.shape}")


def mse(a, b):
    """Per-frame mean squared error."""
    a, b = _frames(a), _frames(b)
    _check_pair(a, b)
    return ((a - b) ** 2).mean(axis=(-2, -1))


def dice(pred, truth, fg_intensity=1.0):
    """Per-frame Dice of both movies thresholded at half the foreground intensity.

    Two empty masks score 1.
    """
    p, t = _frames(pred), _frames(truth)
    _check_pair(p, t)
    level = 0.5 * fg_intensity
    a, b = p > level, t > level
    inter = (a & b).sum(axis=(-2, -1))
    total = a.sum(axis=(-2, -1)) + b.sum(axis=(-2, -1))
    return np.where(total == 0, 1.0, 2.0 * inter / np.maximum(total, 1))


def summarize(values):
    """Median and interquartile range."""
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3)}


def metrics_table(truth, fbp, nct, fg_intensity=1.0):
    """Per-frame rows: frame, mse_fbp, mse_nct, dice_fbp, dice_nct."""
    cols = {
        "mse_fbp": mse(fbp, truth),
        "mse_nct": mse(nct, truth),
        "dice_fbp": dice(fbp, truth, fg_intensity),
        "dice_nct": dice(nct, truth, fg_intensity),
    }
    return [
        {"frame": i, **{k: float(v[i]) for k, v in cols.items()}} for i in range(len(cols["mse_fbp"]))
    ]


def evaluate(sino, truth, cfg=PipelineConfig(), scene=None):
    """Reconstruct, run FBP at the same times, and score both against ``truth``."""
    cfg = replace(cfg, frames=truth.grid.T)
    movie, record = reconstruct(sino, cfg=cfg, scene=scene)
    fbp = fbp_movie(sino, truth.grid.times(), cfg.fbp)
    fg = max(truth.class_intensity)
    record.metrics = metrics_table(truth, fbp, movie, fg)
    return movie, fbp, record


def repeat(sino, truth, seeds=(0, 1, 2, 3, 4), cfg=PipelineConfig(), scene=None):
    """Independent reconstructions over ``seeds``; returns the records."""
    return [evaluate(sino, truth, replace(cfg, seed=s), scene)[2] for s in seeds]
