"""Losses and training loops for the neural SDF.

``fit_initial`` fits the network directly to explicit SDF images;
``fit_sinogram`` fits it to the acquired sinogram through the
differentiable renderer and projector, regularized by Eikonal and
spatial/temporal total-variation terms. Both use Adam with a stepwise
learning-rate decay; ``plain_sgd`` switches to ``w <- w - lr * grad``.
"""
import copy
import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, NumericalError
from .neural import pixel_points, pixel_scale, render_intensity, save_model
from .projector import DEFAULT_K_SAMP, project


@dataclass(frozen=True)
class LossWeights:
    lambda_eik: float = 0.1
    lambda_tvs: float = 0.5
    lambda_tvt: float = 0.5
    lambda_init: float = 0.1

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ConfigError(f"loss weights must be nonnegative: {self}")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-5
    decay: float = 0.95
    decay_every: int = 200
    max_iterations: int = 5000
    min_loss: float = 0.08
    batch_times: int = 20
    seed: int = 0
    plain_sgd: bool = False
    k_samp: int = DEFAULT_K_SAMP
    checkpoint_every: int = 500
    checkpoint_dir: str = None
    edge_start: float = 1.0
    edge_steps: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.batch_times < 1 or self.max_iterations < 0:
            raise ConfigError("batch_times must be >= 1 and max_iterations >= 0")
        if not 0.0 < self.edge_start <= 1.0 or self.edge_steps < 0:
            raise ConfigError("edge_start must lie in (0, 1] and edge_steps be >= 0")

    def edge_factor(self, step):
        """Occupancy sharpness relative to nominal at ``step``.

        Rises geometrically from ``edge_start`` to 1 over ``edge_steps``, so
        early steps see a wider occupancy ramp and the final ones the nominal
        one.
        """
        if self.edge_steps == 0 or step >= self.edge_steps:
            return 1.0
        return self.edge_start ** (1.0 - step / self.edge_steps)


@dataclass
class FitResult:
    model: torch.nn.Module
    trace: list = field(default_factory=list)
    iterations: int = 0
    stopped_early: bool = False
    seconds: float = 0.0

    def final(self, key):
        return self.trace[-1][key] if self.trace else float("nan")


def gradients(loss, params):
    """Reverse-mode gradients of a scalar loss w.r.t. ``params``."""
    if loss.ndim != 0:
        raise ConfigError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss.item()}", stage="gradients")
    params = list(params)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


# Loss terms. Each takes a :class:`~neuralct.neural.Derivatives` evaluated on
# the pixel grid so the network runs once per step.

def sdf_loss(deriv, target):
    return (deriv.value - target).abs().mean()


def eikonal_loss(deriv, exclude=None):
    """Mean of | ||grad_x g||_2 - 1 |; ``exclude`` masks points out (P,) bool."""
    norm = torch.sqrt((deriv.grad_x**2).sum(dim=-1) + 1e-12)
    term = (norm - 1.0).abs()
    if exclude is not None:
        term = term[:, ~torch.as_tensor(exclude)]
    return term.mean()


def tv_losses(deriv):
    """(spatial, temporal) mean L1 norms of the SDF gradient."""
    return deriv.grad_x.abs().sum(dim=-1).mean(), deriv.grad_t.abs().mean()


def predicted_rows(model, deriv, angles, n, k_samp=DEFAULT_K_SAMP, edge=1.0):
    scale = pixel_scale(n) * edge
    images = render_intensity(deriv.value, model.class_intensity, model.mu, scale)
    images = images.reshape(len(angles), n, n)
    return project(images, angles, k_samp)


def sinogram_loss_from_rows(rows, predicted):
    """Mean absolute row difference measured in detector-pixel units."""
    n = rows.shape[-1]
    return (rows - predicted).abs().mean() * (n / 2.0)


def _eval(model, pts, times):
    return model.derivatives(pts, torch.as_tensor(times, dtype=model.dtype))


def loss_sdf(model, sdf_target, times, t_batch):
    """Mean |g - f| over the pixel grid for frames ``t_batch`` of the target."""
    n = sdf_target.n
    pts = pixel_points(n, model.dtype)
    t_batch = np.atleast_1d(t_batch)
    target = _target_tensor(sdf_target, model.dtype)[t_batch]
    return sdf_loss(_eval(model, pts, np.asarray(times)[t_batch]), target)


def loss_eikonal(model, n, t_batch, exclude=None):
    return eikonal_loss(_eval(model, pixel_points(n, model.dtype), np.atleast_1d(t_batch)), exclude)


def loss_tv(model, n, t_batch):
    return tv_losses(_eval(model, pixel_points(n, model.dtype), np.atleast_1d(t_batch)))


def loss_sinogram(model, sino, view_batch, k_samp=DEFAULT_K_SAMP):
    view_batch = np.atleast_1d(view_batch)
    n = sino.n_det
    times = sino.schedule.view_times[view_batch]
    angles = torch.as_tensor(sino.schedule.view_angles[view_batch], dtype=model.dtype)
    deriv = _eval(model, pixel_points(n, model.dtype), times)
    rows = torch.as_tensor(sino.rows[view_batch], dtype=model.dtype)
    return sinogram_loss_from_rows(rows, predicted_rows(model, deriv, angles, n, k_samp))


def alg4_loss(model, sino, view_batch, weights, k_samp=DEFAULT_K_SAMP, edge=1.0):
    """Total sinogram-fitting objective and its terms for one view batch."""
    view_batch = np.atleast_1d(view_batch)
    n = sino.n_det
    times = sino.schedule.view_times[view_batch]
    angles = torch.as_tensor(sino.schedule.view_angles[view_batch], dtype=model.dtype)
    deriv = _eval(model, pixel_points(n, model.dtype), times)
    rows = torch.as_tensor(sino.rows[view_batch], dtype=model.dtype)
    l_sino = sinogram_loss_from_rows(rows, predicted_rows(model, deriv, angles, n, k_samp, edge))
    l_eik = eikonal_loss(deriv)
    l_tvs, l_tvt = tv_losses(deriv)
    total = (
        l_sino
        + weights.lambda_eik * l_eik
        + weights.lambda_tvs * l_tvs
        + weights.lambda_tvt * l_tvt
    )
    return total, {"sinogram": l_sino, "eikonal": l_eik, "tvs": l_tvs, "tvt": l_tvt}


def _target_tensor(sdf_target, dtype):
    v = np.asarray(sdf_target.values)  # (T, K, n, n)
    t = torch.as_tensor(v, dtype=dtype).permute(0, 2, 3, 1)
    return t.reshape(v.shape[0], -1, v.shape[1])


class _Stepper:
    """Adam (or plain SGD) with stepwise decay of the learning rate."""

    def __init__(self, model, cfg):
        params = [p for p in model.parameters() if p.requires_grad]
        if cfg.plain_sgd:
            self.opt = torch.optim.SGD(params, lr=cfg.lr)
        else:
            self.opt = torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
        self.sched = torch.optim.lr_scheduler.StepLR(self.opt, cfg.decay_every, gamma=cfg.decay)

    @property
    def lr(self):
        return self.opt.param_groups[0]["lr"]

    def step(self, loss):
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        self.sched.step()


def _batch(rng, population, size):
    return np.sort(rng.choice(population, size=min(size, population), replace=False))


def _check_finite(loss, stage, model, step, last_good):
    if not torch.isfinite(loss):
        raise NumericalError(
            f"non-finite loss at step {step}", stage=stage, checkpoint=last_good or copy.deepcopy(model)
        )


def _maybe_checkpoint(cfg, model, stage, step):
    if cfg.checkpoint_dir and cfg.checkpoint_every and step > 0 and step % cfg.checkpoint_every == 0:
        path = Path(cfg.checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        save_model(model, path / f"{stage}_{step:05d}")


def fit_initial(model, sdf_target, times, cfg=OptimConfig(), weights=LossWeights(), iterations=None):
    """Fit the network to explicit SDF images (direct supervision + Eikonal).

    ``times`` gives the acquisition time of each target frame. Each step
    samples ``cfg.batch_times`` frames.
    """
    iterations = cfg.max_iterations if iterations is None else iterations
    rng = np.random.default_rng(cfg.seed)
    times = np.asarray(times, dtype=np.float64)
    if len(times) != sdf_target.T:
        raise ConfigError(f"{len(times)} times for {sdf_target.T} target frames")
    pts = pixel_points(sdf_target.n, model.dtype)
    target = _target_tensor(sdf_target, model.dtype)
    stepper = _Stepper(model, cfg)
    result = FitResult(model)
    start = time.perf_counter()
    for step in range(iterations):
        idx = _batch(rng, len(times), cfg.batch_times)
        deriv = _eval(model, pts, times[idx])
        l_sdf = sdf_loss(deriv, target[idx])
        l_eik = eikonal_loss(deriv)
        loss = l_sdf + weights.lambda_init * l_eik
        _check_finite(loss, "fit_initial", model, step, None)
        lr = stepper.lr
        stepper.step(loss)
        result.trace.append(
            {"step": step, "lr": lr, "total": loss.item(), "sdf": l_sdf.item(), "eikonal": l_eik.item()}
        )
        _maybe_checkpoint(cfg, model, "init", step)
    result.iterations = iterations
    result.seconds = time.perf_counter() - start
    return result


def fit_sinogram(model, sino, cfg=OptimConfig(), weights=LossWeights(), iterations=None):
    """Fit the network to the sinogram by analysis-by-synthesis.

    Each step samples ``cfg.batch_times`` views, renders the model at their
    times, projects at their angles and minimizes the L1 row mismatch plus
    the weighted regularizers. Stops when the sinogram term falls below
    ``cfg.min_loss``.
    """
    iterations = cfg.max_iterations if iterations is None else iterations
    rng = np.random.default_rng(cfg.seed + 1)
    stepper = _Stepper(model, cfg)
    result = FitResult(model)
    last_good = None
    start = time.perf_counter()
    for step in range(iterations):
        idx = _batch(rng, sino.schedule.n_views, cfg.batch_times)
        edge = cfg.edge_factor(step)
        loss, terms = alg4_loss(model, sino, idx, weights, cfg.k_samp, edge)
        _check_finite(loss, "fit_sinogram", model, step, last_good)
        row = {"step": step, "lr": stepper.lr, "total": loss.item()}
        row.update({k: v.item() for k, v in terms.items()})
        result.trace.append(row)
        if edge == 1.0 and row["sinogram"] < cfg.min_loss:
            result.stopped_early = True
            break
        if cfg.checkpoint_dir and step % cfg.checkpoint_every == 0:
            last_good = copy.deepcopy(model)
        stepper.step(loss)
        _maybe_checkpoint(cfg, model, "train", step)
    result.iterations = len(result.trace)
    result.seconds = time.perf_counter() - start
    return result


def write_trace(trace, path):
    """Loss trace as CSV with one row per step."""
    if not trace:
        return
    keys = list(trace[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(trace)
