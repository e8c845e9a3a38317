"""Shared builders and oracles for the test suite."""
import numpy as np
import torch

from neuralct.neural import Derivatives, NeuralSdf, pixel_points, pixel_scale, render_intensity
from neuralct.optim import LossWeights, alg4_loss
from neuralct.projector import GantrySchedule, project, render_sinogram
from neuralct.scene import GridSpec, IntensityMovie, SceneConfig, make_scene


def disk_movie(n=64, T=4, radius=0.4, center=(0.0, 0.0)):
    cfg = SceneConfig(kind="translating_circle", radius=radius, orbit_radius=0.0, displacement_deg=0.0)
    movie = make_scene(cfg, GridSpec(n=n, T=T))
    if center != (0.0, 0.0):
        x, y = GridSpec(n=n, T=T).mesh()
        frame = ((x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius**2).astype(float)
        movie = IntensityMovie(movie.grid, np.repeat(frame[None], T, axis=0))
    return movie


# -- gradient check on the full sinogram objective ----------------------------

F64 = torch.float64


def toy_problem(n=16, seed=0, M=2):
    """2-16-16-1 encoder (and 2-16-16-2M velocity head) against a small moving-disk sinogram."""
    grid = GridSpec(n=n, T=8)
    cfg = SceneConfig(radius=0.3, orbit_radius=0.3, displacement_deg=40.0)
    sino = render_sinogram(make_scene(cfg, grid), GantrySchedule(8))
    model = NeuralSdf(M=M, encoder_dims=[2, 16, 16, 1], velocity_dims=[2, 16, 16, 2 * M], seed=seed, dtype=F64)
    return model, sino


def kink_arguments(model, sino, views):
    """Every quantity the objective passes through abs or clamp, for one state.

    Central differences are only meaningful when none of these changes sign
    between the two probe points.
    """
    n = sino.n_det
    times = torch.as_tensor(sino.schedule.view_times[views], dtype=F64)
    d = model.derivatives(pixel_points(n, F64), times)
    s = d.value * pixel_scale(n)
    z = model.mu * (torch.sigmoid(s) - 0.5)
    img = render_intensity(d.value, model.class_intensity, model.mu, pixel_scale(n))
    pred = project(img.reshape(len(views), n, n), torch.as_tensor(sino.schedule.view_angles[views], dtype=F64))
    resid = torch.as_tensor(sino.rows[views], dtype=F64) - pred
    return torch.cat(
        [t.reshape(-1) for t in (d.grad_x, d.grad_t, d.grad_x.norm(dim=-1) - 1, s, z - 1, resid)]
    )


def gradient_check(model, sino, views, weights=LossWeights(), h=1e-4):
    """Autograd vs central differences over all parameters.

    Returns ``(relative_error, checked, total, sinogram_grad_norm)``. The
    relative error is ``max |g_auto - g_fd| / max |g_fd|`` over parameters
    whose +-h probes keep every kink argument on the same side.
    """
    params = list(model.parameters())
    total, terms = alg4_loss(model, sino, views, weights)
    auto = torch.autograd.grad(total, params, retain_graph=True)
    sino_grad = torch.autograd.grad(terms["sinogram"], params, allow_unused=True)
    sino_norm = max(0.0 if g is None else g.abs().max().item() for g in sino_grad)
    a, f = [], []
    count = 0
    with torch.no_grad():
        base = torch.sign(kink_arguments(model, sino, views))
        for p, g in zip(params, auto):
            flat = p.view(-1)
            for i in range(flat.numel()):
                count += 1
                old = flat[i].item()
                vals, smooth = [], True
                for step in (h, -h):
                    flat[i] = old + step
                    vals.append(alg4_loss(model, sino, views, weights)[0].item())
                    smooth &= torch.equal(torch.sign(kink_arguments(model, sino, views)), base)
                flat[i] = old
                if smooth:
                    a.append(g.reshape(-1)[i].item())
                    f.append((vals[0] - vals[1]) / (2 * h))
    a, f = np.array(a), np.array(f)
    return float(np.abs(a - f).max() / np.abs(f).max()), len(a), count, sino_norm


class LookupSdf(torch.nn.Module):
    """Model-shaped wrapper around a closed-form SDF ``fn(x, y, t)``.

    Derivatives come from autograd on ``fn``, independent of the analytic
    network Jacobian.
    """

    def __init__(self, fn, class_intensity=(1.0,), mu=50.0):
        super().__init__()
        self.fn = fn
        self.mu = mu
        self.register_buffer("class_intensity", torch.tensor(class_intensity, dtype=F64))

    @property
    def dtype(self):
        return F64

    def forward(self, x, t):
        x = torch.as_tensor(x, dtype=F64)
        t = torch.atleast_1d(torch.as_tensor(t, dtype=F64))
        return torch.stack([self.fn(x[:, 0], x[:, 1], s) for s in t])[..., None]

    def derivatives(self, x, t):
        x = torch.as_tensor(x, dtype=F64).detach()
        t = torch.atleast_1d(torch.as_tensor(t, dtype=F64)).detach()
        values, grad_x, grad_t = [], [], []
        for s in t:
            xs, ys = x[:, 0].clone().requires_grad_(True), x[:, 1].clone().requires_grad_(True)
            ts = s.expand(len(x)).clone().requires_grad_(True)
            v = self.fn(xs, ys, ts)
            g = torch.autograd.grad(v.sum(), (xs, ys, ts), allow_unused=True)
            g = [torch.zeros_like(xs) if gi is None else gi for gi in g]
            values.append(v.detach())
            grad_x.append(torch.stack(g[:2], dim=-1))
            grad_t.append(g[2])
        return Derivatives(
            torch.stack(values)[..., None],
            torch.stack(grad_x)[:, :, None, :],
            torch.stack(grad_t)[..., None],
        )
