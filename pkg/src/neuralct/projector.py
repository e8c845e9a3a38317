"""Time-resolved 2D parallel-beam projector and its adjoint.

A view at angle ``theta`` integrates the image along lines
``{R_theta (l, s) : s in R}``; ``l`` is the detector coordinate. The image is
resampled (bilinear, zero outside the FOV) on a ``k_samp``-times finer
rotated grid, summed along columns, and the fine detector bins are
average-pooled back to ``n`` bins.

The torch functions are differentiable and used inside training; the numpy
wrappers are convenient for simulation and FBP.
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError

DEFAULT_K_SAMP = 2
VIEWS_PER_ROTATION = 360
_CHUNK = 64


@dataclass(frozen=True)
class GantrySchedule:
    """View index -> (time, angle) for ``rotations`` full gantry turns."""

    n_views: int
    rotations: int = 1

    def __post_init__(self):
        if self.n_views < 2:
            raise ConfigError(f"need at least 2 views, got {self.n_views}")
        if int(self.rotations) != self.rotations or self.rotations < 1:
            raise ConfigError(f"rotations must be a positive integer, got {self.rotations}")

    @classmethod
    def per_rotation(cls, views_per_rotation=VIEWS_PER_ROTATION, rotations=1):
        return cls(views_per_rotation * rotations, rotations)

    @property
    def view_times(self):
        return np.arange(self.n_views) / (self.n_views - 1)

    @property
    def view_angles(self):
        return 2.0 * np.pi * self.rotations * self.view_times

    @property
    def views_per_rotation(self):
        return self.n_views // self.rotations

    def nearest_frames(self, n_frames):
        """Index of the movie frame nearest in time to each view."""
        return np.rint(self.view_times * (n_frames - 1)).astype(int)


@dataclass
class Sinogram:
    rows: np.ndarray
    schedule: GantrySchedule

    def __post_init__(self):
        self.rows = np.asarray(self.rows)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.schedule.n_views:
            raise ConfigError(
                f"sinogram rows {self.rows.shape} do not match {self.schedule.n_views} views"
            )
        if not np.all(np.isfinite(self.rows)):
            raise ConfigError("sinogram contains non-finite values")

    @property
    def n_det(self):
        return self.rows.shape[1]

    @property
    def det_coords(self):
        return -1.0 + (np.arange(self.n_det) + 0.5) * 2.0 / self.n_det


def _sampling_grid(angles, n, k_samp, dtype):
    m = n * k_samp
    u = -1.0 + (torch.arange(m, dtype=dtype) + 0.5) * 2.0 / m
    yy, xx = torch.meshgrid(u, u, indexing="ij")
    c = torch.cos(angles).to(dtype)[:, None, None]
    s = torch.sin(angles).to(dtype)[:, None, None]
    gx = xx * c - yy * s
    gy = xx * s + yy * c
    return torch.stack([gx, gy], dim=-1)


def project(images, angles, k_samp=DEFAULT_K_SAMP):
    """Batched forward projection.

    images : (B, n, n) tensor, one image per view.
    angles : (B,) tensor of gantry angles in radians.
    Returns (B, n) line integrals.
    """
    if images.ndim != 3 or images.shape[-1] != images.shape[-2]:
        raise ConfigError(f"expected a batch of square images, got shape {tuple(images.shape)}")
    if k_samp < 1:
        raise ConfigError(f"k_samp must be >= 1, got {k_samp}")
    b, n, _ = images.shape
    angles = torch.as_tensor(angles, dtype=images.dtype)
    grid = _sampling_grid(angles, n, k_samp, images.dtype)
    fine = F.grid_sample(
        images[:, None], grid, mode="bilinear", padding_mode="zeros", align_corners=False
    )[:, 0]
    m = n * k_samp
    rows = fine.sum(dim=1) * (2.0 / m)
    return rows.reshape(b, n, k_samp).mean(dim=-1)


def backproject(rows, angles, n=None, k_samp=DEFAULT_K_SAMP):
    """Exact adjoint of :func:`project` for a batch of rows; returns (B, n, n)."""
    rows = torch.as_tensor(rows)
    n = rows.shape[-1] if n is None else n
    x = torch.zeros(rows.shape[0], n, n, dtype=rows.dtype, requires_grad=True)
    with torch.enable_grad():
        y = project(x, angles, k_samp)
        (g,) = torch.autograd.grad(y, x, grad_outputs=rows)
    return g.detach()


def _as_tensor(a):
    a = np.ascontiguousarray(a)
    dtype = torch.float64 if a.dtype == np.float64 else torch.float32
    return torch.as_tensor(a, dtype=dtype)


def project_view(image, angle, k_samp=DEFAULT_K_SAMP):
    """Line integrals of one square image at one angle (numpy in, numpy out)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ConfigError(f"image must be square, got shape {image.shape}")
    t = _as_tensor(image)[None]
    with torch.no_grad():
        return project(t, torch.tensor([float(angle)]), k_samp)[0].numpy()


def backproject_view(row, angle, k_samp=DEFAULT_K_SAMP):
    """Adjoint of :func:`project_view` for one detector row."""
    t = _as_tensor(row)[None]
    return backproject(t, torch.tensor([float(angle)]), k_samp=k_samp)[0].numpy()


def project_views(images, angles, k_samp=DEFAULT_K_SAMP):
    """Numpy batch projection, chunked to bound memory."""
    images = np.asarray(images)
    angles = np.asarray(angles, dtype=np.float64)
    out = np.empty(images.shape[:2], dtype=images.dtype)
    with torch.no_grad():
        for s in range(0, len(angles), _CHUNK):
            sl = slice(s, s + _CHUNK)
            out[sl] = project(_as_tensor(images[sl]), torch.from_numpy(angles[sl]), k_samp).numpy()
    return out


def backproject_views(rows, angles, k_samp=DEFAULT_K_SAMP):
    """Numpy batch backprojection: one (n, n) image per row."""
    rows = np.asarray(rows)
    angles = np.asarray(angles, dtype=np.float64)
    n = rows.shape[1]
    out = np.empty((len(rows), n, n), dtype=rows.dtype)
    for s in range(0, len(angles), _CHUNK):
        sl = slice(s, s + _CHUNK)
        out[sl] = backproject(_as_tensor(rows[sl]), torch.from_numpy(angles[sl]), n, k_samp).numpy()
    return out


def render_sinogram(movie, schedule, k_samp=DEFAULT_K_SAMP):
    """Acquire a sinogram of a moving scene: one view per schedule time.

    View ``j`` projects the movie frame nearest in time to ``view_times[j]``
    at ``view_angles[j]``.
    """
    frames = np.asarray(movie.frames)
    if frames.ndim != 3 or frames.shape[1] != frames.shape[2] or frames.shape[1] != movie.grid.n:
        raise ConfigError(f"movie frames {frames.shape} do not match grid n={movie.grid.n}")
    idx = schedule.nearest_frames(frames.shape[0])
    rows = project_views(frames[idx], schedule.view_angles, k_samp)
    return Sinogram(rows, schedule)
