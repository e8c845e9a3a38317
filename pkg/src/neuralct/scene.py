"""Analytic dynamic phantoms: translating circle, beating ellipse, letter warp.

All scenes live on a square field of view spanning [-1, 1] in both axes and a
normalized acquisition time spanning [0, 1]. Image arrays are indexed
``[row, col]`` with row ``i`` at ``y = -1 + (i + 0.5) * 2 / n`` and column
``j`` at ``x = -1 + (j + 0.5) * 2 / n``.
"""
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .edt import signed_distance_transform
from .errors import ConfigError

SCENE_KINDS = ("translating_circle", "beating_ellipse", "letter_warp")
SUPERSAMPLE = 4


@dataclass(frozen=True)
class GridSpec:
    """Spatial pixel grid and temporal frame sampling."""

    n: int = 128
    T: int = 360
    fov: float = 2.0
    duration: float = 1.0

    def __post_init__(self):
        if self.n < 8:
            raise ConfigError(f"grid needs n >= 8, got {self.n}")
        if self.T < 2:
            raise ConfigError(f"grid needs T >= 2 frames, got {self.T}")

    @property
    def pixel_size(self):
        return self.fov / self.n

    def coords(self):
        """Pixel-center coordinates along one axis."""
        return -self.fov / 2 + (np.arange(self.n) + 0.5) * self.pixel_size

    def mesh(self):
        """``(x, y)`` arrays of shape (n, n) holding pixel-center coordinates."""
        c = self.coords()
        y, x = np.meshgrid(c, c, indexing="ij")
        return x, y

    def times(self):
        return np.linspace(0.0, self.duration, self.T)

    def subpixel_mesh(self, factor=SUPERSAMPLE):
        """Coordinates of a ``factor``-times finer grid covering the same FOV."""
        m = self.n * factor
        c = -self.fov / 2 + (np.arange(m) + 0.5) * self.fov / m
        y, x = np.meshgrid(c, c, indexing="ij")
        return x, y


@dataclass
class IntensityMovie:
    """Attenuation movie ``frames[t, row, col]`` on ``grid``."""

    grid: GridSpec
    frames: np.ndarray
    class_intensity: tuple = (1.0,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        expected = (self.grid.T, self.grid.n, self.grid.n)
        if self.frames.shape != expected:
            raise ConfigError(f"movie frames have shape {self.frames.shape}, grid implies {expected}")

    @property
    def times(self):
        return self.grid.times()


@dataclass
class SceneConfig:
    """Parameters for one of the analytic scenes.

    Only the fields relevant to ``kind`` are used. Lengths are in normalized
    units (the FOV is 2 wide).
    """

    kind: str = "translating_circle"
    intensity: float = 1.0
    # translating circle
    radius: float = 0.1
    orbit_radius: float = 0.5
    displacement_deg: float = 100.0
    start_angle_deg: float = 0.0
    # beating ellipse
    axis_x: float = 0.4
    axis_y: float = 0.3
    beat_amplitude: float = 0.25
    beat_rate: float = 3.0
    # letter warp
    glyphs: tuple = ("A", "B", "C", "B", "A")
    hold_fraction: float = 0.15
    glyph_dir: str = None

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        if not 0.0 <= self.displacement_deg <= 360.0:
            raise ConfigError(f"displacement_deg must lie in [0, 360], got {self.displacement_deg}")
        if self.radius <= 0 or self.axis_x <= 0 or self.axis_y <= 0:
            raise ConfigError("radii and axes must be positive")
        if not 0.0 < self.intensity <= 1.0:
            raise ConfigError(f"intensity must lie in (0, 1], got {self.intensity}")
        self.glyphs = tuple(self.glyphs)


def _area_sample(inside, grid, factor=SUPERSAMPLE):
    """Average a boolean function over ``factor x factor`` subsamples per pixel."""
    x, y = grid.subpixel_mesh(factor)
    sub = inside(x, y).astype(np.float64)
    n = grid.n
    return sub.reshape(n, factor, n, factor).mean(axis=(1, 3))


def circle_center(cfg, t):
    """Center of the translating circle at normalized time ``t``."""
    phi = np.deg2rad(cfg.start_angle_deg + cfg.displacement_deg * t)
    return cfg.orbit_radius * np.cos(phi), cfg.orbit_radius * np.sin(phi)


def make_translating_circle(cfg, grid):
    """Bright disk moving along an arc about the origin.

    The center sweeps ``cfg.displacement_deg`` degrees over the acquisition at
    distance ``cfg.orbit_radius`` from the image center.
    """
    half = grid.fov / 2
    if cfg.orbit_radius + cfg.radius >= half:
        raise ConfigError(
            f"circle leaves the field of view: orbit {cfg.orbit_radius} + radius {cfg.radius} >= {half}"
        )
    frames = np.empty((grid.T, grid.n, grid.n))
    for i, t in enumerate(grid.times()):
        cx, cy = circle_center(cfg, t)
        r2 = cfg.radius**2
        frames[i] = _area_sample(lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 <= r2, grid)
    return IntensityMovie(grid, cfg.intensity * frames, (cfg.intensity,))


def ellipse_axes(cfg, t):
    s = 1.0 + cfg.beat_amplitude * np.sin(2 * np.pi * cfg.beat_rate * np.asarray(t))
    return cfg.axis_x * s, cfg.axis_y * s


def make_beating_ellipse(cfg, grid):
    """Origin-centered ellipse whose axes pulse sinusoidally in phase."""
    if not 0.0 <= cfg.beat_amplitude < 1.0:
        raise ConfigError(f"beat amplitude must be in [0, 1), got {cfg.beat_amplitude}")
    peak = 1.0 + cfg.beat_amplitude
    if max(cfg.axis_x, cfg.axis_y) * peak >= grid.fov / 2:
        raise ConfigError("ellipse exceeds the field of view at peak expansion")
    frames = np.empty((grid.T, grid.n, grid.n))
    for i, t in enumerate(grid.times()):
        ax, ay = ellipse_axes(cfg, t)
        frames[i] = _area_sample(lambda x, y: (x / ax) ** 2 + (y / ay) ** 2 <= 1.0, grid)
    return IntensityMovie(grid, cfg.intensity * frames, (cfg.intensity,))


def load_glyphs(letters, glyph_dir=None):
    """Binary glyph masks (row 0 at y = -1) keyed by letter."""
    if glyph_dir is None:
        source = resources.files("neuralct") / "assets" / "glyphs.npz"
    else:
        source = Path(glyph_dir) / "glyphs.npz"
    try:
        with resources.as_file(source) as path, np.load(path) as data:
            size = int(data["size"])
            out = {}
            for letter in set(letters):
                if letter not in data:
                    raise ConfigError(f"no glyph asset for {letter!r}")
                out[letter] = np.unpackbits(data[letter], axis=-1, count=size).astype(bool)
    except FileNotFoundError as exc:
        raise ConfigError(f"glyph asset file missing: {source}") from exc
    return out


def _resample_mask(mask, m):
    """Box-resample a square binary mask to ``m x m`` and re-binarize."""
    size = mask.shape[0]
    if size % m == 0:
        f = size // m
        return mask.reshape(m, f, m, f).mean(axis=(1, 3)) >= 0.5
    idx = ((np.arange(m) + 0.5) * size / m).astype(int)
    return mask[np.ix_(idx, idx)]


def letter_schedule(n_keys, hold_fraction):
    """Start/end times of each keyframe hold.

    Holds of equal length are separated by equal-length transitions that fill
    the rest of the acquisition.
    """
    if n_keys < 1:
        raise ConfigError("letter warp needs at least one glyph")
    if n_keys == 1:
        return [(0.0, 1.0)]
    if not 0.0 < hold_fraction * n_keys < 1.0:
        raise ConfigError(f"hold fraction {hold_fraction} leaves no time for {n_keys - 1} transitions")
    move = (1.0 - n_keys * hold_fraction) / (n_keys - 1)
    starts = [i * (hold_fraction + move) for i in range(n_keys)]
    return [(s, s + hold_fraction) for s in starts]


def letter_blend(t, holds):
    """``(i, j, w)``: frame at time ``t`` blends keyframes i -> j with weight w on j."""
    for i, (start, end) in enumerate(holds):
        if t <= end or i == len(holds) - 1:
            if t >= start or i == 0:
                return i, i, 0.0
            prev_end = holds[i - 1][1]
            return i - 1, i, (t - prev_end) / (start - prev_end)
    raise AssertionError("unreachable")


def make_letter_warp(cfg, grid):
    """Glyph sequence morphing through signed-distance interpolation.

    Between two keyframes the occupied set is where the linear blend of the
    glyphs' signed distance images is positive. Blending happens on a
    4x supersampled grid which is then box-averaged to the pixel grid.
    """
    m = grid.n * SUPERSAMPLE
    glyphs = load_glyphs(cfg.glyphs, cfg.glyph_dir)
    masks = {k: _resample_mask(v, m) for k, v in glyphs.items()}
    sdfs = {k: signed_distance_transform(v, pixel_size=grid.fov / m) for k, v in masks.items()}
    holds = letter_schedule(len(cfg.glyphs), cfg.hold_fraction)
    n = grid.n
    frames = np.empty((grid.T, n, n))
    for f, t in enumerate(grid.times()):
        i, j, w = letter_blend(t, holds)
        a, b = cfg.glyphs[i], cfg.glyphs[j]
        if w == 0.0:
            sub = masks[a]
        else:
            sub = (1.0 - w) * sdfs[a] + w * sdfs[b] > 0.0
        frames[f] = sub.reshape(n, SUPERSAMPLE, n, SUPERSAMPLE).mean(axis=(1, 3))
    return IntensityMovie(grid, cfg.intensity * frames, (cfg.intensity,))


def make_scene(cfg, grid):
    builders = {
        "translating_circle": make_translating_circle,
        "beating_ellipse": make_beating_ellipse,
        "letter_warp": make_letter_warp,
    }
    return builders[cfg.kind](cfg, grid)


def analytic_sdf_circle(center, radius, grid):
    """Exact signed distance to a circle on the pixel centers, positive inside."""
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    x, y = grid.mesh()
    return radius - np.hypot(x - center[0], y - center[1])


def foreground_area(movie):
    """Per-frame foreground area in normalized units squared."""
    return movie.frames.sum(axis=(1, 2)) / movie.class_intensity[0] * movie.grid.pixel_size**2
