"""Filtered backprojection over a sliding window of views."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .projector import DEFAULT_K_SAMP, backproject_views
from .scene import GridSpec, IntensityMovie


@dataclass(frozen=True)
class FbpConfig:
    """FBP options.

    window_views : views per reconstructed frame; ``None`` means one full
        gantry rotation.
    apodization : ``None`` for pure Ram-Lak or ``"cosine"`` for a raised-cosine
        (Hann) roll-off of the ramp.
    """

    window_views: int = None
    pad_factor: int = 2
    apodization: str = None
    k_samp: int = DEFAULT_K_SAMP

    def __post_init__(self):
        if self.pad_factor < 1:
            raise ConfigError(f"pad_factor must be >= 1, got {self.pad_factor}")
        if self.apodization not in (None, "cosine"):
            raise ConfigError(f"unknown apodization {self.apodization!r}")
        if self.window_views is not None and self.window_views < 1:
            raise ConfigError("window_views must be positive")


def ramp_filter(rows, pad_factor=2, apodization=None, spacing=None):
    """Multiply each row by |f| in the frequency domain.

    Rows are zero-padded to ``pad_factor`` times their length (rounded up to a
    power of two), filtered and cropped back. ``spacing`` is the detector bin
    width (default ``2 / n_det``).
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[-1]
    spacing = 2.0 / n if spacing is None else spacing
    size = n if pad_factor == 1 else int(2 ** np.ceil(np.log2(pad_factor * n)))
    freqs = np.fft.fftfreq(size, d=spacing)
    response = np.abs(freqs)
    if apodization == "cosine":
        response = response * 0.5 * (1.0 + np.cos(np.pi * freqs / np.abs(freqs).max()))
    spectrum = np.fft.fft(rows, n=size, axis=-1)
    return np.real(np.fft.ifft(spectrum * response, axis=-1))[..., :n]


def _window(center_index, width, n_views):
    if width > n_views:
        raise ConfigError(f"window of {width} views exceeds the {n_views} acquired")
    start = int(center_index) - width // 2
    start = min(max(start, 0), n_views - width)
    return start, start + width


def _window_width(sino, cfg):
    width = cfg.window_views or sino.schedule.views_per_rotation
    if width < 1:
        raise ConfigError("empty FBP window")
    return width


def _filtered_backprojections(sino, cfg):
    filtered = ramp_filter(sino.rows, cfg.pad_factor, cfg.apodization)
    # the projector adjoint smears each row weighted by one pixel width
    scale = sino.n_det / 2.0
    return scale * backproject_views(filtered, sino.schedule.view_angles, cfg.k_samp)


def fbp_frame(sino, center_time, cfg=FbpConfig()):
    """Reconstruct one frame from the window of views centered at ``center_time``.

    The window is clamped to the acquisition at its edges; negative values
    are clamped to zero.
    """
    width = _window_width(sino, cfg)
    n_views = sino.schedule.n_views
    center = np.rint(center_time * (n_views - 1))
    start, stop = _window(center, width, n_views)
    sub_rows = sino.rows[start:stop]
    filtered = ramp_filter(sub_rows, cfg.pad_factor, cfg.apodization)
    bp = backproject_views(filtered, sino.schedule.view_angles[start:stop], cfg.k_samp)
    image = (np.pi / width) * (sino.n_det / 2.0) * bp.sum(axis=0)
    return np.maximum(image, 0.0)


def fbp_frames(sino, times, cfg=FbpConfig()):
    """FBP frame at each requested time as a (len(times), n, n) array.

    Per-view filtered backprojections are computed once and summed over each
    window with a cumulative sum.
    """
    times = np.asarray(times, dtype=np.float64)
    width = _window_width(sino, cfg)
    n_views = sino.schedule.n_views
    bps = _filtered_backprojections(sino, cfg)
    csum = np.concatenate([np.zeros((1,) + bps.shape[1:]), np.cumsum(bps, axis=0)])
    frames = np.empty((len(times), sino.n_det, sino.n_det))
    for i, t in enumerate(times):
        start, stop = _window(np.rint(t * (n_views - 1)), width, n_views)
        frames[i] = (np.pi / width) * (csum[stop] - csum[start])
    return np.maximum(frames, 0.0)


def fbp_movie(sino, times, cfg=FbpConfig()):
    """FBP movie sampled at ``times`` (at least two)."""
    frames = fbp_frames(sino, times, cfg)
    return IntensityMovie(GridSpec(n=sino.n_det, T=len(frames)), frames)
