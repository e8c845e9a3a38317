"""Exact Euclidean distance transform on a pixel grid.

Two separable passes of the lower-envelope-of-parabolas algorithm
(Felzenszwalb & Huttenlocher). Distances are exact for the squared
Euclidean metric between pixel centers.
"""
import numba
import numpy as np

from .errors import ConfigError

_FAR = 1e20


@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] >= _FAR:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -_FAR
            z[1] = _FAR
            continue
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _FAR
    if k < 0:
        for q in range(n):
            out[q] = _FAR
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@numba.njit(cache=True)
def _squared_edt_2d(sites):
    rows, cols = sites.shape
    n = max(rows, cols)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    f = np.empty(n, dtype=np.float64)
    buf = np.empty(n, dtype=np.float64)
    tmp = np.empty((rows, cols), dtype=np.float64)
    for c in range(cols):
        for r in range(rows):
            f[r] = 0.0 if sites[r, c] else _FAR
        _envelope_1d(f[:rows], buf[:rows], v, z)
        for r in range(rows):
            tmp[r, c] = buf[r]
    out = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            f[c] = tmp[r, c]
        _envelope_1d(f[:cols], buf[:cols], v, z)
        for c in range(cols):
            out[r, c] = buf[c]
    return out


def squared_edt(sites):
    """Squared distance (in pixels) from every pixel center to the nearest site.

    Pixels are at infinite distance (``1e20``) when there are no sites.
    """
    sites = np.ascontiguousarray(sites, dtype=np.bool_)
    if sites.ndim != 2:
        raise ConfigError(f"expected a 2D mask, got shape {sites.shape}")
    return _squared_edt_2d(sites)


def signed_distance_transform(mask, pixel_size=None):
    """Signed distance image of a binary mask, positive inside.

    Foreground pixels get their distance to the nearest background pixel,
    background pixels minus their distance to the nearest foreground pixel.
    Values are in pixel units times ``pixel_size`` (default ``2 / width``,
    i.e. normalized coordinates over a [-1, 1] field of view).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ConfigError(f"expected a 2D mask, got shape {mask.shape}")
    if mask.all() or not mask.any():
        raise ConfigError("signed distance needs both foreground and background pixels")
    if pixel_size is None:
        pixel_size = 2.0 / mask.shape[1]
    inside = np.sqrt(squared_edt(~mask))
    outside = np.sqrt(squared_edt(mask))
    return (inside - outside) * pixel_size
