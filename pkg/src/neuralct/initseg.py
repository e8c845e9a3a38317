"""Initial object segmentation of FBP frames and conversion to SDF movies.

``gmm_segment`` classifies pixels by a scalar Gaussian mixture fitted with EM;
``binary_to_sdf`` smooths class masks with total-variation minimization,
takes their signed distance transform and smooths the result again.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .edt import signed_distance_transform
from .errors import ConfigError, NumericalError

VAR_FLOOR = 1e-6
DEFAULT_KAPPA = 3
TAU_FRACTION = 0.02


@dataclass
class GmmModel:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihood: float = float("nan")
    n_iter: int = 0

    @property
    def n_components(self):
        return len(self.means)

    def log_resp(self, values):
        values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        logp = (
            np.log(self.weights)
            - 0.5 * np.log(2 * np.pi * self.variances)
            - 0.5 * (values - self.means) ** 2 / self.variances
        )
        return logp - logsumexp(logp, axis=1, keepdims=True), logp

    def predict(self, values):
        """Maximum-posterior component of each value (any shape)."""
        values = np.asarray(values, dtype=np.float64)
        log_r, _ = self.log_resp(values.ravel())
        return log_r.argmax(axis=1).reshape(values.shape)


def _kmeans_pp(values, k, rng):
    centers = [values[rng.integers(len(values))]]
    for _ in range(1, k):
        d2 = np.min((values[:, None] - np.array(centers)[None]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(values[rng.integers(len(values))])
        else:
            centers.append(values[rng.choice(len(values), p=d2 / total)])
    return np.array(centers, dtype=np.float64)


def fit_gmm(values, k, rng=None, max_iter=100, tol=1e-6, max_retries=5):
    """Fit a ``k``-component scalar Gaussian mixture by EM.

    Means start from k-means++ seeding. A component that collapses (expected
    count below one sample) is re-seeded at a random sample; after
    ``max_retries`` re-seeds the fit fails with :class:`NumericalError`.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < k or np.ptp(x) == 0:
        raise NumericalError("GMM input is constant or has fewer samples than components", stage="gmm")
    means = _kmeans_pp(x, k, rng)
    nearest = np.argmin(np.abs(x[:, None] - means[None]), axis=1)
    variances = np.full(k, max(x.var() / k, VAR_FLOOR))
    weights = np.bincount(nearest, minlength=k).astype(np.float64) + 1.0
    weights /= weights.sum()
    model = GmmModel(means, variances, weights)
    prev = -np.inf
    retries = 0
    it = 0
    while it < max_iter:
        it += 1
        log_r, logp = model.log_resp(x)
        ll = float(logsumexp(logp, axis=1).mean())
        r = np.exp(log_r)
        counts = r.sum(axis=0)
        empty = counts < 1.0
        if empty.any():
            retries += 1
            if retries > max_retries:
                raise NumericalError("GMM component stayed empty after re-seeding", stage="gmm")
            for c in np.flatnonzero(empty):
                model.means[c] = x[rng.integers(len(x))]
                model.variances[c] = max(x.var() / k, VAR_FLOOR)
                model.weights[c] = 1.0 / len(x)
            model.weights /= model.weights.sum()
            prev = -np.inf
            continue
        model.weights = counts / counts.sum()
        model.means = (r * x[:, None]).sum(axis=0) / counts
        model.variances = np.maximum(
            (r * (x[:, None] - model.means) ** 2).sum(axis=0) / counts, VAR_FLOOR
        )
        if abs(ll - prev) < tol:
            break
        prev = ll
    model.log_likelihood = ll
    model.n_iter = it
    return model


@dataclass
class Segmentation:
    """Result of :func:`gmm_segment`.

    masks : (T, K, n, n) boolean foreground channels.
    labels : (T, n, n) component index of every pixel.
    classes : component indices merged into each foreground channel.
    background : component index removed as background.
    """

    masks: np.ndarray
    labels: np.ndarray
    model: GmmModel
    classes: tuple
    background: int
    frame_subset: np.ndarray

    @property
    def class_intensity(self):
        """Brightest component mean of each channel."""
        return tuple(float(max(self.model.means[list(g)])) for g in self.classes)


def gmm_segment(frames, K=1, kappa=DEFAULT_KAPPA, rng=None, tau_fraction=TAU_FRACTION):
    """Split FBP frames into K foreground channels.

    A (K + kappa + 1)-component mixture is fitted to all pixels of a random
    subset of ``max(1, round(tau_fraction * T))`` frames, then every pixel
    of every frame is labeled by maximum posterior. The component covering
    the most pixels is background; the K remaining components with the
    largest attenuation mass (summed intensity) seed the foreground channels.
    Each leftover buffer component joins whichever of the background or the
    seeds has the nearest mean.
    """
    frames = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
    if K < 1 or kappa < 0:
        raise ConfigError(f"need K >= 1 and kappa >= 0, got K={K}, kappa={kappa}")
    rng = np.random.default_rng(rng)
    T = frames.shape[0]
    n_sub = max(1, int(round(tau_fraction * T)))
    subset = np.sort(rng.choice(T, size=n_sub, replace=False))
    k_total = K + kappa + 1
    model = fit_gmm(frames[subset], k_total, rng)
    labels = model.predict(frames)
    counts = np.bincount(labels.ravel(), minlength=k_total)
    background = int(np.argmax(counts))
    mass = np.bincount(labels.ravel(), weights=frames.ravel(), minlength=k_total)
    mass[background] = -np.inf
    mass[counts == 0] = -np.inf
    order = [int(c) for c in np.argsort(-mass, kind="stable") if np.isfinite(mass[c])]
    if len(order) < K:
        raise NumericalError(f"only {len(order)} non-background classes for K={K}", stage="gmm")
    seeds = order[:K]
    anchors = np.array([background] + seeds)
    # component -> channel (0 is background)
    owner = np.argmin(np.abs(model.means[:, None] - model.means[anchors][None]), axis=1)
    owner[anchors] = np.arange(K + 1)
    groups = tuple(tuple(int(c) for c in np.flatnonzero(owner == k + 1)) for k in range(K))
    channel = owner[labels]
    masks = np.stack([channel == k + 1 for k in range(K)], axis=1)
    return Segmentation(masks, labels, model, groups, background, subset)


def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1] = u[1:] - u[:-1]
    return gx, gy


def _div(px, py):
    d = np.zeros_like(px)
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    d[:-1] += py[:-1]
    d[1:] -= py[:-1]
    return d


def total_variation(u):
    """Isotropic discrete TV with forward differences."""
    gx, gy = _grad(np.asarray(u, dtype=np.float64))
    return float(np.sqrt(gx**2 + gy**2).sum())


def tv_minimize(image, weight, iters):
    """Approximate ROF denoising by Chambolle's dual projection.

    Minimizes ``0.5 * ||u - image||^2 + weight * TV(u)`` with a fixed number
    of iterations at step 1/8.
    """
    f = np.asarray(image, dtype=np.float64)
    if weight <= 0 or iters <= 0:
        return f.copy()
    tau = 0.125
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    for _ in range(iters):
        gx, gy = _grad(_div(px, py) - f / weight)
        norm = 1.0 + tau * np.sqrt(gx**2 + gy**2)
        px = (px + tau * gx) / norm
        py = (py + tau * gy) / norm
    return f - weight * _div(px, py)


@dataclass
class SdfMovie:
    """Per-frame, per-class signed distances ``values[t, k, row, col]``, positive inside."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 4:
            raise ConfigError(f"SDF movie must be (T, K, n, n), got {self.values.shape}")

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def K(self):
        return self.values.shape[1]

    @property
    def n(self):
        return self.values.shape[-1]


@dataclass(frozen=True)
class SdfSmoothing:
    mask_weight: float = 0.1
    mask_iters: int = 50
    sdf_weight: float = 0.05
    sdf_iters: int = 20


# SDF assigned to a frame with no boundary: the FOV width, signed
EMPTY_DISTANCE = 2.0


def mask_to_sdf(mask, smoothing=SdfSmoothing()):
    """Smoothed signed distance image of one binary mask.

    A mask left uniform after smoothing has no boundary; it maps to the
    constant ``-EMPTY_DISTANCE`` (empty) or ``+EMPTY_DISTANCE`` (full).
    """
    smooth = tv_minimize(mask.astype(np.float64), smoothing.mask_weight, smoothing.mask_iters)
    binary = smooth >= 0.5
    if not binary.any() or binary.all():
        return np.full(mask.shape, EMPTY_DISTANCE if binary.all() else -EMPTY_DISTANCE)
    sdf = signed_distance_transform(binary)
    return tv_minimize(sdf, smoothing.sdf_weight, smoothing.sdf_iters)


def binary_to_sdf(masks, smoothing=SdfSmoothing()):
    """Binary class movie (T, K, n, n) or (T, n, n) -> :class:`SdfMovie`."""
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 3:
        masks = masks[:, None]
    if masks.ndim != 4:
        raise ConfigError(f"expected (T, K, n, n) masks, got {masks.shape}")
    out = np.empty(masks.shape, dtype=np.float64)
    cache = {}
    for t in range(masks.shape[0]):
        for k in range(masks.shape[1]):
            key = masks[t, k].tobytes()
            if key not in cache:
                cache[key] = mask_to_sdf(masks[t, k], smoothing)
            out[t, k] = cache[key]
    return SdfMovie(out)
