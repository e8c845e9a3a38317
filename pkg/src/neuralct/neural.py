"""Neural implicit signed distance movie.

The SDF of K objects is the sum of a stationary field (``encoder``) and a
band-limited temporal term whose Fourier coefficients are produced per
location by ``velocity_head``::

    g(x, t) = encoder(x) + (1/M) sum_i A_i(x) sin(2 pi w_i t) + B_i(x) cos(2 pi w_i t)

with frequencies ``w_i ~ Normal(0, F_max^2)`` drawn once and frozen. Both
networks are sine-activated MLPs; spatial derivatives are propagated
through the layers in closed form alongside the forward pass so that
losses on ``grad_x g`` stay first-order differentiable w.r.t. the weights.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .initseg import SdfMovie

OMEGA_0 = 30.0
DEFAULT_HIDDEN = 256
DEFAULT_M = 8
DEFAULT_F_MAX = 3.0
DEFAULT_MU = 50.0


class Siren(nn.Module):
    """Dense network with ``sin(omega_0 z)`` on the first layer, ``sin(z)`` on
    later hidden layers and a linear output layer."""

    def __init__(self, dims, omega_0=OMEGA_0, generator=None, dtype=torch.float32):
        super().__init__()
        if len(dims) < 2:
            raise ConfigError(f"need at least input and output dims, got {dims}")
        self.dims = tuple(int(d) for d in dims)
        self.omega_0 = float(omega_0)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        n_layers = len(dims) - 1
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if i == 0:
                bound = 1.0 / fan_in
            elif i < n_layers - 1:
                bound = math.sqrt(6.0 / fan_in)
            else:
                bound = math.sqrt(6.0 / fan_in) / self.omega_0
            w = (torch.rand(fan_out, fan_in, generator=generator, dtype=dtype) * 2 - 1) * bound
            b_bound = 1.0 / math.sqrt(fan_in)
            b = (torch.rand(fan_out, generator=generator, dtype=dtype) * 2 - 1) * b_bound
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(b))

    def forward(self, x):
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            if i == last:
                return z
            h = torch.sin(self.omega_0 * z) if i == 0 else torch.sin(z)

    def forward_with_jacobian(self, x):
        """Outputs (P, D) and their input Jacobian (P, D, d_in)."""
        p, d_in = x.shape
        if d_in != self.dims[0]:
            raise ConfigError(f"input dim {d_in} does not match network input {self.dims[0]}")
        last = len(self.weights) - 1
        w0, b0 = self.weights[0], self.biases[0]
        z = x @ w0.T + b0
        dz = w0.T.unsqueeze(0).expand(p, d_in, -1)  # (P, d_in, H): d z / d x_j
        if last == 0:
            return z, dz.transpose(1, 2)
        z = self.omega_0 * z
        h, dh = torch.sin(z), torch.cos(z).unsqueeze(1) * (self.omega_0 * dz)
        for i in range(1, last + 1):
            w, b = self.weights[i], self.biases[i]
            # stack value and derivative rows so each layer is one matmul
            stacked = torch.cat([h.unsqueeze(1), dh], dim=1) @ w.T
            z, dz = stacked[:, 0] + b, stacked[:, 1:]
            if i == last:
                return z, dz.transpose(1, 2)
            h, dh = torch.sin(z), torch.cos(z).unsqueeze(1) * dz


def mlp_eval(params, x):
    """Forward pass of a :class:`Siren` on a coordinate batch (numpy or torch)."""
    if isinstance(x, np.ndarray):
        with torch.no_grad():
            dtype = params.weights[0].dtype
            return params(torch.as_tensor(x, dtype=dtype)).numpy()
    if x.shape[-1] != params.dims[0]:
        raise ConfigError(f"input dim {x.shape[-1]} does not match network input {params.dims[0]}")
    return params(x)


def draw_frequencies(M, f_max, generator=None, dtype=torch.float32):
    if M < 1:
        raise ConfigError(f"need at least one harmonic, got M={M}")
    return torch.randn(M, generator=generator, dtype=torch.float64).to(dtype) * float(f_max)


def fourier_temporal_eval(A, B, omegas, t):
    """Band-limited temporal term.

    A, B : (..., M, K) sine and cosine coefficients.
    omegas : (M,) frequencies.
    t : scalar or (Tb,) times.
    Returns (Tb, ..., K): ``(1/M) sum_i A_i sin(2 pi w_i t) + B_i cos(2 pi w_i t)``.
    """
    A = torch.as_tensor(A)
    B = torch.as_tensor(B, dtype=A.dtype)
    omegas = torch.as_tensor(omegas, dtype=A.dtype)
    t = torch.atleast_1d(torch.as_tensor(t, dtype=A.dtype))
    phase = 2 * math.pi * t[:, None] * omegas[None]
    M = omegas.shape[0]
    s, c = torch.sin(phase) / M, torch.cos(phase) / M
    return torch.einsum("tm,...mk->t...k", s, A) + torch.einsum("tm,...mk->t...k", c, B)


@dataclass
class Derivatives:
    """Values and derivatives of g on a (times x points) grid.

    value : (Tb, P, K); grad_x : (Tb, P, K, 2); grad_t : (Tb, P, K).
    """

    value: torch.Tensor
    grad_x: torch.Tensor
    grad_t: torch.Tensor


class NeuralSdf(nn.Module):
    """Spatiotemporal SDF network for K objects."""

    def __init__(
        self,
        K=1,
        M=DEFAULT_M,
        f_max=DEFAULT_F_MAX,
        hidden=DEFAULT_HIDDEN,
        encoder_dims=None,
        velocity_dims=None,
        class_intensity=None,
        mu=DEFAULT_MU,
        seed=0,
        dtype=torch.float32,
        omega_0=OMEGA_0,
    ):
        super().__init__()
        self.K, self.M, self.f_max, self.mu, self.seed = int(K), int(M), float(f_max), float(mu), seed
        gen = torch.Generator().manual_seed(int(seed))
        encoder_dims = encoder_dims or [2, hidden, hidden, hidden, K]
        velocity_dims = velocity_dims or [2, hidden, hidden, 2 * M * K]
        if encoder_dims[-1] != K or velocity_dims[-1] != 2 * M * K:
            raise ConfigError("encoder must output K values and velocity head 2*M*K")
        self.encoder = Siren(encoder_dims, omega_0, gen, dtype)
        self.velocity_head = Siren(velocity_dims, omega_0, gen, dtype)
        self.register_buffer("omegas", draw_frequencies(M, f_max, gen, dtype))
        if class_intensity is None:
            class_intensity = [1.0] * K
        self.register_buffer("class_intensity", torch.as_tensor(class_intensity, dtype=dtype))

    @property
    def dtype(self):
        return self.omegas.dtype

    def _coefficients(self, v):
        # (P, 2MK, ...) -> A, B each (P, M, K, ...)
        v = v.reshape(v.shape[0], 2, self.M, self.K, *v.shape[2:])
        return v[:, 0], v[:, 1]

    def forward(self, x, t):
        """SDF values (Tb, P, K) at points ``x`` (P, 2) and times ``t``."""
        x = torch.as_tensor(x, dtype=self.dtype)
        A, B = self._coefficients(self.velocity_head(x))
        return self.encoder(x)[None] + fourier_temporal_eval(A, B, self.omegas, t)

    def derivatives(self, x, t):
        """Values with analytic spatial and temporal derivatives."""
        x = torch.as_tensor(x, dtype=self.dtype)
        t = torch.atleast_1d(torch.as_tensor(t, dtype=self.dtype))
        e, de = self.encoder.forward_with_jacobian(x)  # (P,K), (P,K,2)
        v, dv = self.velocity_head.forward_with_jacobian(x)  # (P,2MK), (P,2MK,2)
        A, B = self._coefficients(v)
        dA, dB = self._coefficients(dv)  # (P, M, K, 2)
        phase = 2 * math.pi * t[:, None] * self.omegas[None]
        s, c = torch.sin(phase) / self.M, torch.cos(phase) / self.M
        value = e[None] + torch.einsum("tm,pmk->tpk", s, A) + torch.einsum("tm,pmk->tpk", c, B)
        grad_x = (
            de[None]
            + torch.einsum("tm,pmkd->tpkd", s, dA)
            + torch.einsum("tm,pmkd->tpkd", c, dB)
        )
        w = 2 * math.pi * self.omegas[None]
        grad_t = torch.einsum("tm,pmk->tpk", c * w, A) - torch.einsum("tm,pmk->tpk", s * w, B)
        return Derivatives(value, grad_x, grad_t)

    def config(self):
        return {
            "K": self.K,
            "M": self.M,
            "f_max": self.f_max,
            "mu": self.mu,
            "seed": self.seed,
            "omega_0": self.encoder.omega_0,
            "encoder_dims": list(self.encoder.dims),
            "velocity_dims": list(self.velocity_head.dims),
            "omegas": self.omegas.tolist(),
            "class_intensity": self.class_intensity.tolist(),
            "dtype": str(self.dtype).replace("torch.", ""),
        }


def pixel_points(n, dtype=torch.float32):
    """Pixel-center coordinates (n*n, 2) in row-major order, columns (x, y)."""
    c = -1.0 + (torch.arange(n, dtype=dtype) + 0.5) * 2.0 / n
    yy, xx = torch.meshgrid(c, c, indexing="ij")
    return torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=1)


def sdf_eval(model, x, t):
    """K signed distances per point at time(s) ``t``; numpy in, numpy out."""
    with torch.no_grad():
        out = model(torch.as_tensor(np.asarray(x), dtype=model.dtype), t)
    return out.numpy()[0] if np.ndim(t) == 0 else out.numpy()


def occupancy(f, mu=DEFAULT_MU):
    """Soft occupancy ``clip(mu * (sigmoid(f) - 0.5), 0, 1)``."""
    if isinstance(f, torch.Tensor):
        return torch.clamp(mu * (torch.sigmoid(f) - 0.5), 0.0, 1.0)
    f = np.asarray(f, dtype=np.float64)
    return np.clip(mu * (1.0 / (1.0 + np.exp(-f)) - 0.5), 0.0, 1.0)


def pixel_scale(n):
    """Pixels per normalized length unit on an n x n grid over the FOV."""
    return n / 2.0


def render_intensity(sdf_values, class_intensity, mu, scale=1.0):
    """Intensity from SDF values (..., K): ``sum_k a_k * occupancy(scale * f_k)``.

    ``scale`` converts the SDF to pixels (see :func:`pixel_scale`) so that the
    occupancy ramp is sub-pixel whatever the grid size.
    """
    return (occupancy(sdf_values * scale, mu) * class_intensity).sum(dim=-1)


def _times(times, dtype):
    return torch.atleast_1d(torch.as_tensor(np.asarray(times, dtype=np.float64), dtype=dtype))


def discretize(model, n, times, chunk=64):
    """Sample the SDF on the n x n pixel centers at each time -> :class:`SdfMovie`."""
    pts = pixel_points(n, model.dtype)
    t = _times(times, model.dtype)
    out = []
    with torch.no_grad():
        for s in range(0, len(t), chunk):
            vals = model(pts, t[s : s + chunk])  # (Tb, P, K)
            out.append(vals.reshape(len(vals), n, n, -1).permute(0, 3, 1, 2).numpy())
    return SdfMovie(np.concatenate(out).astype(np.float64))


def intensity_map(model, n, t):
    """Rendered n x n intensity image(s) at time(s) ``t``."""
    movie = discretize(model, n, np.atleast_1d(t))
    a = model.class_intensity.detach().numpy().astype(np.float64)
    img = (occupancy(movie.values * pixel_scale(n), model.mu) * a[None, :, None, None]).sum(axis=1)
    return img[0] if np.ndim(t) == 0 else img


def binarize(sdf_movie, mu=DEFAULT_MU):
    """Hard masks (T, K, n, n): occupancy of the SDF in pixels, thresholded at one half."""
    values = np.asarray(getattr(sdf_movie, "values", sdf_movie))
    return occupancy(values * pixel_scale(values.shape[-1]), mu) > 0.5


def occupancy_threshold(mu=DEFAULT_MU):
    """Occupancy argument where occupancy crosses one half."""
    return float(np.log((0.5 + 0.5 / mu) / (0.5 - 0.5 / mu)))


def save_model(model, path):
    """Write ``<path>.bin`` (all weights, little-endian) and ``<path>.json`` header."""
    path = Path(path)
    tensors = [p.detach().cpu().numpy() for p in _param_list(model)]
    dtype = "<f8" if model.dtype == torch.float64 else "<f4"
    blob = np.concatenate([t.ravel() for t in tensors]).astype(dtype)
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    header = model.config() | {"shapes": [list(t.shape) for t in tensors], "byte_order": dtype}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def load_model(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    dtype = torch.float64 if header["dtype"] == "float64" else torch.float32
    model = NeuralSdf(
        K=header["K"],
        M=header["M"],
        f_max=header["f_max"],
        encoder_dims=header["encoder_dims"],
        velocity_dims=header["velocity_dims"],
        class_intensity=header["class_intensity"],
        mu=header["mu"],
        seed=header["seed"],
        dtype=dtype,
        omega_0=header["omega_0"],
    )
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype=header["byte_order"])
    offset = 0
    with torch.no_grad():
        for p, shape in zip(_param_list(model), header["shapes"]):
            size = int(np.prod(shape))
            p.copy_(torch.from_numpy(blob[offset : offset + size].reshape(shape).copy()))
            offset += size
        model.omegas.copy_(torch.as_tensor(header["omegas"], dtype=dtype))
    return model


def _param_list(model):
    return list(model.encoder.weights) + list(model.encoder.biases) + list(
        model.velocity_head.weights
    ) + list(model.velocity_head.biases)
