import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralct.errors import ConfigError
from neuralct.neural import (
    NeuralSdf,
    Siren,
    binarize,
    discretize,
    fourier_temporal_eval,
    intensity_map,
    load_model,
    mlp_eval,
    occupancy,
    occupancy_threshold,
    pixel_points,
    save_model,
    sdf_eval,
)
from neuralct.pipeline import dice
from neuralct.scene import (
    GridSpec,
    SceneConfig,
    analytic_sdf_circle,
    circle_center,
    make_translating_circle,
)

from helpers import F64, LookupSdf


def tiny(f_max=3.0, seed=0, M=4, K=1, hidden=16):
    return NeuralSdf(K=K, M=M, f_max=f_max, hidden=hidden, seed=seed, dtype=F64)


def scalar_siren(net, point):
    """Straight-line re-implementation of the Siren forward pass for one point."""
    h = [float(v) for v in point]
    n_layers = len(net.weights)
    for i in range(n_layers):
        w = net.weights[i].detach().numpy()
        b = net.biases[i].detach().numpy()
        z = []
        for r in range(w.shape[0]):
            acc = b[r]
            for c in range(w.shape[1]):
                acc += w[r, c] * h[c]
            z.append(acc)
        if i == n_layers - 1:
            return z
        h = [math.sin(net.omega_0 * v) if i == 0 else math.sin(v) for v in z]


def scalar_fourier(A, B, omegas, t):
    M = len(omegas)
    return sum(A[i] * math.sin(2 * math.pi * omegas[i] * t) + B[i] * math.cos(2 * math.pi * omegas[i] * t) for i in range(M)) / M


# -- mlp ----------------------------------------------------------------------


def test_zero_mlp_gives_zero():
    net = Siren([2, 8, 3], dtype=F64)
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    assert not mlp_eval(net, np.random.default_rng(0).random((5, 2))).any()


def test_single_linear_layer_identity():
    net = Siren([3, 3], dtype=F64)
    with torch.no_grad():
        net.weights[0].copy_(torch.eye(3, dtype=F64))
        net.biases[0].zero_()
    x = np.random.default_rng(0).random((4, 3))
    assert np.allclose(mlp_eval(net, x), x)


def test_mlp_matches_scalar_oracle():
    net = Siren([2, 16, 1], generator=torch.Generator().manual_seed(7), dtype=F64)
    pts = np.random.default_rng(3).uniform(-1, 1, (10, 2))
    out = mlp_eval(net, pts)
    for p, o in zip(pts, out):
        assert o[0] == pytest.approx(scalar_siren(net, p)[0], abs=1e-6)


def test_mlp_dimension_mismatch():
    with pytest.raises(ConfigError):
        mlp_eval(Siren([2, 4, 1]), torch.zeros(3, 3))


def test_jacobian_matches_autograd():
    net = Siren([2, 16, 16, 3], generator=torch.Generator().manual_seed(1), dtype=F64)
    x = torch.rand(6, 2, dtype=F64) * 2 - 1
    _, jac = net.forward_with_jacobian(x)
    ref = torch.autograd.functional.jacobian(lambda v: net(v[None])[0], x[0])
    assert torch.allclose(jac[0], ref, atol=1e-10)


# -- fourier ------------------------------------------------------------------


def test_fourier_zero_coefficients():
    z = torch.zeros(5, 4, 1)
    out = fourier_temporal_eval(z, z, torch.randn(4), torch.linspace(0, 1, 7))
    assert not out.any()


def test_fourier_at_time_zero():
    B = torch.randn(3, 4, 1, dtype=F64)
    out = fourier_temporal_eval(torch.randn(3, 4, 1, dtype=F64), B, torch.randn(4, dtype=F64), 0.0)
    assert torch.allclose(out[0], B.mean(dim=1))


def test_fourier_single_harmonic():
    one = torch.ones(1, 1, 1, dtype=F64)
    out = fourier_temporal_eval(one, 0 * one, torch.ones(1, dtype=F64), 0.25)
    assert out.item() == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1))
def test_fourier_matches_scalar(seed, t):
    g = torch.Generator().manual_seed(seed)
    A, B = torch.randn(5, 1, generator=g, dtype=F64), torch.randn(5, 1, generator=g, dtype=F64)
    w = torch.randn(5, generator=g, dtype=F64) * 3
    out = fourier_temporal_eval(A[None], B[None], w, t)
    assert out.item() == pytest.approx(scalar_fourier(A[:, 0].tolist(), B[:, 0].tolist(), w.tolist(), t), abs=1e-12)


# -- sdf_eval -----------------------------------------------------------------


def test_zero_velocity_head_is_static():
    model = tiny()
    with torch.no_grad():
        for p in model.velocity_head.parameters():
            p.zero_()
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    enc = mlp_eval(model.encoder, x)
    for t in (0.0, 0.3, 1.0):
        assert np.allclose(sdf_eval(model, x, t), enc)


def test_fmax_zero_is_time_constant():
    model = tiny(f_max=0.0)
    assert not model.omegas.any()
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert np.array_equal(sdf_eval(model, x, 0.1), sdf_eval(model, x, 0.9))


def test_sdf_eval_compositional_oracle():
    model = NeuralSdf(K=1, M=3, hidden=8, seed=5, dtype=F64)
    pts = np.random.default_rng(1).uniform(-1, 1, (6, 2))
    omegas = model.omegas.tolist()
    for t in (0.0, 0.37, 1.0):
        out = sdf_eval(model, pts, t)
        for p, o in zip(pts, out):
            v = scalar_siren(model.velocity_head, p)
            expected = scalar_siren(model.encoder, p)[0] + scalar_fourier(v[:3], v[3:], omegas, t)
            assert o[0] == pytest.approx(expected, abs=1e-6)


def test_multi_class_shapes():
    model = tiny(K=2)
    out = model(pixel_points(8, F64), torch.tensor([0.0, 0.5], dtype=F64))
    assert out.shape == (2, 64, 2)


def test_spatial_gradient_matches_finite_differences():
    model = tiny(seed=3)
    x = torch.rand(12, 2, dtype=F64) * 1.6 - 0.8
    t = torch.tensor([0.2, 0.7], dtype=F64)
    d = model.derivatives(x, t)
    h = 1e-3
    for axis in range(2):
        e = torch.zeros(2, dtype=F64)
        e[axis] = h
        fd = (model(x + e, t) - model(x - e, t)) / (2 * h)
        err = (d.grad_x[..., axis] - fd).abs().max() / fd.abs().max()
        assert err < 1e-3


def test_time_derivative_matches_finite_differences():
    model = tiny(seed=4)
    x = torch.rand(12, 2, dtype=F64) * 2 - 1
    t = torch.tensor([0.3], dtype=F64)
    h = 1e-5
    fd = (model(x, t + h) - model(x, t - h)) / (2 * h)
    assert torch.allclose(model.derivatives(x, t).grad_t, fd, atol=1e-6)


def test_temporal_spectrum_at_frozen_frequencies():
    model = tiny(seed=11, f_max=3.0, M=8)
    x = torch.rand(4, 2, dtype=F64) * 2 - 1
    duration, rate = 200.0, 32.0
    t = torch.arange(int(duration * rate), dtype=F64) / rate
    with torch.no_grad():
        temporal = (model(x, t) - model.encoder(x)[None])[..., 0].numpy()  # (T, P)
    window = np.hanning(len(t))[:, None]
    spec = np.abs(np.fft.fft(temporal * window, axis=0)) ** 2
    freqs = np.fft.fftfreq(len(t), d=1 / rate)
    bins = 1 / duration
    near = np.zeros(len(t), bool)
    for w in model.omegas.numpy():
        near |= np.abs(np.abs(freqs) - abs(w)) <= 4 * bins
    assert spec[near].sum() / spec.sum() > 0.999


# -- occupancy and rendering --------------------------------------------------


def test_occupancy_examples():
    assert occupancy(0.0, 50) == 0.0
    assert occupancy(-1.0, 50) == 0.0
    assert 50 * (1 / (1 + math.exp(-0.1)) - 0.5) == pytest.approx(1.249, abs=1e-3)
    assert occupancy(0.1, 50) == 1.0


def test_occupancy_torch_matches_numpy():
    f = np.linspace(-0.2, 0.2, 41)
    assert np.allclose(occupancy(torch.from_numpy(f), 50).numpy(), occupancy(f, 50))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1, 100))
def test_occupancy_monotone(a, b, mu):
    lo, hi = min(a, b), max(a, b)
    assert occupancy(lo, mu) <= occupancy(hi, mu)


def test_binarize_threshold_brute_force():
    f0 = occupancy_threshold(50)
    scan = np.linspace(-0.1, 0.1, 200001)
    first = scan[np.argmax(occupancy(scan, 50) > 0.5)]
    assert first == pytest.approx(f0, abs=2e-6)
    n = 16
    values = np.random.default_rng(0).uniform(-0.05, 0.05, (3, 1, n, n))
    assert np.array_equal(binarize(values), values * n / 2 > f0)


def test_binarize_examples():
    n = 16
    assert binarize(np.full((2, 1, n, n), 0.1)).all()
    assert not binarize(np.full((2, 1, n, n), -0.3)).any()


def test_binarize_circle_equals_sign_mask():
    grid = GridSpec(n=64, T=2)
    f = analytic_sdf_circle((0.1, -0.2), 0.3, grid)
    assert np.array_equal(binarize(f[None, None])[0, 0], f > 0)


def test_intensity_map_negative_sdf_is_black():
    model = LookupSdf(lambda x, y, t: -0.5 - 0 * x)
    assert not intensity_map(model, 16, 0.3).any()


def test_intensity_map_saturates_inside():
    model = LookupSdf(lambda x, y, t: 0.5 + 0 * x)
    assert np.all(intensity_map(model, 16, 0.3) == 1.0)


def test_circle_lookup_renders_scene_raster():
    cfg = SceneConfig(radius=0.3, orbit_radius=0.4, displacement_deg=100.0)
    grid = GridSpec(n=64, T=5)
    truth = make_translating_circle(cfg, grid)
    def fn(x, y, t):
        cx, cy = circle_center(cfg, float(t))
        return cfg.radius - torch.hypot(x - cx, y - cy)

    rendered = intensity_map(LookupSdf(fn), grid.n, grid.times())
    assert dice(rendered, truth.frames).min() > 0.99


def test_discretize_matches_pointwise():
    model = tiny(seed=2)
    times = [0.0, 0.4, 1.0]
    movie = discretize(model, 8, times)
    assert movie.values.shape == (3, 1, 8, 8)
    pts = pixel_points(8, F64).numpy()
    for i, t in enumerate(times):
        assert np.allclose(movie.values[i, 0].ravel(), sdf_eval(model, pts, t)[:, 0], atol=1e-6)


def test_discretize_zero_and_static_models():
    zero = tiny()
    with torch.no_grad():
        for p in zero.parameters():
            p.zero_()
    assert not discretize(zero, 8, [0.0, 1.0]).values.any()
    static = tiny(f_max=0.0)
    v = discretize(static, 8, [0.0, 0.5, 1.0]).values
    assert np.allclose(v, v[:1])


# -- construction and serialization -------------------------------------------


def test_head_output_dims():
    m = NeuralSdf(K=2, M=3, hidden=8)
    assert m.encoder.dims[-1] == 2 and m.velocity_head.dims[-1] == 12
    with pytest.raises(ConfigError):
        NeuralSdf(K=1, M=3, encoder_dims=[2, 4, 2])


def test_same_seed_same_model():
    a, b = tiny(seed=9), tiny(seed=9)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert torch.equal(a.omegas, b.omegas)


def test_save_load_round_trip(tmp_path):
    model = NeuralSdf(K=1, M=4, hidden=8, seed=3, class_intensity=[0.8])
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.config() == model.config()
    x = pixel_points(8)
    assert torch.equal(model(x, [0.1, 0.6]), back(x, [0.1, 0.6]))


def test_evaluation_finite_on_domain():
    model = NeuralSdf(hidden=32, seed=1)
    out = model(pixel_points(32), torch.linspace(0, 1, 5))
    assert torch.isfinite(out).all()
