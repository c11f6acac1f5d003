import numpy as np
import pytest
from dataclasses import replace

from pdelab.fields import BoundaryMode, StencilSpec, dirichlet_energy, laplacian
from pdelab.layer import (
    CFL_MARGIN,
    DiffusionLayerParams,
    backward,
    constrain_alpha,
    default_mix_weights,
    effective_alphas,
    forward,
    grad_check,
    params_from_text,
    params_to_text,
    raw_for_alpha,
)
from pdelab.spectral import dct_basis, eigenvalues


def _params(d, rng=None, **kw):
    p = DiffusionLayerParams.init(d, **kw)
    if rng is not None:
        p.raw_alpha = rng.standard_normal(p.raw_alpha.shape)
        p.mix_weights = rng.uniform(0.1, 1.0, p.mix_weights.shape)
    return p


# ------------------------------------------------------------- constrain_alpha

def test_constrain_alpha_midpoint():
    assert abs(constrain_alpha(0.0, 0.5) - 0.25) < 1e-15


def test_constrain_alpha_paper_init():
    raw = raw_for_alpha(0.1, 0.5)
    assert abs(raw - np.log(0.25)) < 1e-12
    assert abs(constrain_alpha(raw, 0.5) - 0.1) < 1e-14


def test_constrain_alpha_asymptotes_and_monotone():
    assert 0.0 < constrain_alpha(-50.0) < constrain_alpha(50.0) < 0.5
    raws = np.linspace(-20, 20, 101)
    vals = constrain_alpha(raws)
    assert np.all(np.diff(vals) > 0)


def test_default_mix_ladder():
    assert np.allclose(default_mix_weights(3), [1.0, 0.6, 0.3])
    assert np.allclose(default_mix_weights(5), [1.0, 0.6, 0.3, 0.15, 0.075])


# -------------------------------------------------------------------- forward

def test_identity_limit(rng):
    x = rng.standard_normal((16, 4))
    p = _params(4)
    p.raw_alpha[:] = -40.0
    out, _ = forward(x, p)
    assert np.abs(out - x).max() < 1e-8


def test_single_scale_mode_scaling():
    L, alpha, k = 32, 0.3, 5
    p = DiffusionLayerParams.init(1, scales=(1,), alpha_init=alpha)
    p.mix_weights[:] = 1.0
    mode = dct_basis(L)[:, k]
    out, _ = forward(mode, p)
    assert np.abs(out - (1 + alpha * eigenvalues(L)[k]) * mode).max() < 1e-12


def test_mean_preserved_multiscale(rng):
    x = rng.standard_normal((32, 8))
    p = _params(8, rng)
    out, _ = forward(x, p)
    assert np.abs(out.mean(axis=0) - x.mean(axis=0)).max() < 1e-10


def test_scale_must_fit_field():
    p = DiffusionLayerParams.init(2, scales=(1, 2, 4))
    with pytest.raises(ValueError):
        forward(np.zeros((4, 2)), p)


def test_cfl_rescale_bounds_sums(rng):
    for raw_scale in (1.0, 5.0, 100.0):
        p = _params(6)
        p.raw_alpha = np.abs(rng.standard_normal(p.raw_alpha.shape)) * raw_scale
        eff, factor = effective_alphas(p, 6)
        sums = np.abs(p.mix_weights) @ eff
        assert np.all(sums < 0.5)
        assert np.all(sums <= 0.5 - CFL_MARGIN / 2)


def test_repeated_application_energy_monotone_reflect(rng):
    # shared cosine eigenbasis across scales makes this exact in reflect mode
    x = rng.standard_normal((24, 3))
    p = _params(3, rng, boundary=BoundaryMode.NEUMANN_REFLECT)
    p.raw_alpha = np.abs(p.raw_alpha) * 3
    e = dirichlet_energy(x)
    e0 = e
    for _ in range(1000):
        x, _ = forward(x, p)
        e_new = dirichlet_energy(x)
        assert e_new <= e * (1 + 1e-9) + 1e-16 * e0
        e = e_new


def test_repeated_application_l2_nonexpansive_clamp(rng):
    x = rng.standard_normal((24, 3))
    p = _params(3, rng)
    n = np.linalg.norm(x)
    for _ in range(1000):
        x, _ = forward(x, p)
        n_new = np.linalg.norm(x)
        assert n_new <= n * (1 + 1e-12)
        n = n_new


def test_linearity(rng):
    x, y = rng.standard_normal((20, 5)), rng.standard_normal((20, 5))
    p = _params(5, rng)
    a, b = 1.7, -0.4
    combo, _ = forward(a * x + b * y, p)
    fx, _ = forward(x, p)
    fy, _ = forward(y, p)
    assert np.abs(combo - (a * fx + b * fy)).max() / np.abs(combo).max() < 1e-12


def test_post_norm_output_normalized(rng):
    x = rng.standard_normal((10, 8))
    p = _params(8, post_norm=True)
    out, _ = forward(x, p)
    assert np.abs(out.mean(axis=1)).max() < 1e-12
    assert np.abs(out.std(axis=1) - 1).max() < 1e-6


# ------------------------------------------------------------------- backward

def test_backward_zero_grad(rng):
    x = rng.standard_normal((12, 3))
    p = _params(3, rng)
    _, cache = forward(x, p)
    gi, gr, gw = backward(cache, np.zeros_like(x))
    assert np.abs(gi).max() == 0.0
    assert np.abs(gr).max() == 0.0
    assert np.abs(gw).max() == 0.0


def test_backward_identity_limit(rng):
    x = rng.standard_normal((12, 3))
    p = _params(3)
    p.raw_alpha[:] = -40.0
    _, cache = forward(x, p)
    g = rng.standard_normal(x.shape)
    gi, _, _ = backward(cache, g)
    assert np.abs(gi - g).max() < 1e-8


def test_backward_shape_mismatch(rng):
    x = rng.standard_normal((12, 3))
    _, cache = forward(x, _params(3))
    with pytest.raises(ValueError):
        backward(cache, np.zeros((12, 4)))


def test_backward_matches_fd_on_sum_of_squares(rng):
    x = rng.standard_normal((16, 4))
    p = _params(4, rng)
    out, cache = forward(x, p)
    gi, gr, gw = backward(cache, 2 * out)
    eps = 1e-5

    def loss(field, params):
        return float(np.sum(forward(field, params)[0] ** 2))

    for _ in range(10):
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        fd = (loss(x + eps * v, p) - loss(x - eps * v, p)) / (2 * eps)
        a = float(np.sum(gi * v))
        assert abs(a - fd) / max(abs(a), abs(fd)) < 1e-5
    for _ in range(5):
        v = rng.standard_normal(p.raw_alpha.shape)
        v /= np.linalg.norm(v)
        fd = (loss(x, replace(p, raw_alpha=p.raw_alpha + eps * v))
              - loss(x, replace(p, raw_alpha=p.raw_alpha - eps * v))) / (2 * eps)
        a = float(np.sum(gr * v))
        assert abs(a - fd) / max(abs(a), abs(fd), 1e-10) < 1e-5


def test_transpose_identity(rng):
    # <F_lin(X), G> == <X, B_lin(G)> for the parameter-frozen linear map
    for boundary in (BoundaryMode.REPLICATE_CLAMP, BoundaryMode.NEUMANN_REFLECT):
        p = _params(5, rng, boundary=boundary)
        x = rng.standard_normal((20, 5))
        g = rng.standard_normal((20, 5))
        fx, _ = forward(x, p)
        _, cache = forward(np.zeros_like(x), p)
        bg, _, _ = backward(cache, g)
        lhs = float(np.sum(fx * g))
        rhs = float(np.sum(x * bg))
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-10


# ------------------------------------------------------------------ gradcheck

def test_grad_check_linear_path(rng):
    p = _params(4, rng)
    x = rng.standard_normal((16, 4))
    assert grad_check(p, x, trials=5, seed=1) < 1e-7


def test_grad_check_post_norm(rng):
    p = _params(8, rng, post_norm=True)
    x = rng.standard_normal((16, 8))
    assert grad_check(p, x, trials=20, seed=2) < 1e-5


def test_grad_check_smallest_case(rng):
    p = DiffusionLayerParams.init(1, scales=(1,))
    x = rng.standard_normal((2, 1))
    assert grad_check(p, x, trials=5, seed=3) < 1e-7


def test_grad_check_tied_channels(rng):
    p = DiffusionLayerParams.init(6, tie_channels=True, post_norm=True)
    assert p.raw_alpha.shape == (3, 1)
    x = rng.standard_normal((12, 6))
    assert grad_check(p, x, trials=10, seed=4) < 1e-5


def test_grad_check_active_rescale(rng):
    p = _params(6)
    p.raw_alpha = np.abs(rng.standard_normal(p.raw_alpha.shape)) * 3
    _, factor = effective_alphas(p, 6)
    assert (factor < 1).any()  # rescale path engaged
    x = rng.standard_normal((16, 6))
    assert grad_check(p, x, trials=10, seed=5) < 1e-5


# -------------------------------------------------------------- serialization

def test_params_text_round_trip(rng):
    p = _params(4, rng, post_norm=True, boundary=BoundaryMode.NEUMANN_REFLECT)
    q = params_from_text(params_to_text(p))
    assert q.scales == p.scales
    assert np.array_equal(q.raw_alpha, p.raw_alpha)
    assert np.array_equal(q.mix_weights, p.mix_weights)
    assert q.alpha_bound == p.alpha_bound
    assert q.post_norm == p.post_norm
    assert q.boundary == p.boundary


def test_params_validation():
    with pytest.raises(ValueError):
        DiffusionLayerParams(scales=(1, 1), raw_alpha=np.zeros((2, 1)), mix_weights=np.ones(2))
    with pytest.raises(ValueError):
        DiffusionLayerParams(scales=(1, 2), raw_alpha=np.zeros((3, 1)), mix_weights=np.ones(2))
    with pytest.raises(ValueError):
        params_from_text("scales=1,2\n")
