import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdelab.fields import (
    BoundaryMode,
    CflViolationError,
    InvalidStencilError,
    StencilSpec,
    diffusion_step,
    dirichlet_energy,
    laplacian,
    laplacian_matrix,
)
from pdelab.spectral import dct_basis, eigenvalues

MODES = (BoundaryMode.REPLICATE_CLAMP, BoundaryMode.NEUMANN_REFLECT)


# ------------------------------------------------------------------ laplacian

@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("L,h", [(4, 1), (8, 2), (16, 4), (5, 3)])
def test_constant_field_maps_to_zero(L, h, mode):
    x = np.full((L, 3), 7.25)
    out = laplacian(x, StencilSpec(h, mode))
    assert np.array_equal(out, np.zeros_like(x))


def test_two_point_boundary_rows():
    a, b = 3.0, 1.0
    out = laplacian(np.array([a, b]))
    assert np.allclose(out, [b - a, a - b])


def test_length_four_matches_matrix_oracle():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    expected = laplacian_matrix(4) @ x
    assert np.allclose(expected, [1.0, 1.0, 2.0, -4.0])
    assert np.allclose(laplacian(x), expected)


def test_matrix_small_cases():
    assert np.allclose(laplacian_matrix(2), [[-1, 1], [1, -1]])
    assert np.allclose(laplacian_matrix(3), [[-1, 1, 0], [1, -2, 1], [0, 1, -1]])


def test_modes_coincide_at_unit_scale(rng):
    x = rng.standard_normal((17, 3))
    a = laplacian(x, StencilSpec(1, BoundaryMode.REPLICATE_CLAMP))
    b = laplacian(x, StencilSpec(1, BoundaryMode.NEUMANN_REFLECT))
    assert np.array_equal(a, b)


@given(
    L=st.integers(2, 64),
    h=st.sampled_from([1, 2, 4]),
    mode=st.sampled_from(MODES),
)
def test_matrix_symmetric_and_conservative(L, h, mode):
    if h >= L:
        return
    M = laplacian_matrix(L, StencilSpec(h, mode))
    assert np.array_equal(M, M.T)
    assert np.abs(M.sum(axis=1)).max() == 0.0
    assert np.abs(M.sum(axis=0)).max() == 0.0


def test_laplacian_equals_matrix_on_random_cases(rng):
    for _ in range(100):
        L = int(rng.integers(2, 65))
        d = int(rng.integers(1, 9))
        h = int(rng.choice([s for s in (1, 2, 4) if s < L]))
        mode = MODES[int(rng.integers(0, 2))]
        x = rng.standard_normal((L, d))
        spec = StencilSpec(h, mode)
        assert np.abs(laplacian(x, spec) - laplacian_matrix(L, spec) @ x).max() < 1e-12


def test_mass_conservation_random(rng):
    for _ in range(50):
        L = int(rng.integers(2, 65))
        h = int(rng.choice([s for s in (1, 2, 4) if s < L]))
        mode = MODES[int(rng.integers(0, 2))]
        x = rng.standard_normal((L, 4))
        out = laplacian(x, StencilSpec(h, mode))
        assert np.abs(out.sum(axis=0)).max() < 1e-10 * L


def test_spectrum_bounded(rng):
    for mode in MODES:
        for L, h in [(16, 1), (16, 2), (16, 4), (33, 4)]:
            ev = np.linalg.eigvalsh(laplacian_matrix(L, StencilSpec(h, mode)))
            assert ev.min() >= -4 - 1e-12
            assert ev.max() <= 1e-12


def test_scale_must_fit():
    with pytest.raises(InvalidStencilError):
        laplacian(np.zeros((4, 1)), StencilSpec(4))
    with pytest.raises(InvalidStencilError):
        laplacian_matrix(4, StencilSpec(5))
    with pytest.raises(InvalidStencilError):
        StencilSpec(0)


def test_degenerate_length_one():
    x = np.array([[3.0, -1.0]])
    assert np.array_equal(laplacian(x), np.zeros((1, 2)))
    assert np.array_equal(diffusion_step(x, 0.3), x)
    assert dirichlet_energy(x) == 0.0


# ------------------------------------------------------------- diffusion_step

def test_alpha_zero_identity_with_override(rng):
    x = rng.standard_normal((12, 2))
    out = diffusion_step(x, 0.0, allow_unstable=True)
    assert np.array_equal(out, x)


def test_alpha_out_of_range_rejected(rng):
    x = rng.standard_normal((12, 2))
    for bad in (0.0, 0.5, 0.7, -0.1):
        with pytest.raises(CflViolationError):
            diffusion_step(x, bad)
    diffusion_step(x, 0.7, allow_unstable=True)


def test_eigenmode_scaling():
    L, alpha = 16, 0.3
    basis, lams = dct_basis(L), eigenvalues(L)
    for k in (0, 1, 7, L - 1):
        mode = basis[:, k]
        out = diffusion_step(mode, alpha)
        assert np.abs(out - (1 + alpha * lams[k]) * mode).max() < 1e-12


def test_mean_preserved(rng):
    x = rng.standard_normal((32, 5))
    alpha = rng.uniform(0.05, 0.45, 5)
    for h in (1, 2, 4):
        for mode in MODES:
            out = diffusion_step(x, alpha, StencilSpec(h, mode))
            assert np.abs(out.mean(axis=0) - x.mean(axis=0)).max() < 1e-12


def test_dirichlet_energy_values():
    assert dirichlet_energy(np.array([0.0, 1.0, 0.0])) == 2.0
    assert dirichlet_energy(np.array([0.0, 1.0])) == 1.0
    assert dirichlet_energy(np.full((9, 3), 2.5)) == 0.0


def test_dirichlet_matches_quadratic_form(rng):
    x = rng.standard_normal((11, 2))
    M = laplacian_matrix(11)
    expected = sum(-x[:, c] @ M @ x[:, c] for c in range(2))
    assert abs(dirichlet_energy(x) - expected) < 1e-10


def test_lyapunov_monotone_under_cfl(rng):
    # 100 random cases vectorized as channels, each with its own alpha
    L, cases, steps = 16, 100, 1000
    x = rng.standard_normal((L, cases))
    alpha = rng.uniform(0.01, 0.49, cases)
    energies = (np.diff(x, axis=0) ** 2).sum(axis=0)
    for _ in range(steps):
        x = diffusion_step(x, alpha)
        new = (np.diff(x, axis=0) ** 2).sum(axis=0)
        assert np.all(new <= energies * (1 + 1e-10) + 1e-15 * energies[0])
        energies = new


def test_cfl_sharpness_blows_up():
    L = 32
    x = dct_basis(L)[:, L - 1]
    e = dirichlet_energy(x)
    grew = False
    for _ in range(10):
        x = diffusion_step(x, 0.51, allow_unstable=True)
        e_new = dirichlet_energy(x)
        if e_new > e:
            grew = True
        e = e_new
    assert grew


def test_rejects_nonfinite_fields():
    with pytest.raises(ValueError):
        laplacian(np.array([1.0, np.nan]))
