import numpy as np
import pytest

from pdelab.dynamics import (
    CoupledSystemConfig,
    CouplingKernel,
    FitWindowError,
    FlowConfig,
    ReactionPotential,
    StabilityBudgetError,
    check_exponential_decay,
    disagreement,
    energy_functional,
    flow_gradient,
    nonlocal_term,
    run_flow,
    simulate_coupled_heads,
    zero_coupling,
    EnergyTrace,
)


def _random_kernel(rng, L, beta=0.3):
    W = rng.uniform(0, 1, (L, L))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 0.0)
    return CouplingKernel(weights=W, beta=beta)


# -------------------------------------------------------------- nonlocal term

def test_nonlocal_zero_kernel(rng):
    u = rng.standard_normal((5, 2))
    out = nonlocal_term(u, zero_coupling(5))
    assert np.array_equal(out, np.zeros_like(u))


def test_nonlocal_constant_field(rng):
    k = _random_kernel(rng, 6)
    out = nonlocal_term(np.full((6, 3), 4.2), k)
    assert np.abs(out).max() < 1e-12


def test_nonlocal_hand_case():
    k = CouplingKernel(weights=np.array([[0.0, 1.0], [1.0, 0.0]]), beta=1.0)
    assert np.allclose(nonlocal_term(np.array([3.0, 1.0]), k), [2.0, -2.0])


def test_nonlocal_sums_to_zero_for_symmetric_kernels(rng):
    k = _random_kernel(rng, 9)
    u = rng.standard_normal((9, 4))
    assert np.abs(nonlocal_term(u, k).sum(axis=0)).max() < 1e-10


def test_nonlocal_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        nonlocal_term(rng.standard_normal((4, 1)), zero_coupling(5))


def test_kernel_validation():
    with pytest.raises(ValueError):
        CouplingKernel(weights=np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        CouplingKernel(weights=np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        CouplingKernel(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))


# ------------------------------------------------------------------- energies

def test_energy_zero_field_quadratic():
    cfg = FlowConfig(1.0, ReactionPotential(mu=2.0), zero_coupling(4), 0.01, 1)
    assert energy_functional(np.zeros((4, 2)), cfg) == 0.0


def test_energy_tension_hand_case():
    cfg = FlowConfig(1.0, None, zero_coupling(3), 0.01, 1)
    assert abs(energy_functional(np.array([0.0, 1.0, 0.0]), cfg) - 1.0) < 1e-15


def test_flow_gradient_matches_finite_differences(rng):
    for _ in range(5):
        L = int(rng.integers(3, 9))
        d = int(rng.integers(1, 3))
        pot = ReactionPotential(
            kind="anchored-quadratic",
            mu=float(rng.uniform(0.3, 1.5)),
            lambda_anchor=float(rng.uniform(0.1, 0.8)),
            anchor=rng.standard_normal((L, d)),
        )
        cfg = FlowConfig(float(rng.uniform(0.2, 1.0)), pot, _random_kernel(rng, L), 0.01, 1)
        u = rng.standard_normal((L, d))
        g = flow_gradient(u, cfg)
        eps = 1e-6
        fd = np.zeros_like(u)
        for i in range(L):
            for c in range(d):
                up, dn = u.copy(), u.copy()
                up[i, c] += eps
                dn[i, c] -= eps
                fd[i, c] = (energy_functional(up, cfg) - energy_functional(dn, cfg)) / (2 * eps)
        assert np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12) < 1e-4


# ------------------------------------------------------------------- run_flow

def test_flow_fixed_point_at_minimizer():
    L, d = 6, 2
    anchor = np.linspace(-1, 1, L * d).reshape(L, d)
    pot = ReactionPotential(kind="anchored-quadratic", mu=1.0, lambda_anchor=2.0, anchor=anchor)
    cfg = FlowConfig(0.0, pot, zero_coupling(L), dt=0.1, steps=50)
    minimizer = pot.lambda_anchor * anchor / (pot.mu + pot.lambda_anchor)
    u_final, trace = run_flow(minimizer, cfg)
    assert np.abs(u_final - minimizer).max() < 1e-12
    assert np.ptp(trace.energy) < 1e-12


def test_flow_converges_to_quadratic_minimizer(rng):
    L, d = 16, 2
    pot = ReactionPotential(kind="anchored-quadratic", mu=1.0, lambda_anchor=0.5,
                            anchor=rng.standard_normal((L, d)))
    cfg = FlowConfig(1.0, pot, zero_coupling(L), dt=0.05, steps=400)
    u_final, trace = run_flow(rng.standard_normal((L, d)), cfg)
    increases = np.diff(trace.energy)
    assert np.all(increases <= 1e-9 * np.abs(trace.energy[:-1]) + 1e-15)
    assert trace.grad_norm[-1] < 1e-6


def test_flow_double_well_energy_still_descends(rng):
    L = 12
    for seed in range(5):
        r = np.random.default_rng(seed)
        pot = ReactionPotential(kind="double-well-anchored", mu=1.0, lambda_anchor=0.1,
                                anchor=np.zeros((L, 1)))
        cfg = FlowConfig(0.5, pot, zero_coupling(L), dt=0.02, steps=300)
        _, trace = run_flow(r.standard_normal((L, 1)), cfg)
        assert np.all(np.diff(trace.energy) <= 1e-9 * np.abs(trace.energy[:-1]) + 1e-15)


def test_flow_energy_monotone_random_convex_runs():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        L = int(rng.integers(4, 12))
        d = int(rng.integers(1, 3))
        pot = ReactionPotential(
            kind="anchored-quadratic",
            mu=float(rng.uniform(0.2, 2.0)),
            lambda_anchor=float(rng.uniform(0.0, 1.0)),
            anchor=rng.standard_normal((L, d)),
        )
        kernel = _random_kernel(rng, L, beta=float(rng.uniform(0, 0.4)))
        alpha = float(rng.uniform(0.0, 1.0))
        lip = 4 * alpha + pot.mu + pot.lambda_anchor + 2 * kernel.beta * kernel.max_row_sum
        dt = float(rng.uniform(0.2, 0.95)) * 2.0 / lip
        cfg = FlowConfig(alpha, pot, kernel, dt=dt, steps=150)
        assert cfg.stable
        _, trace = run_flow(rng.standard_normal((L, d)), cfg)
        bad = np.diff(trace.energy) - 1e-9 * np.abs(trace.energy[:-1])
        assert bad.max() <= 1e-15, (seed, bad.max())


def test_flow_budget_enforced(rng):
    pot = ReactionPotential(mu=1.0)
    cfg = FlowConfig(10.0, pot, zero_coupling(8), dt=0.1, steps=10)
    assert not cfg.stable
    with pytest.raises(StabilityBudgetError):
        run_flow(rng.standard_normal((8, 1)), cfg)
    run_flow(rng.standard_normal((8, 1)), cfg, allow_unstable=True)


# ----------------------------------------------------------------- decay fits

def _quadratic_trace(rng, mu, dt=0.01, steps=600):
    pot = ReactionPotential(mu=mu)
    cfg = FlowConfig(0.0, pot, zero_coupling(8), dt=dt, steps=steps)
    return run_flow(rng.standard_normal((8, 2)), cfg)[1]


def test_decay_rate_mu_one(rng):
    rate, passed = check_exponential_decay(_quadratic_trace(rng, 1.0), 1.0)
    assert abs(rate + 1.0) < 0.1
    assert passed


def test_decay_rate_mu_two(rng):
    rate, passed = check_exponential_decay(_quadratic_trace(rng, 2.0), 2.0)
    assert abs(rate + 2.0) < 0.2
    assert passed


def test_decay_rejects_degenerate_trace():
    trace = EnergyTrace(
        energy=np.zeros(11), grad_norm=np.zeros(11), dirichlet=np.zeros(11), dt=0.1
    )
    with pytest.raises(FitWindowError):
        check_exponential_decay(trace, 1.0)


# -------------------------------------------------------------- coupled heads

def test_two_head_contraction_hand_case():
    cfg = CoupledSystemConfig(
        heads=2, alpha=np.zeros(2),
        beta=np.array([[0.0, 0.25], [0.25, 0.0]]), dt=1.0, steps=4,
    )
    finals, trace = simulate_coupled_heads(cfg, [np.full((4, 1), 1.0), np.zeros((4, 1))])
    # per-step disagreement-in-values halves, so V quarters
    ratios = trace[1:] / trace[:-1]
    assert np.allclose(ratios, 0.25)
    assert np.allclose(finals[0], 1 - finals[1])


def test_ring_synchronizes(rng):
    H = 4
    beta = np.zeros((H, H))
    for i in range(H):
        beta[i, (i + 1) % H] = beta[(i + 1) % H, i] = 0.2
    cfg = CoupledSystemConfig(heads=H, alpha=np.full(H, 0.1), beta=beta, dt=0.5, steps=200)
    assert cfg.connected()
    initials = [rng.standard_normal((8, 2)) for _ in range(H)]
    _, trace = simulate_coupled_heads(cfg, initials)
    assert trace[-1] < 1e-6 * trace[0]


def test_disconnected_pairs_plateau(rng):
    H = 4
    beta = np.zeros((H, H))
    beta[0, 1] = beta[1, 0] = 0.25
    beta[2, 3] = beta[3, 2] = 0.25
    cfg = CoupledSystemConfig(heads=H, alpha=np.zeros(H), beta=beta, dt=0.5, steps=200)
    assert not cfg.connected()
    initials = []
    for i in range(H):
        u = rng.standard_normal((8, 2))
        u -= u.mean()
        if i >= 2:
            u += 1.0
        initials.append(u)
    _, trace = simulate_coupled_heads(cfg, initials)
    assert trace[-1] > 0.1 * trace[0]


def test_coupled_heads_dimension_mismatch():
    cfg = CoupledSystemConfig(heads=2, alpha=np.zeros(2),
                              beta=np.array([[0.0, 0.1], [0.1, 0.0]]), dt=0.5, steps=3)
    with pytest.raises(ValueError):
        simulate_coupled_heads(cfg, [np.zeros((4, 1))])
    with pytest.raises(ValueError):
        simulate_coupled_heads(cfg, [np.zeros((4, 1)), np.zeros((5, 1))])


def test_disagreement_of_identical_heads_is_zero(rng):
    u = rng.standard_normal((6, 3))
    assert disagreement(np.stack([u, u, u])) == 0.0
