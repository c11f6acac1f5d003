"""Explicit-Euler simulators for the variational gradient flow.

The discrete energy is

    E[u] = (alpha/2) sum_bonds (u_{i+1} - u_i)^2  +  sum_i F(u_i)
           + (beta/2) sum_{i<j} K_ij |u_i - u_j|^2

summed over channels, and the flow steps u <- u + dt * (alpha Lap(u)
- F'(u) - beta L_K[u]). The forward-difference tension term makes the
discrete gradient of E equal the flow's right-hand side exactly, which the
tests verify against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .fields import StencilSpec, as_field, dirichlet_energy, laplacian


class StabilityBudgetError(ValueError):
    """Step size too large for the explicit-Euler stability budget."""


class FitWindowError(ValueError):
    """Gradient trace too degenerate to fit a decay rate."""


QUADRATIC = "quadratic"
ANCHORED_QUADRATIC = "anchored-quadratic"
DOUBLE_WELL_ANCHORED = "double-well-anchored"
_KINDS = (QUADRATIC, ANCHORED_QUADRATIC, DOUBLE_WELL_ANCHORED)


@dataclass(frozen=True)
class ReactionPotential:
    """Pointwise reaction potential F(u) with optional anchoring.

    quadratic:            F = (mu/2) u^2
    anchored-quadratic:   F = (mu/2) u^2 + (lambda_anchor/2) |u - anchor|^2
    double-well-anchored: F = (mu/4) (u^2 - 1)^2 + (lambda_anchor/2) |u - anchor|^2

    The double well is non-convex; convexity-dependent guarantees are
    skipped for it.
    """

    kind: str = QUADRATIC
    mu: float = 1.0
    lambda_anchor: float = 0.0
    anchor: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {_KINDS}")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.lambda_anchor < 0:
            raise ValueError(f"lambda_anchor must be >= 0, got {self.lambda_anchor}")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", as_field(self.anchor))

    @property
    def convex(self) -> bool:
        return self.kind != DOUBLE_WELL_ANCHORED

    def _anchor_for(self, u: np.ndarray) -> np.ndarray | float:
        return 0.0 if self.anchor is None else self.anchor

    def value(self, u: np.ndarray) -> np.ndarray:
        if self.kind == DOUBLE_WELL_ANCHORED:
            base = 0.25 * self.mu * (u * u - 1.0) ** 2
        else:
            base = 0.5 * self.mu * u * u
        if self.kind in (ANCHORED_QUADRATIC, DOUBLE_WELL_ANCHORED) and self.lambda_anchor > 0:
            base = base + 0.5 * self.lambda_anchor * (u - self._anchor_for(u)) ** 2
        return base

    def derivative(self, u: np.ndarray) -> np.ndarray:
        if self.kind == DOUBLE_WELL_ANCHORED:
            out = self.mu * u * (u * u - 1.0)
        else:
            out = self.mu * u
        if self.kind in (ANCHORED_QUADRATIC, DOUBLE_WELL_ANCHORED) and self.lambda_anchor > 0:
            out = out + self.lambda_anchor * (u - self._anchor_for(u))
        return out


@dataclass(frozen=True)
class CouplingKernel:
    """Symmetric nonnegative coupling weights with overall strength beta."""

    weights: np.ndarray
    beta: float = 0.0

    def __post_init__(self) -> None:
        W = np.asarray(self.weights, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"weights must be square, got {W.shape}")
        if not np.array_equal(W, W.T):
            raise ValueError("coupling weights must be exactly symmetric")
        if np.any(W < 0):
            raise ValueError("coupling weights must be nonnegative")
        if np.any(np.diag(W) != 0):
            raise ValueError("coupling weights must have zero diagonal")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        object.__setattr__(self, "weights", W)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def max_row_sum(self) -> float:
        return float(self.weights.sum(axis=1).max()) if self.size else 0.0


def zero_coupling(L: int) -> CouplingKernel:
    return CouplingKernel(weights=np.zeros((L, L)), beta=0.0)


@dataclass(frozen=True)
class FlowConfig:
    """Gradient-flow setup: diffusion strength, reaction, coupling, stepping.

    ``potential=None`` disables the reaction term entirely.
    """

    alpha_diff: float
    potential: ReactionPotential | None
    coupling: CouplingKernel
    dt: float
    steps: int

    def __post_init__(self) -> None:
        if self.alpha_diff < 0:
            raise ValueError(f"alpha_diff must be >= 0, got {self.alpha_diff}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def stability_budget(self) -> float:
        """dt times the curvature bound of the discrete energy Hessian.

        Explicit Euler on a gradient flow is non-expansive in energy when
        this is < 2 (for convex potentials).
        """
        p = self.potential
        mu = 0.0 if p is None else p.mu + p.lambda_anchor
        lip = (
            4.0 * self.alpha_diff
            + mu
            + 2.0 * self.coupling.beta * self.coupling.max_row_sum
        )
        return self.dt * lip

    @property
    def stable(self) -> bool:
        return self.stability_budget() < 2.0


@dataclass(frozen=True)
class EnergyTrace:
    """Per-step energy, gradient norm and Dirichlet energy of one run."""

    energy: np.ndarray
    grad_norm: np.ndarray
    dirichlet: np.ndarray
    dt: float

    def __len__(self) -> int:
        return len(self.energy)


def nonlocal_term(u, coupling: CouplingKernel) -> np.ndarray:
    """Kernel-weighted disagreement sum_y K(x,y) (u(x) - u(y)), per channel."""
    x = as_field(u)
    if coupling.size != x.shape[0]:
        raise ValueError(
            f"coupling size {coupling.size} does not match field length {x.shape[0]}"
        )
    row = coupling.weights.sum(axis=1)
    row = row[:, None] if x.ndim == 2 else row
    return row * x - coupling.weights @ x


def energy_functional(u, config: FlowConfig) -> float:
    """Discrete energy E[u]; >= 0 whenever the potential is nonnegative."""
    x = as_field(u)
    p = config.potential
    tension = 0.5 * config.alpha_diff * dirichlet_energy(x)
    reaction = 0.0 if p is None else float(np.sum(p.value(x)))
    coupling = 0.0
    if config.coupling.beta > 0 and config.coupling.size:
        if config.coupling.size != x.shape[0]:
            raise ValueError("coupling size does not match field length")
        xm = x if x.ndim == 2 else x[:, None]
        sq = ((xm[:, None, :] - xm[None, :, :]) ** 2).sum(axis=2)
        # half the ordered double sum = sum over unordered pairs
        coupling = 0.25 * config.coupling.beta * float(np.sum(config.coupling.weights * sq))
    return tension + reaction + coupling


def flow_gradient(u, config: FlowConfig) -> np.ndarray:
    """Exact gradient of energy_functional; the flow steps along its negative."""
    x = as_field(u)
    g = -config.alpha_diff * laplacian(x, StencilSpec(1))
    if config.potential is not None:
        g = g + config.potential.derivative(x)
    if config.coupling.beta > 0:
        g = g + config.coupling.beta * nonlocal_term(x, config.coupling)
    return g


def run_flow(
    u0,
    config: FlowConfig,
    *,
    allow_unstable: bool = False,
) -> tuple[np.ndarray, EnergyTrace]:
    """Explicit-Euler gradient descent on the energy functional.

    With a convex potential and the stability budget satisfied the energy
    trace is non-increasing and the iterates converge to the unique
    minimizer.
    """
    if not allow_unstable and not config.stable:
        raise StabilityBudgetError(
            f"dt * curvature = {config.stability_budget():.4g} >= 2; "
            "reduce dt or pass allow_unstable=True"
        )
    u = as_field(u0).copy()
    n = config.steps
    energy = np.empty(n + 1)
    grad_norm = np.empty(n + 1)
    diri = np.empty(n + 1)
    for step in range(n + 1):
        g = flow_gradient(u, config)
        energy[step] = energy_functional(u, config)
        grad_norm[step] = float(np.linalg.norm(g))
        diri[step] = dirichlet_energy(u)
        if step < n:
            u = u - config.dt * g
    return u, EnergyTrace(energy=energy, grad_norm=grad_norm, dirichlet=diri, dt=config.dt)


def check_exponential_decay(trace: EnergyTrace, mu: float, *, slack: float = 0.15) -> tuple[float, bool]:
    """Fit the decay rate of the gradient norm over the first half of a trace.

    Returns (fitted_rate, passed) where passed means the decay achieved at
    least (1 - slack) of the guaranteed rate mu.
    """
    half = max(3, len(trace) // 2)
    g = trace.grad_norm[:half]
    t = np.arange(half) * trace.dt
    mask = g > 1e-14
    if mask.sum() < 2:
        raise FitWindowError("gradient norms underflow; nothing to fit")
    rate = float(np.polyfit(t[mask], np.log(g[mask]), 1)[0])
    return rate, rate <= -mu * (1.0 - slack)


@dataclass(frozen=True)
class CoupledSystemConfig:
    """H diffusing-reacting heads coupled through a symmetric graph."""

    heads: int
    alpha: np.ndarray
    beta: np.ndarray
    potentials: Sequence[ReactionPotential | None] = dc_field(default=())
    dt: float = 0.1
    steps: int = 100

    def __post_init__(self) -> None:
        a = np.asarray(self.alpha, dtype=np.float64)
        B = np.asarray(self.beta, dtype=np.float64)
        if a.shape != (self.heads,):
            raise ValueError(f"alpha must have shape ({self.heads},), got {a.shape}")
        if np.any(a < 0):
            raise ValueError("alpha entries must be >= 0")
        if B.shape != (self.heads, self.heads):
            raise ValueError(f"beta must have shape ({self.heads},{self.heads}), got {B.shape}")
        if not np.array_equal(B, B.T) or np.any(B < 0) or np.any(np.diag(B) != 0):
            raise ValueError("beta must be symmetric, nonnegative, with zero diagonal")
        pots = tuple(self.potentials) if self.potentials else (None,) * self.heads
        if len(pots) != self.heads:
            raise ValueError(f"need {self.heads} potentials, got {len(pots)}")
        if self.dt <= 0 or self.steps < 1:
            raise ValueError("dt must be > 0 and steps >= 1")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", B)
        object.__setattr__(self, "potentials", pots)

    def connected(self) -> bool:
        n_comp, _ = connected_components(self.beta > 0, directed=False)
        return bool(n_comp == 1)

    def stability_budget(self) -> float:
        mu_max = max(
            (p.mu + p.lambda_anchor for p in self.potentials if p is not None),
            default=0.0,
        )
        lip = 4.0 * float(self.alpha.max()) + mu_max + 2.0 * float(self.beta.sum(axis=1).max())
        return self.dt * lip

    @property
    def stable(self) -> bool:
        return self.stability_budget() < 2.0


def disagreement(states: np.ndarray) -> float:
    """V = (1/2) sum_{i,j} |u_i - u_j|^2 over ordered head pairs."""
    diff = states[:, None] - states[None, :]
    return 0.5 * float(np.sum(diff * diff))


def simulate_coupled_heads(
    config: CoupledSystemConfig,
    initial: Sequence[np.ndarray],
    *,
    allow_unstable: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the coupled-head system; returns (final_states, disagreement trace).

    A connected coupling graph drives the disagreement toward zero; with
    disconnected components the cross-component disagreement persists.
    """
    if len(initial) != config.heads:
        raise ValueError(f"need {config.heads} initial fields, got {len(initial)}")
    fields = [as_field(u) for u in initial]
    shape = fields[0].shape
    if any(f.shape != shape for f in fields):
        raise ValueError("all head fields must share one shape")
    if not allow_unstable and not config.stable:
        raise StabilityBudgetError(
            f"dt * curvature = {config.stability_budget():.4g} >= 2"
        )
    u = np.stack(fields)  # (H, L, d) or (H, L)
    trace = np.empty(config.steps + 1)
    trace[0] = disagreement(u)
    stencil = StencilSpec(1)
    for step in range(1, config.steps + 1):
        new = np.empty_like(u)
        row = config.beta.sum(axis=1)
        for i in range(config.heads):
            rhs = np.zeros(shape)
            if config.alpha[i] > 0 and shape[0] > 1:
                rhs += config.alpha[i] * laplacian(u[i], stencil)
            pot = config.potentials[i]
            if pot is not None:
                rhs -= pot.derivative(u[i])
            rhs += np.tensordot(config.beta[i], u, axes=(0, 0)) - row[i] * u[i]
            new[i] = u[i] + config.dt * rhs
        u = new
        trace[step] = disagreement(u)
    return u, trace
