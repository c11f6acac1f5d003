"""Sequence fields and the discrete Neumann Laplacian they evolve under.

A field is a plain float64 array of shape (L, d): L lattice positions by d
channels. 1-D arrays of shape (L,) are accepted everywhere and treated as a
single channel. All operators act along axis 0, channel by channel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class InvalidStencilError(ValueError):
    """Stencil step does not fit the lattice it is applied to."""


class CflViolationError(ValueError):
    """Diffusion coefficient outside the stable range (0, 1/2)."""


class BoundaryMode(str, enum.Enum):
    """Rule for neighbors that fall off the ends of the lattice.

    Both modes reduce to the classical Neumann rows (first row X2 - X1,
    last row X_{L-1} - X_L) at step 1. They differ for larger steps:

    * ``NEUMANN_REFLECT``: indices reflect about the boundary with
      half-sample symmetry (ghost -j maps to j-1, zero-indexed). Every
      step size shares the cosine eigenbasis, with eigenvalues
      -4 sin^2(pi k h / (2L)).
    * ``REPLICATE_CLAMP``: the missing neighbor replicates the cell's own
      value, i.e. the out-of-range bond carries zero flux. Equivalent to
      applying independent Neumann chains to each of the h interleaved
      sublattices.

    Both choices give exactly symmetric, mass-conserving operators with
    spectrum contained in [-4, 0].
    """

    NEUMANN_REFLECT = "neumann-reflect"
    REPLICATE_CLAMP = "replicate-clamp"


@dataclass(frozen=True)
class StencilSpec:
    """Step size and boundary rule defining a discrete Laplacian."""

    scale: int = 1
    boundary: BoundaryMode = BoundaryMode.REPLICATE_CLAMP

    def __post_init__(self) -> None:
        if int(self.scale) != self.scale or self.scale < 1:
            raise InvalidStencilError(f"scale must be a positive integer, got {self.scale}")
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "boundary", BoundaryMode(self.boundary))


def as_field(values) -> np.ndarray:
    """Coerce to a float64 field array and validate finiteness."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] < 1:
        raise ValueError(f"field must have shape (L,) or (L, d), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("field contains NaN or Inf")
    return x


def _neighbor_indices(L: int, h: int, boundary: BoundaryMode) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(L)
    left = i - h
    right = i + h
    if boundary is BoundaryMode.NEUMANN_REFLECT:
        left = np.where(left < 0, -left - 1, left)
        right = np.where(right >= L, 2 * L - 1 - right, right)
    else:
        # zero-flux: a missing neighbor contributes X_i - X_i = 0
        left = np.where(left < 0, i, left)
        right = np.where(right >= L, i, right)
    return left, right


def _check_scale(L: int, stencil: StencilSpec) -> None:
    if stencil.scale >= L:
        raise InvalidStencilError(f"stencil scale {stencil.scale} must be < field length {L}")


def laplacian(field, stencil: StencilSpec = StencilSpec()) -> np.ndarray:
    """Apply the scale-h Neumann Laplacian along axis 0, per channel.

    Interior rows are X[i-h] - 2 X[i] + X[i+h]; boundary rows follow the
    stencil's boundary rule. Output channels sum to zero (mass
    conservation) and the operator is exactly symmetric in both modes.
    """
    x = as_field(field)
    L = x.shape[0]
    if L == 1:
        return np.zeros_like(x)
    _check_scale(L, stencil)
    h = stencil.scale
    out = np.empty_like(x)
    if L > 2 * h:
        # interior rows stream as slices; only the 2h boundary rows gather
        np.add(x[: L - 2 * h], x[2 * h :], out=out[h : L - h])
        out[h : L - h] -= 2.0 * x[h : L - h]
    left, right = _neighbor_indices(L, h, stencil.boundary)
    # the two blocks may overlap when L < 2h; both apply the same formula
    for rows in (slice(0, h), slice(max(L - h, 0), L)):
        out[rows] = x[left[rows]]
        out[rows] -= 2.0 * x[rows]
        out[rows] += x[right[rows]]
    return out


def laplacian_matrix(L: int, stencil: StencilSpec = StencilSpec()) -> np.ndarray:
    """Dense matrix M with laplacian(X) == M @ X; symmetric, rows sum to 0."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if L == 1:
        return np.zeros((1, 1))
    _check_scale(L, stencil)
    left, right = _neighbor_indices(L, stencil.scale, stencil.boundary)
    M = np.zeros((L, L))
    i = np.arange(L)
    np.add.at(M, (i, left), 1.0)
    np.add.at(M, (i, i), -2.0)
    np.add.at(M, (i, right), 1.0)
    return M


def diffusion_step(
    field,
    alpha,
    stencil: StencilSpec = StencilSpec(),
    *,
    allow_unstable: bool = False,
) -> np.ndarray:
    """One explicit diffusion update X + alpha * laplacian(X).

    ``alpha`` is a scalar or per-channel array; each entry must lie in the
    stable open interval (0, 1/2) unless ``allow_unstable`` is set (used
    for instability counterexamples and the identity case alpha = 0).
    Channel means are preserved exactly up to roundoff.
    """
    x = as_field(field)
    a = np.asarray(alpha, dtype=np.float64)
    if not allow_unstable and (np.any(a <= 0.0) or np.any(a >= 0.5)):
        bad = a[(a <= 0.0) | (a >= 0.5)]
        raise CflViolationError(
            f"alpha must lie in (0, 0.5); offending values {np.unique(bad)!r}"
        )
    if x.shape[0] == 1:
        return x.copy()
    return x + a * laplacian(x, stencil)


def dirichlet_energy(field) -> float:
    """Total squared variation sum_channels X^T (-Delta_N) X >= 0.

    Equals the sum over nearest-neighbor bonds of squared differences;
    zero exactly when every channel is constant.
    """
    x = as_field(field)
    if x.shape[0] == 1:
        return 0.0
    diffs = np.diff(x, axis=0)
    return float(np.sum(diffs * diffs))
