"""Exact spectral theory of the Neumann Laplacian.

Closed-form eigenvalues, the orthonormal cosine eigenbasis, per-frequency
gain of a diffusion step, the heat kernel, and least-squares fitting of
multi-scale stencil symbols to the ideal continuum symbol -omega^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import BoundaryMode, StencilSpec, laplacian_matrix


def eigenvalues(L: int) -> np.ndarray:
    """Eigenvalues lambda_k = -4 sin^2(pi k / (2L)), k = 0..L-1."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    k = np.arange(L)
    return -4.0 * np.sin(np.pi * k / (2 * L)) ** 2


def dct_basis(L: int) -> np.ndarray:
    """Orthonormal cosine eigenbasis of the Neumann Laplacian.

    Column k has entries proportional to cos(pi k (2i+1) / (2L)) for
    zero-indexed positions i (the DCT-II convention, normalized so that
    B.T @ B = I).
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    i = np.arange(L)[:, None]
    k = np.arange(L)[None, :]
    B = np.cos(np.pi * k * (2 * i + 1) / (2 * L))
    B[:, 0] *= np.sqrt(1.0 / L)
    if L > 1:
        B[:, 1:] *= np.sqrt(2.0 / L)
    return B


@dataclass(frozen=True)
class SpectralProfile:
    """Eigenvalues and cosine eigenbasis of the length-L Neumann Laplacian."""

    L: int
    eigenvalues: np.ndarray
    basis: np.ndarray


def spectral_profile(L: int) -> SpectralProfile:
    return SpectralProfile(L=L, eigenvalues=eigenvalues(L), basis=dct_basis(L))


def frequency_response(omega, h: int, alpha) -> np.ndarray | float:
    """Per-frequency gain 1 - 4 alpha sin^2(omega h / 2) of one diffusion step."""
    out = 1.0 - 4.0 * np.asarray(alpha, dtype=np.float64) * np.sin(
        np.asarray(omega, dtype=np.float64) * h / 2.0
    ) ** 2
    return out if isinstance(out, np.ndarray) and out.ndim else float(out)


def heat_kernel(L: int, t: float) -> np.ndarray:
    """K_t = sum_k exp(lambda_k t) phi_k phi_k^T: a row-stochastic smoother.

    K_0 is the identity; rows sum to 1 for every t >= 0 because the
    constant eigenvector has eigenvalue 0.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    B = dct_basis(L)
    return (B * np.exp(eigenvalues(L) * t)) @ B.T


@dataclass(frozen=True)
class FrequencyBand:
    """A labeled frequency interval [omega_lo, omega_hi] within [0, pi]."""

    label: str
    omega_lo: float
    omega_hi: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.omega_lo < self.omega_hi <= np.pi):
            raise ValueError(
                f"band '{self.label}' needs 0 <= lo < hi <= pi, got [{self.omega_lo}, {self.omega_hi}]"
            )


def quarter_bands() -> list[FrequencyBand]:
    """The default four equal bands partitioning [0, pi]."""
    edges = np.linspace(0.0, np.pi, 5)
    names = ["low", "mid-low", "mid-high", "high"]
    return [FrequencyBand(n, lo, hi) for n, lo, hi in zip(names, edges[:-1], edges[1:])]


def band_energy(
    h: int,
    alpha: float,
    bands: Sequence[FrequencyBand],
    samples: int = 256,
) -> np.ndarray:
    """Mean squared gain of one diffusion step over each frequency band.

    Each band is sampled on a uniform inclusive grid of ``samples`` points
    and the mean of H(omega)^2 is returned, so results are deterministic
    for a fixed sample count.
    """
    if len(bands) == 0:
        raise ValueError("band list must not be empty")
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    out = np.empty(len(bands))
    for j, band in enumerate(bands):
        om = np.linspace(band.omega_lo, band.omega_hi, samples)
        out[j] = float(np.mean(frequency_response(om, h, alpha) ** 2))
    return out


def fit_multiscale_weights(
    scales: Sequence[int],
    omega_max: float = np.pi / 2,
    grid_points: int = 512,
) -> tuple[np.ndarray, float]:
    """Least-squares weights matching the mixed stencil symbol to -omega^2.

    Fits sum_k w_k * (-4 / h_k^2) sin^2(omega h_k / 2) to -omega^2 on a
    uniform grid over [0, omega_max]. Returns (weights, rms residual).
    Appending a scale to an existing set can only shrink the residual.
    """
    scales = [int(h) for h in scales]
    if len(scales) == 0:
        raise ValueError("need at least one scale")
    if len(set(scales)) != len(scales):
        raise ValueError(f"scales must be distinct, got {scales}")
    if any(h < 1 for h in scales):
        raise ValueError(f"scales must be positive, got {scales}")
    if not (0.0 < omega_max <= np.pi):
        raise ValueError(f"omega_max must lie in (0, pi], got {omega_max}")
    if grid_points < len(scales) + 1:
        raise ValueError(f"grid_points={grid_points} too few for {len(scales)} scales")
    om = np.linspace(0.0, omega_max, grid_points)
    basis = np.stack([-4.0 / h**2 * np.sin(om * h / 2.0) ** 2 for h in scales], axis=1)
    target = -(om**2)
    weights, _, rank, _ = np.linalg.lstsq(basis, target, rcond=None)
    if rank < len(scales):
        raise ValueError(f"singular fit: scale symbols {scales} are linearly dependent")
    resid = basis @ weights - target
    return weights, float(np.sqrt(np.mean(resid**2)))


def reference_laplacian_matrix(L: int, scale: int = 1) -> np.ndarray:
    """Dense reflect-mode stencil matrix used as the spectral oracle."""
    return laplacian_matrix(L, StencilSpec(scale, BoundaryMode.NEUMANN_REFLECT))
