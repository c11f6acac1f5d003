"""Numerical laboratory for diffusion-smoothed sequence models."""

from .fields import (
    BoundaryMode,
    CflViolationError,
    InvalidStencilError,
    StencilSpec,
    as_field,
    diffusion_step,
    dirichlet_energy,
    laplacian,
    laplacian_matrix,
)
from .layer import (
    DiffusionLayerParams,
    LayerCache,
    backward,
    constrain_alpha,
    forward,
    grad_check,
)
from .spectral import (
    FrequencyBand,
    SpectralProfile,
    band_energy,
    dct_basis,
    eigenvalues,
    fit_multiscale_weights,
    frequency_response,
    heat_kernel,
    spectral_profile,
)

__all__ = [
    "BoundaryMode",
    "CflViolationError",
    "DiffusionLayerParams",
    "FrequencyBand",
    "InvalidStencilError",
    "LayerCache",
    "SpectralProfile",
    "StencilSpec",
    "as_field",
    "backward",
    "band_energy",
    "constrain_alpha",
    "dct_basis",
    "diffusion_step",
    "dirichlet_energy",
    "eigenvalues",
    "fit_multiscale_weights",
    "forward",
    "frequency_response",
    "grad_check",
    "heat_kernel",
    "laplacian",
    "laplacian_matrix",
    "spectral_profile",
]
