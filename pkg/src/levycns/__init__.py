"""Pseudo-spectral Galerkin simulator for a 2D stochastic chemotaxis-Navier-Stokes
system driven by multiplicative Gaussian and compensated-Poisson noise."""

from levycns.spectral import (
    SolenoidalVelocityField,
    SpectralScalarField,
    SpectralVectorField,
    TorusGrid,
)

__version__ = "0.1.0"

__all__ = [
    "TorusGrid",
    "SpectralScalarField",
    "SpectralVectorField",
    "SolenoidalVelocityField",
    "__version__",
]
