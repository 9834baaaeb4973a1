"""Data-driven contraction certificates and controller synthesis for polynomial systems."""
from .errors import (
    AsymmetryError,
    ContractSOSError,
    DegenerateIdentificationError,
    DimensionError,
    InfeasibleError,
    NoiseModelError,
    NotPositiveDefiniteError,
    SamplingError,
    UnverifiedError,
)
from .polyalg import Polynomial, PolyMatrix, PolyVec, monomial_basis

__version__ = "0.1.0"
