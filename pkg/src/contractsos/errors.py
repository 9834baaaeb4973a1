"""Exception hierarchy shared by all modules."""


class ContractSOSError(Exception):
    """Base class for package errors."""


class DimensionError(ContractSOSError, ValueError):
    """Array or polynomial dimensions do not agree."""


class NotPositiveDefiniteError(ContractSOSError, ValueError):
    """A matrix expected to be positive definite is not."""


class AsymmetryError(ContractSOSError, ValueError):
    """A matrix expected to be symmetric is not (beyond tolerance)."""


class NoiseModelError(ContractSOSError, ValueError):
    """The noise model violates the informativity assumptions."""


class DegenerateIdentificationError(ContractSOSError, ValueError):
    """The data do not pin down a bounded parameter set (N22 not negative definite)."""


class SamplingError(ContractSOSError, RuntimeError):
    """Rejection sampling of consistent parameters gave up."""


class InfeasibleError(ContractSOSError, RuntimeError):
    """No certificate found by the synthesis program (not proof of nonexistence)."""


class UnverifiedError(ContractSOSError, RuntimeError):
    """The optimizer converged but the dense-grid audit failed."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
