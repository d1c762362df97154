"""Exception types shared across the package."""


class XvakitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(XvakitError):
    """Inconsistent or invalid model/market/run configuration."""


class ArgumentError(XvakitError):
    """Invalid argument to an otherwise well-configured operation."""


class UnsupportedContractError(XvakitError):
    """Contract kind outside the implemented catalogue."""


class UnsupportedConfigurationError(XvakitError):
    """Repo-set / volatility combination with no admissible funding map.

    Raised when the residual treasury-funded position depends on the
    defaultable hedge legs themselves (e.g. a defaultable bond that is
    neither repo-financed nor spanned by the traded assets), so no
    state-only funding map exists.
    """


class NumericalDegeneracyError(XvakitError):
    """Regression design matrix degenerate at some time slice."""

    def __init__(self, message, slice_index=None):
        super().__init__(message)
        self.slice_index = slice_index


class StepSizeError(XvakitError):
    """Backward step too coarse for the implicit fixed point; refine the grid."""


class RegimeError(XvakitError):
    """Closed-form formula requested outside its validity regime."""


class AuthorizationError(XvakitError):
    """Linear fast path requested without a qualifying verifier verdict."""


class PreconditionError(XvakitError):
    """Operation precondition violated (e.g. mixed-sign payoff under replacement close-out)."""


class IdentityViolationError(XvakitError):
    """Value decomposition identity breached beyond estimator tolerance."""

    def __init__(self, message, residual, tolerance):
        super().__init__(message)
        self.residual = residual
        self.tolerance = tolerance


class TableMismatchError(XvakitError):
    """A sign-table cell contradicts its verdict's prediction."""


class HedgeReconstructionError(XvakitError):
    """Asset hedge weights not recoverable (singular volatility matrix)."""
