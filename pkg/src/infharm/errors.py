"""Exception types shared across the package."""


class InfharmError(Exception):
    """Base class for all package errors."""


class GridError(InfharmError, ValueError):
    """Invalid grid construction or stencil request."""


class DomainError(InfharmError, ValueError):
    """Point outside the domain where a closed form is defined."""


class PreconditionError(InfharmError, ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigError(InfharmError, ValueError):
    """Malformed or out-of-range configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NonFiniteError(InfharmError, ValueError):
    """A sampled value was NaN or infinite."""


class SchemeError(InfharmError, RuntimeError):
    """A discrete scheme produced output that its comparison principle forbids."""


class OverflowRiskError(InfharmError, OverflowError):
    """Energy evaluation would overflow double precision."""


class StrategyError(InfharmError, RuntimeError):
    """A game strategy produced an inadmissible move."""
