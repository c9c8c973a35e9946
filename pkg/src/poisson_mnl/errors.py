"""Exception hierarchy shared across the package."""


class PoissonMnlError(Exception):
    """Base class for package errors."""


class InvalidInputError(PoissonMnlError):
    """Inputs violate a documented precondition (dimension mismatch, bad bounds, ...)."""


class NumericOverflowError(PoissonMnlError):
    """An exponent left the safe range; signals out-of-envelope parameters."""


class CapacityError(PoissonMnlError):
    """Exact enumeration would exceed the configured limit; enable heuristic search instead."""


class ConfigurationError(PoissonMnlError):
    """A scenario or policy configuration cannot support the requested procedure."""


class NeedsMoreExplorationError(PoissonMnlError):
    """An information matrix is still singular; the policy has not explored enough."""


class InternalConsistencyError(PoissonMnlError):
    """A closed-form constant evaluated to a non-finite or non-positive value."""
