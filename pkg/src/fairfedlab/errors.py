"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class SingularError(ArithmeticError):
    """A denominator underflowed; the configuration is effectively singular."""


class DimensionError(ValueError):
    """Array shapes or parameter lengths are inconsistent."""


class ExhaustionError(RuntimeError):
    """A retry budget was exhausted without producing a valid result."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
