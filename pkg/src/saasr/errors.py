"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes do not line up."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class ContractError(ValueError):
    """A call violates an operation's preconditions."""
