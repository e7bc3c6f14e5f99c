"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigurationError(ValueError):
    """Invalid architecture or run configuration."""


class NumericsError(ArithmeticError):
    """Non-finite values, or a numeric-stability guard tripped."""


class CheckpointError(RuntimeError):
    """Malformed, truncated or incompatible checkpoint file."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class UsageError(RuntimeError):
    """An API was called in an unsupported order (e.g. backward without a tape)."""
