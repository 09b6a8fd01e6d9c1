"""Exception types shared across the package."""


class ProtoAdaptError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(ProtoAdaptError):
    """A matrix expected to be positive definite is not; caller must regularize."""


class InvalidDimension(ProtoAdaptError):
    """Dimension arguments or operand shapes do not chain."""


class MissingClass(ProtoAdaptError):
    """A sampling distribution places mass on a class absent from the prototypes."""

    def __init__(self, label):
        super().__init__(f"no prototype for class {label}")
        self.label = label


class DivergenceError(ProtoAdaptError):
    """An optimization produced a non-finite objective value."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ParseError(ProtoAdaptError):
    """Malformed bytes encountered while decoding a binary payload."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DataAccessRevoked(ProtoAdaptError):
    """A private dataset handle was used after its release point."""


class ConfigError(ProtoAdaptError):
    """A run configuration is malformed or contains unknown keys."""
