"""Exception types shared across the package."""


class TextrecError(Exception):
    """Base class for all library errors."""


class ShapeError(TextrecError):
    """Tensor or mask dimensions disagree with an operation's contract."""


class ConfigError(TextrecError):
    """A configuration value is invalid (bad key, bad combination, bad range)."""


class LengthError(TextrecError):
    """A label or sequence exceeds the configured maximum length."""


class DecodeStateError(TextrecError):
    """Decoding was advanced past its terminal state."""


class ContractError(TextrecError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class NumericError(TextrecError):
    """A numerical routine failed (singular system, non-finite loss)."""


class EvalError(TextrecError):
    """Evaluation could not run (e.g. empty manifest)."""
