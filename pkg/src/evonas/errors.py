"""Exception types shared across the package."""


class EvoNasError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(EvoNasError):
    """An operand has an incompatible or invalid shape."""


class ContractError(EvoNasError):
    """A caller violated an operation's contract (bad argument, bad state)."""


class DegenerateVectorError(EvoNasError):
    """A vector with zero norm was passed where a direction is required."""


class UnknownIdError(EvoNasError):
    """A speaker or utterance id could not be resolved."""


class GenomeParseError(EvoNasError):
    """A genome string could not be parsed.

    Carries the character position where parsing failed.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ConfigError(EvoNasError):
    """An experiment configuration is invalid or inconsistent."""
