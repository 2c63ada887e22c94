"""Exception taxonomy shared by all mmembed modules.

The CLI maps these onto exit codes: ``InputError`` (and subclasses) exit
with 2, ``NumericError`` with 3.
"""


class MMEmbedError(Exception):
    """Base class for all mmembed errors."""


class InputError(MMEmbedError):
    """Malformed files, bad configuration, missing inputs."""


class ParseError(InputError):
    """A specific line of an input file could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class ConfigError(InputError):
    """Inconsistent or out-of-range configuration values."""


class DataError(InputError):
    """Inputs are parseable but inconsistent with each other."""


class MiningError(InputError):
    """Triplet mining could not complete (e.g. negative pool exhausted)."""


class ShapeError(MMEmbedError, ValueError):
    """Operands with incompatible dimensions."""


class NumericError(MMEmbedError):
    """Non-finite values where finite ones are required."""
