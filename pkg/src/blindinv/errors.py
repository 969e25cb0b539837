"""Exception types shared across the package."""


class BlindinvError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(BlindinvError):
    """Operand shapes do not conform; message names both shapes."""


class NumericalError(BlindinvError):
    """A NaN/Inf was produced or an iteration diverged."""


class FormatError(BlindinvError):
    """A serialized file is malformed (bad magic, truncation, bad header)."""


class ConfigError(BlindinvError):
    """An experiment configuration is invalid or incomplete."""


class UnderdeterminedError(BlindinvError):
    """Fewer mixtures than sources where a method requires the opposite."""
