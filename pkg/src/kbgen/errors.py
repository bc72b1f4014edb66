"""Exception types raised across the package."""


class KBGenError(Exception):
    """Base class for all package errors."""


class DimensionError(KBGenError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(KBGenError, ArithmeticError):
    """A value is NaN, infinite, or otherwise undefined."""


class ContractError(KBGenError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(KBGenError, ValueError):
    """An invalid configuration value."""


class FrozenError(KBGenError, RuntimeError):
    """Attempt to mutate a frozen knowledge base."""


class VocabularyError(KBGenError, KeyError):
    """A token id outside the vocabulary."""


class CheckpointError(KBGenError, ValueError):
    """A checkpoint file is malformed or has an unsupported version."""
