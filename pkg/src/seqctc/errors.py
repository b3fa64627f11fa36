"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/input problems exit 2, internal
numeric or training failures exit 1.
"""


class SeqctcError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SeqctcError):
    """Array dimensions do not match an operation's contract."""


class InvalidSymbolError(SeqctcError):
    """A symbol index or character falls outside the alphabet."""


class EnumerationLimitError(SeqctcError):
    """A brute-force oracle was asked to enumerate too many paths."""


class InfeasibleLabelError(SeqctcError):
    """The label has probability exactly zero under the given posteriors."""


class NumericError(SeqctcError):
    """Non-finite values where finite ones are required."""


class StateError(SeqctcError):
    """An operation was called outside its required call sequence."""


class ConfigError(SeqctcError):
    """A configuration file or value is invalid."""


class ManifestError(SeqctcError):
    """A dataset manifest is malformed."""


class GenerationError(SeqctcError):
    """Synthetic rendering cannot satisfy the generation spec."""


class CheckpointError(SeqctcError):
    """A checkpoint file is malformed or incompatible."""


class TrainingError(SeqctcError):
    """Training cannot proceed (for example, no feasible samples)."""


class UsageError(SeqctcError):
    """An API or CLI call violates its usage contract."""
