"""Exception types shared across the package."""


class ParseError(ValueError):
    """A text input (annotation CSV, embedding file, ...) is malformed.

    Messages include the 1-based line number when one is available.
    """


class FormatError(ValueError):
    """A binary input (feature file, checkpoint) has a bad magic,
    wrong version, or a truncated payload."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; message names the epoch and batch."""
