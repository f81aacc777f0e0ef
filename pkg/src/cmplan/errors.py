"""Exception types shared across the library."""


class ContractError(ValueError):
    """An argument violates an operation's contract (dimensions, ranges, missing pieces)."""


class InvalidQueryError(ValueError):
    """A planning query violates its preconditions (off-manifold, colliding, out of limits)."""


class SchemaError(ValueError):
    """A persisted file failed to parse or validate."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message} (at {path})")
        self.path = path


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class CorpusError(RuntimeError):
    """Demonstration corpus construction failed its quality gate."""
