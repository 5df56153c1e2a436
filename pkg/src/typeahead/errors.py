"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A parameter or configuration value is unusable (bad fraction sums, k < 1, ...)."""


class ParseError(ValueError):
    """An input file violates its documented format. Carries the offending line when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ArtifactError(RuntimeError):
    """A persisted artifact (trie, model, embedding table) cannot be read or is inconsistent."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss. Carries the epoch index."""

    def __init__(self, epoch, message="loss is not finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class EvaluationError(ValueError):
    """The evaluation request cannot be satisfied (empty test set, missing artifacts)."""
