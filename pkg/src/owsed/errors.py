"""Exception hierarchy shared across the package.

Every CLI-visible failure maps to one of these; the CLI prints the
``code`` attribute as a machine-parseable prefix and exits nonzero.
"""


class OwsedError(Exception):
    code = "E_INTERNAL"


class ConfigError(OwsedError):
    """Invalid, unknown, or inconsistent configuration."""

    code = "E_CONFIG"


class DataError(OwsedError):
    """Malformed annotation files, vocabularies, or audio inputs."""

    code = "E_DATA"


class ParseError(DataError):
    """Syntactically malformed row in a text input; carries the line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ValidationError(DataError):
    """Well-formed input that violates a domain invariant."""

    code = "E_VALIDATION"


class CheckpointError(OwsedError):
    """Checkpoint missing, unreadable, or incompatible."""

    code = "E_CHECKPOINT"


class TrainingDivergedError(OwsedError):
    """Non-finite loss encountered; carries the offending batch id."""

    code = "E_DIVERGED"

    def __init__(self, batch_id, message):
        super().__init__(f"batch {batch_id}: {message}")
        self.batch_id = batch_id
