"""Package exception types, mapped to CLI exit codes in cli.py."""


class ValidationError(ValueError):
    """Bad config, manifest, or argument values. CLI exit code 1."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact (manifest, checkpoint) is absent. CLI exit code 2."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss. CLI exit code 3."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
