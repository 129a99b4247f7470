"""Exception types shared across the package."""


class SeqmixError(Exception):
    """Base class for all seqmix errors."""


class ConfigError(SeqmixError):
    """Invalid configuration value. Carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataFormatError(SeqmixError):
    """Corrupt or mismatched on-disk artifact (dataset, checkpoint, ...)."""


class MissingArtifactError(SeqmixError):
    """A required input file is absent; message names the command that produces it."""


class TrainingDiverged(SeqmixError):
    """Non-finite loss encountered during optimization."""


class EnumerationCapExceeded(SeqmixError):
    """Candidate-sequence enumeration would exceed the configured cap."""
