"""Exception types shared by the pipeline stages."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for failures the CLI reports with a dedicated exit code."""

    exit_code = 1


class ConfigError(PipelineError):
    """Raised when the configuration file or flags fail validation."""

    exit_code = 2


class MissingUpstreamError(PipelineError):
    """Raised when a stage runs before the stage that produces its inputs."""

    exit_code = 3

    def __init__(self, stage: str, upstream: str):
        super().__init__(f"Stage '{stage}' needs the output of '{upstream}': run {upstream} first")
        self.stage = stage
        self.upstream = upstream


class DataError(PipelineError):
    """Raised when input data cannot be used."""

    exit_code = 4


class RecordError(DataError):
    """A single CDR record could not be parsed."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ModelFormatError(DataError):
    """The model container is not readable."""

    code = "model-format"


class ModelVersionError(ModelFormatError):
    """Bad magic bytes or a format version this build does not know."""

    code = "model-version"


class TruncatedModelError(ModelFormatError):
    """The container ends before the tables its header declares."""

    code = "model-truncated"
