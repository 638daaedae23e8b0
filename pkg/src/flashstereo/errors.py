"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FlashStereoError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(FlashStereoError, ValueError):
    exit_code = 2
    code = "config_error"


class DataError(FlashStereoError, ValueError):
    exit_code = 3
    code = "data_error"


class NumericalError(FlashStereoError, ArithmeticError):
    exit_code = 4
    code = "numerical_failure"


class DomainError(DataError):
    code = "domain_error"


class ParseError(DataError):
    code = "parse_error"


class NoSignalError(DataError):
    code = "no_signal"


class InsufficientDataError(DataError):
    code = "insufficient_data"


class DegenerateGeometryError(NumericalError):
    code = "degenerate_geometry"


class BehindCameraError(NumericalError):
    code = "behind_camera"


class TrainingError(NumericalError):
    code = "training_failure"


class StageError(FlashStereoError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        self.code = getattr(cause, "code", "error")
        super().__init__(f"stage '{stage}' failed [{self.code}]: {cause}")
