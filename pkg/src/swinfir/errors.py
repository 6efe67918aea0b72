"""Exception types. Each carries the process exit code and a stable message prefix used by the CLI."""


class SwinFIRError(Exception):
    code = "E-INTERNAL"
    exit_code = 1


class UsageError(SwinFIRError):
    code = "E-USAGE"
    exit_code = 1


class ConfigError(UsageError):
    code = "E-CONFIG"


class DataError(SwinFIRError):
    code = "E-DATA"
    exit_code = 2


class CheckpointError(DataError):
    code = "E-CKPT"


class ShapeError(SwinFIRError, ValueError):
    code = "E-SHAPE"
    exit_code = 2


class NumericError(SwinFIRError, FloatingPointError):
    code = "E-NUMERIC"
    exit_code = 3
