"""SwinFIR super-resolution on a from-scratch numpy autodiff core."""
from .checkpoint import Checkpoint
from .config import RunConfig, load_run_config
from .ensemble import feature_ensemble, multi_model_ensemble, self_ensemble
from .errors import (CheckpointError, ConfigError, DataError, NumericError, ShapeError, SwinFIRError,
                     UsageError)
from .model import ModelConfig, SwinFIR, build, count_params, forward
from .tensor import Tensor, backward, finite_diff_grad

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CheckpointError", "ConfigError", "DataError", "ModelConfig", "NumericError", "RunConfig",
    "ShapeError", "SwinFIR", "SwinFIRError", "Tensor", "UsageError", "backward", "build", "count_params",
    "feature_ensemble", "finite_diff_grad", "forward", "load_run_config", "multi_model_ensemble",
    "self_ensemble",
]
