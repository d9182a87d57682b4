from .functional import (
    PredictionPair,
    RunningStats,
    batchnorm1d,
    concat,
    conv1d,
    flatten,
    linear,
    mse_loss,
    pool1d,
    relu,
    split,
)
from .gradcheck import GradCheckResult, check_function, grad_check
from .nn import (
    AvgPool1d,
    BatchNorm1d,
    Conv1d,
    Flatten,
    GlobalAvgPool1d,
    Linear,
    MaxPool1d,
    Module,
    Parameter,
    ReLU,
    Sequential,
    param_count,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "AvgPool1d", "BatchNorm1d", "Conv1d", "Flatten", "GlobalAvgPool1d",
    "GradCheckResult", "Linear", "MaxPool1d", "Module", "Parameter", "PredictionPair", "ReLU",
    "RunningStats", "Sequential", "Tensor", "adam_step", "batchnorm1d", "check_function", "concat",
    "conv1d", "flatten", "grad_check", "linear", "mse_loss", "no_grad", "param_count", "pool1d",
    "relu", "split",
]
