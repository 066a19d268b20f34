"""Rainbow-IQN numerical core: network, loss, targets, optimizer and checkpoints."""

from .adam import AdamConfig, AdamState, NumericalError, adam_step
from .agent import Batch, IQNAgent, StepInfo
from .checkpoint import CheckpointError, deserialize, serialize
from .loss import PRIORITY_FLOOR, LossConfig, LossResult, build_target, huber, priority_of, quantile_huber_loss
from .network import (
    N_COS,
    Conv2D,
    Dense,
    NetworkSpec,
    QuantileNetwork,
    ShapeError,
    copy_params,
    cosine_features,
    f_noise,
    params_equal,
    sample_taus,
)

__all__ = [
    "AdamConfig", "AdamState", "Batch", "CheckpointError", "Conv2D", "Dense", "IQNAgent", "LossConfig",
    "LossResult", "N_COS", "NetworkSpec", "NumericalError", "PRIORITY_FLOOR", "QuantileNetwork",
    "ShapeError", "StepInfo", "adam_step", "build_target", "copy_params", "cosine_features",
    "deserialize", "f_noise", "huber", "params_equal", "priority_of", "quantile_huber_loss",
    "sample_taus", "serialize",
]
