"""slimvit: a width-slimmable Vision Transformer engine.

One full-width parameter store; subnets at any configured width ratio are
sliced views of it, trained jointly (sandwich activation, band-limited
intermediate sampling, chained distillation) and evaluated or exported
independently.
"""

from .slicing import AxisRole, RatioGrid, SliceMode, ValidationError, as_ratio
from .model import Batch, ModelConfig, ParamStore, SubnetOutput, forward, init_params
from .coordination import LossBundle, StableSampler, Teacher, TrainConfig, train_step

__all__ = [
    "AxisRole",
    "Batch",
    "LossBundle",
    "ModelConfig",
    "ParamStore",
    "RatioGrid",
    "SliceMode",
    "StableSampler",
    "SubnetOutput",
    "Teacher",
    "TrainConfig",
    "ValidationError",
    "as_ratio",
    "forward",
    "init_params",
    "train_step",
]
