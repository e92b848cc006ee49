from .params import (
    GradientRecord,
    ParameterStore,
    load_checkpoint,
    save_checkpoint,
    sgd_update,
)
from .fdcheck import finite_difference_check

__all__ = [
    "GradientRecord",
    "ParameterStore",
    "finite_difference_check",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_update",
]
