from .layers import (BatchNorm, Conv2D, Dense, Flatten, Layer, MaxPool2D, NonFiniteError, ReLU, Sequential,
                     ShapeError, set_debug)
from .losses import sigmoid_bce, softmax_ce
from .optim import Adam, AdamState, LrSchedule, PhasedSchedule, adam_step, lr_at
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Adam", "AdamState", "BatchNorm", "Conv2D", "Dense", "Flatten", "GradCheckReport", "Layer", "LrSchedule",
    "MaxPool2D", "NonFiniteError", "PhasedSchedule", "ReLU", "Sequential", "ShapeError", "adam_step", "grad_check",
    "lr_at", "set_debug", "sigmoid_bce", "softmax_ce",
]
