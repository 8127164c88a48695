"""Inhibited softmax uncertainty head and an OOD / wrong-prediction benchmark harness."""

from .heads import (
    HeadOutput,
    InhibitedSoftmaxHead,
    LossConfig,
    SoftmaxHead,
    certainty_factor,
    is_forward,
    softmax_forward,
)
from .layers import ActivationKind
from .network import NetworkSpec, TrainConfig, build, fit, forward, predict, train
from .numeric import RngStream

__version__ = "0.1.0"
