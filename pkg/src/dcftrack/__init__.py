"""Correlation-filter visual tracking with end-to-end learned features."""

from .cf_layer import CfConfig, cf_backward_x, cf_backward_z, cf_forward, cf_loss, solve_filter
from .evalkit import EvalResult, Sequence, cle, evaluate, iou, load_model, load_sequence, save_model
from .features import NetworkParams, init_network, net_backward, net_forward
from .spectral import fft2, ifft2
from .tracking import HyperParams, TrackerState, tracker_init, tracker_step
from .training import (
    BoundingBox,
    LabelConfig,
    OptimizerConfig,
    TrainSetup,
    crop_patch,
    gaussian_label,
    make_synthetic_dataset,
    sample_pairs,
    sgd_step,
    train,
    train_epoch,
)

__all__ = [
    "BoundingBox", "CfConfig", "EvalResult", "HyperParams", "LabelConfig",
    "NetworkParams", "OptimizerConfig", "Sequence", "TrackerState", "TrainSetup",
    "cf_backward_x", "cf_backward_z", "cf_forward", "cf_loss", "cle", "crop_patch",
    "evaluate", "fft2", "gaussian_label", "ifft2", "init_network", "iou",
    "load_model", "load_sequence", "make_synthetic_dataset", "net_backward",
    "net_forward", "sample_pairs", "save_model", "sgd_step", "solve_filter",
    "tracker_init", "tracker_step", "train", "train_epoch",
]
