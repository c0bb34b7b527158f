"""Pairwise-relative polyline transformer for multi-agent motion prediction, on numpy."""
from .config import TOPOLOGIES, ModelConfig
from .geometry import Pose2, knn_indices, relative_pose, wrap_angle
from .model import HPTR, ModelOutput, PredictionSet, forward_flops, global_predictions
from .runtime import MetricReport, Session, evaluate, nms_confidences, session_init, session_step, softmax_temperature
from .scenario import Scenario, SynthConfig, generate_synthetic, load_scenario, save_scenario
from .tensor import Tensor, finite_diff_check, no_grad
from .training import AdamW, toy_train, total_loss
from .weights import load_weights, save_weights

__all__ = [
    "TOPOLOGIES", "ModelConfig", "Pose2", "knn_indices", "relative_pose", "wrap_angle",
    "HPTR", "ModelOutput", "PredictionSet", "forward_flops", "global_predictions",
    "MetricReport", "Session", "evaluate", "nms_confidences", "session_init", "session_step",
    "softmax_temperature", "Scenario", "SynthConfig", "generate_synthetic", "load_scenario",
    "save_scenario", "Tensor", "finite_diff_check", "no_grad", "AdamW", "toy_train", "total_loss",
    "load_weights", "save_weights",
]
__version__ = "0.1.0"
