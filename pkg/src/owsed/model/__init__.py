from .backbone import backbone_forward, build_backbone
from .deform import DenseAttention, TemporalDeformableAttention, interpolate_1d
from .detector import OpenWorldDetector, load_checkpoint, save_checkpoint
from .disentangle import DisentangleBlock
from .eventness import GaussianEventness
from .heads import EventPrediction, final_scores, predictions_from_outputs
from .position import sinusoidal_pos_encoding, sinusoidal_time_encoding

__all__ = [
    "backbone_forward", "build_backbone",
    "DenseAttention", "TemporalDeformableAttention", "interpolate_1d",
    "OpenWorldDetector", "load_checkpoint", "save_checkpoint",
    "DisentangleBlock", "GaussianEventness",
    "EventPrediction", "final_scores", "predictions_from_outputs",
    "sinusoidal_pos_encoding", "sinusoidal_time_encoding",
]
