"""corrtrack: joint multi-object detection and tracking via global
correlation, at desk scale, with a from-scratch autodiff engine."""

from .boxes import BoundingBox, iou
from .network import CorrelationNetwork, NetworkConfig
from .synth import SceneConfig, generate_sequence
from .tracker import PipelineConfig, Tracker, track_video

__all__ = [
    "BoundingBox", "iou",
    "CorrelationNetwork", "NetworkConfig",
    "SceneConfig", "generate_sequence",
    "PipelineConfig", "Tracker", "track_video",
]

__version__ = "0.1.0"
