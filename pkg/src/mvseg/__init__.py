"""Multi-view guided, detail-enhanced class-agnostic segmentation."""

from .config import ConfigError, LossConfig, ModelConfig, TrainConfig, load_config, toy_config
from .model import MultiViewSegmenter, SegmentationOutput
from .multiview import make_multiview, merge_locals, pack_views, scatter_unified, split_views

__all__ = [
    "ConfigError",
    "LossConfig",
    "ModelConfig",
    "MultiViewSegmenter",
    "SegmentationOutput",
    "TrainConfig",
    "load_config",
    "make_multiview",
    "merge_locals",
    "pack_views",
    "scatter_unified",
    "split_views",
    "toy_config",
]

__version__ = "0.1.0"
