"""Trinocular multi-baseline disparity estimation at desk scale."""

from .config import PipelineConfig, TrainConfig
from .costvol import CostVolume, align_lm_cost, build_cost
from .features import FeatureConfig, FeatureMap, extract_features
from .fusion import FusionConfig, GAParams, fuse
from .geometry import Calibration, DisparityMap, Image, SceneSpec, Triplet, generate_triplet
from .metrics import MetricsReport, evaluate
from .pipeline import binocular_mode, estimate

__all__ = [
    "Calibration", "CostVolume", "DisparityMap", "FeatureConfig", "FeatureMap", "FusionConfig",
    "GAParams", "Image", "MetricsReport", "PipelineConfig", "SceneSpec", "TrainConfig", "Triplet",
    "align_lm_cost", "binocular_mode", "build_cost", "estimate", "evaluate", "extract_features",
    "fuse", "generate_triplet",
]
