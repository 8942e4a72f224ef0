"""Triplet -> disparity assembly: fixed features, cost volumes, alignment, network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .costvol import align_lm_cost, build_cost
from .features import extract_features
from .geometry import Calibration, DisparityMap, Triplet
from .model import ParameterSet, forward_disparity, init_params

ERROR_FULL_SCALE = 5.0


def binocular_mode(triplet: Triplet) -> Triplet:
    """Reuse the right view as the middle one; the narrow branch then has ratio 1."""
    b = triplet.calib.b_lr
    calib = Calibration(b, b, triplet.calib.focal_px)
    return Triplet(triplet.left, triplet.right, triplet.right, calib, triplet.gt,
                   triplet.occlusion_lr, triplet.occlusion_lr)


@dataclass(frozen=True)
class Sample:
    """Everything the trainable graph consumes for one triplet (features are fixed)."""

    lm: np.ndarray  # aligned [G, D, h, w]
    lr: np.ndarray
    left: np.ndarray  # [C, H, W]
    middle: np.ndarray
    right: np.ndarray
    r: float
    gt: np.ndarray | None = None  # [H, W] LR pixels
    gt_valid: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[1:]


def prepare_sample(triplet: Triplet, cfg: PipelineConfig, dtype=np.float64) -> Sample:
    if cfg.mode == "binocular":
        triplet = binocular_mode(triplet)
    fl, fm, fr = (extract_features(im, cfg.feat) for im in (triplet.left, triplet.middle, triplet.right))
    lr = build_cost(fl, fr, cfg.levels, "LR")
    lm = align_lm_cost(build_cost(fl, fm, cfg.levels, "LM"), triplet.calib.r)
    chw = [np.moveaxis(im.data, 2, 0).astype(dtype) for im in (triplet.left, triplet.middle, triplet.right)]
    gt = valid = None
    if triplet.gt is not None:
        gt, valid = triplet.gt.values.astype(dtype), triplet.gt.valid.copy()
    return Sample(lm.data.astype(dtype), lr.data.astype(dtype), *chw, triplet.calib.r, gt, valid)


def stack(samples: list[Sample], attr: str) -> np.ndarray:
    return np.stack([getattr(s, attr) for s in samples])


def predict(params: ParameterSet, samples: list[Sample], cfg: PipelineConfig) -> np.ndarray:
    """Inference-statistics disparity [N, H, W] in full-resolution LR pixels."""
    shapes = {s.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"batch mixes image shapes {sorted(shapes)}")
    _, d = forward_disparity(params, stack(samples, "lm"), stack(samples, "lr"), shapes.pop(), cfg)
    return d.value


def estimate(triplet: Triplet, cfg: PipelineConfig = PipelineConfig(),
             params: ParameterSet | None = None) -> DisparityMap:
    params = params if params is not None else init_params(cfg)
    d = predict(params, [prepare_sample(triplet, cfg)], cfg)[0]
    return DisparityMap(d.astype(np.float32), np.ones(d.shape, bool))


def error_map(gt: DisparityMap, est: DisparityMap) -> np.ndarray:
    """Absolute error scaled to [0, 1] with 5 px full scale; invalid truth renders black."""
    err = np.abs(gt.values.astype(np.float64) - est.values)
    return np.where(gt.valid, np.clip(err / ERROR_FULL_SCALE, 0, 1), 0).astype(np.float32)
