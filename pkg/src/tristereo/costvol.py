"""Group-wise correlation cost volumes and narrow-to-wide disparity alignment."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureMap
from .fileio import FormatError, MAGIC_VOLUME, _atomic_write
from .spline import fit_natural_spline, evaluate

TAGS = ("LM", "LR", "fused")


@dataclass(frozen=True)
class CostVolume:
    data: np.ndarray  # [G, D, Hq, Wq] float32
    tag: str
    aligned: bool = False  # LM volume already resampled onto the LR disparity axis

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown baseline tag {self.tag!r}")
        if self.data.ndim != 4:
            raise ValueError(f"cost volume must be 4-D, got shape {self.data.shape}")
        if self.data.shape[1] < 2:
            raise ValueError("need at least two disparity levels")
        if not np.isfinite(self.data).all():
            raise ValueError("cost volume holds non-finite entries")

    @property
    def groups(self) -> int:
        return self.data.shape[0]

    @property
    def levels(self) -> int:
        return self.data.shape[1]

    @property
    def on_lr_axis(self) -> bool:
        return self.tag != "LM" or self.aligned


def build_cost(f_ref: FeatureMap, f_tgt: FeatureMap, levels: int, tag: str = "LR") -> CostVolume:
    """cost[g, d, y, x] = (G/C) <f_ref_g(y, x), f_tgt_g(y, x - d)>, zero where x - d < 0."""
    if f_ref.data.shape != f_tgt.data.shape or f_ref.groups != f_tgt.groups:
        raise ValueError(f"feature maps differ: {f_ref.data.shape} vs {f_tgt.data.shape}")
    if not 2 <= levels <= f_ref.width:
        raise ValueError(f"levels={levels} must lie in [2, {f_ref.width}]")
    a, b = f_ref.grouped(), f_tgt.grouped()
    g, cpg, h, w = a.shape
    cost = np.zeros((g, levels, h, w), dtype=np.float32)
    for d in range(levels):
        cost[:, d, :, d:] = (a[:, :, :, d:] * b[:, :, :, :w - d]).mean(axis=1)
    return CostVolume(cost, tag)


def align_lm_cost(cost_lm: CostVolume, r: float) -> CostVolume:
    """Resample the narrow-baseline volume at d / r for every wide-baseline level d."""
    if cost_lm.tag != "LM" or cost_lm.aligned:
        raise ValueError("expected an unaligned LM cost volume")
    if r < 1:
        raise ValueError(f"baseline ratio must be >= 1, got {r}")
    if r == 1:
        return CostVolume(cost_lm.data.copy(), "LM", aligned=True)
    fibers = np.moveaxis(cost_lm.data, 1, -1)
    coef = fit_natural_spline(fibers)
    query = np.arange(cost_lm.levels) / r
    out = np.moveaxis(evaluate(coef, query), -1, 1)
    return CostVolume(out.astype(np.float32), "LM", aligned=True)


def dump_volume(vol: CostVolume, path) -> None:
    """Header: magic, G, D, H, W, tag index, dtype code (1 = float32), aligned flag."""
    g, d, h, w = vol.data.shape
    hdr = np.array([MAGIC_VOLUME, g, d, h, w, TAGS.index(vol.tag), 1, int(vol.aligned)], dtype="<i4")
    _atomic_write(path, hdr.tobytes() + vol.data.astype("<f4").tobytes())


def load_volume(path) -> CostVolume:
    buf = Path(path).read_bytes()
    hdr = np.frombuffer(buf, dtype="<i4", count=8)
    if hdr[0] != MAGIC_VOLUME or hdr[6] != 1:
        raise FormatError(f"{path}: not a float32 cost-volume dump")
    shape = tuple(int(s) for s in hdr[1:5])
    data = np.frombuffer(buf, dtype="<f4", offset=32).reshape(shape).astype(np.float32)
    return CostVolume(data, TAGS[int(hdr[5])], aligned=bool(hdr[7]))
