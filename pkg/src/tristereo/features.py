"""Fixed quarter-resolution descriptors grouped for group-wise correlation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Image

DESCRIPTORS = ("census", "grad_intensity")


@dataclass(frozen=True)
class FeatureConfig:
    descriptor: str = "census"
    channels: int = 32
    groups: int = 8

    def __post_init__(self):
        if self.descriptor not in DESCRIPTORS:
            raise ValueError(f"unknown descriptor {self.descriptor!r}")
        if self.channels <= 0 or self.groups <= 0 or self.channels % self.groups:
            raise ValueError(f"channels={self.channels} must be a positive multiple of groups={self.groups}")
        if self.descriptor == "grad_intensity" and self.channels % 4:
            raise ValueError("grad_intensity needs channels divisible by 4")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # [C, Hq, Wq] float32
    groups: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def grouped(self) -> np.ndarray:
        c, h, w = self.data.shape
        return self.data.reshape(self.groups, c // self.groups, h, w)


def block_average(gray: np.ndarray, factor: int = 4) -> np.ndarray:
    """Mean over non-overlapping factor x factor blocks; edge blocks average what exists."""
    h, w = gray.shape
    hq, wq = -(-h // factor), -(-w // factor)
    padded = np.zeros((hq * factor, wq * factor), dtype=np.float64)
    count = np.zeros_like(padded)
    padded[:h, :w] = gray
    count[:h, :w] = 1
    sums = padded.reshape(hq, factor, wq, factor).sum(axis=(1, 3))
    counts = count.reshape(hq, factor, wq, factor).sum(axis=(1, 3))
    return sums / counts


@lru_cache(maxsize=None)
def offset_pattern(n: int, include_center: bool = False) -> tuple[tuple[int, int], ...]:
    """First ``n`` window offsets ordered by radius, then angle (deterministic)."""
    radius = 1
    while (2 * radius + 1) ** 2 - (0 if include_center else 1) < n:
        radius += 1
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
            if include_center or (dy, dx) != (0, 0)]
    offs.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, np.arctan2(o[0], o[1])))
    return tuple(offs[:n])


def shifted(q: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """q(y + dy, x + dx) with edge clamping."""
    h, w = q.shape
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return q[np.ix_(ys, xs)]


def local_mean(q: np.ndarray) -> np.ndarray:
    return sum(shifted(q, dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)) / 9.0


def census(q: np.ndarray, n: int) -> np.ndarray:
    """+1 where the neighbour at each offset is brighter than the 3x3 mean at the centre, else -1.

    Referencing the local mean rather than the centre sample keeps signatures of
    unrelated pixels from correlating through the centre's brightness alone.
    """
    ref = local_mean(q)
    return np.stack([np.where(shifted(q, dy, dx) > ref, 1.0, -1.0)
                     for dy, dx in offset_pattern(n)])


def grad_intensity(q: np.ndarray, n: int) -> np.ndarray:
    blur = local_mean(q)
    gx = 0.5 * (shifted(blur, 0, 1) - shifted(blur, 0, -1))
    gy = 0.5 * (shifted(blur, 1, 0) - shifted(blur, -1, 0))
    bases = (blur, gx, gy, np.hypot(gx, gy))
    offs = offset_pattern(n // 4, include_center=True)
    return np.stack([shifted(b, dy, dx) for b in bases for dy, dx in offs])


def normalize_groups(feat: np.ndarray, groups: int) -> np.ndarray:
    """Scale each group sub-vector to norm sqrt(C/G); all-zero groups stay zero."""
    c, h, w = feat.shape
    g = feat.reshape(groups, c // groups, h, w)
    norm = np.sqrt((g * g).sum(axis=1, keepdims=True))
    target = np.sqrt(c / groups)
    scale = np.divide(target, norm, out=np.zeros_like(norm), where=norm > 1e-12)
    return (g * scale).reshape(c, h, w)


def extract_features(img: Image, cfg: FeatureConfig = FeatureConfig()) -> FeatureMap:
    if img.height < 8 or img.width < 8:
        raise ValueError(f"image {img.height}x{img.width} is too small for the descriptor window")
    q = block_average(img.gray().astype(np.float64))
    if cfg.descriptor == "census":
        feat = census(q, cfg.channels)
    else:
        feat = grad_intensity(q, cfg.channels)
    return FeatureMap(normalize_groups(feat, cfg.groups).astype(np.float32), cfg.groups)
