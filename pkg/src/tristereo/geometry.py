"""Trinocular rig geometry, core data types and the random-dot scene generator.

Disparities are stored in wide-baseline (left-right) pixel units.  A left
pixel ``x`` with disparity ``d`` matches the right image at ``x - d`` and the
middle image at ``x - d / r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Calibration:
    b_lm: float = 0.193
    b_lr: float = 0.386
    focal_px: float | None = None

    def __post_init__(self):
        if not (self.b_lm > 0 and self.b_lr >= self.b_lm):
            raise ValueError(f"need b_lr >= b_lm > 0, got b_lm={self.b_lm}, b_lr={self.b_lr}")

    @property
    def r(self) -> float:
        return self.b_lr / self.b_lm

    def depth(self, disparity_lr: np.ndarray) -> np.ndarray:
        if self.focal_px is None:
            raise ValueError("focal_px is required for depth conversion")
        with np.errstate(divide="ignore"):
            return self.focal_px * self.b_lr / disparity_lr


@dataclass(frozen=True)
class Image:
    data: np.ndarray  # [H, W, C] float32 in [0, 1]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0) < 0 or data.max(initial=0) > 1:
            raise ValueError("image values must be finite and within [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def gray(self) -> np.ndarray:
        return self.data.mean(axis=2)


@dataclass(frozen=True)
class DisparityMap:
    values: np.ndarray  # [H, W] float32
    valid: np.ndarray  # [H, W] bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or valid.shape != values.shape:
            raise ValueError(f"values {values.shape} and mask {valid.shape} must be equal 2-D shapes")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, values: np.ndarray) -> "DisparityMap":
        values = np.asarray(values, dtype=np.float32)
        return cls(values, np.isfinite(values) & (values >= 0))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Triplet:
    left: Image
    middle: Image
    right: Image
    calib: Calibration = field(default_factory=Calibration)
    gt: DisparityMap | None = None
    occlusion_lm: np.ndarray | None = None
    occlusion_lr: np.ndarray | None = None

    def __post_init__(self):
        shapes = {im.data.shape for im in (self.left, self.middle, self.right)}
        if len(shapes) != 1:
            raise ValueError(f"views disagree in shape: {sorted(shapes)}")
        if self.gt is not None and self.gt.shape != self.left.data.shape[:2]:
            raise ValueError("ground truth shape does not match the views")

    def without_gt(self) -> "Triplet":
        return Triplet(self.left, self.middle, self.right, self.calib)


@dataclass(frozen=True)
class Layer:
    """Fronto-parallel plane covering the left-image box [x0, x1) x [y0, y1)."""

    disparity: float
    x0: int = 0
    x1: int = 1 << 30
    y0: int = 0
    y1: int = 1 << 30

    def covers(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return (xs >= self.x0) & (xs < self.x1) & (ys >= self.y0) & (ys < self.y1)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 128
    layers: int = 3
    d_max: float = 24.0
    d_min: float = 2.0
    disparity_step: float = 2.0
    texture_density: float = 0.5
    dot_size: float = 3.0
    noise_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    b_lm: float = 0.193
    b_lr: float = 0.386

    def __post_init__(self):
        sigma = self.noise_sigma
        if np.isscalar(sigma):
            sigma = (float(sigma),) * 3
        object.__setattr__(self, "noise_sigma", tuple(float(s) for s in sigma))
        if len(self.noise_sigma) != 3:
            raise ValueError("noise_sigma needs one value per view")


def quantize8(values: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid exactly as an 8-bit PGM load would produce it."""
    return np.round(np.asarray(values, dtype=np.float64) * 255).astype(np.float32) / np.float32(255)


def _sample_texture(rng: np.random.Generator, height: int, width: int, density: float,
                    dot_size: float) -> np.ndarray:
    """Random dots on a coarse lattice of pitch ``dot_size``, linearly upsampled."""
    ch = int(np.ceil(height / dot_size)) + 2
    cw = int(np.ceil(width / dot_size)) + 2
    base = rng.uniform(0.2, 0.8)
    dots = rng.random((ch, cw)) < density
    coarse = np.where(dots, rng.random((ch, cw)), base)
    ys = np.arange(height) / dot_size
    xs = np.arange(width) / dot_size
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    rows = coarse[y0] * (1 - fy) + coarse[y0 + 1] * fy
    tex = rows[:, x0] * (1 - fx) + rows[:, x0 + 1] * fx
    return quantize8(tex)


def _sample_at(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Linear interpolation of a texture along rows at real-valued columns."""
    x0 = np.floor(xs).astype(np.int64)
    frac = (xs - x0).astype(np.float32)
    a = tex[ys, x0]
    exact = frac == 0
    b = tex[ys, np.where(exact, x0, x0 + 1)]
    return np.where(exact, a, a * (1 - frac) + b * frac)


def render_view(layers: list[Layer], textures: list[np.ndarray], height: int, width: int,
                shift_scale: float) -> np.ndarray:
    """Painter's algorithm: layer k is seen at target pixel u when u + d_k*s is inside it."""
    ys, us = np.mgrid[0:height, 0:width]
    out = np.zeros((height, width), dtype=np.float32)
    for layer, tex in zip(layers, textures):
        src = us + layer.disparity * shift_scale
        cover = layer.covers(src, ys)
        vals = _sample_at(tex, ys[cover], src[cover])
        out[cover] = vals
    return out


def _front_layer(layers: list[Layer], height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    front = np.full((height, width), -1, dtype=np.int64)
    for k, layer in enumerate(layers):
        front[layer.covers(xs, ys)] = k
    return front


def occlusion_mask(layers: list[Layer], height: int, width: int, shift_scale: float) -> np.ndarray:
    """Left pixels whose match in the target view is hidden by a nearer layer."""
    ys, xs = np.mgrid[0:height, 0:width]
    front = _front_layer(layers, height, width)
    disp = np.array([l.disparity for l in layers])[np.maximum(front, 0)]
    u = xs - disp * shift_scale
    occ = np.zeros((height, width), dtype=bool)
    for j, layer in enumerate(layers):
        nearer = front < j
        occ |= nearer & (front >= 0) & layer.covers(u + layer.disparity * shift_scale, ys)
    return occ


def render_triplet(layers: list[Layer], textures: list[np.ndarray], height: int, width: int,
                   calib: Calibration = Calibration(),
                   noise_sigma=(0.0, 0.0, 0.0), rng: np.random.Generator | None = None) -> Triplet:
    """Render left/middle/right views of layers ordered back to front.

    Each texture is indexed by left-image coordinates and must extend at least
    ``max disparity + 1`` columns beyond the image width.
    """
    disps = [l.disparity for l in layers]
    if any(b <= a for a, b in zip(disps, disps[1:])):
        raise ValueError("layer disparities must strictly increase from back to front")
    r = calib.r
    views = [render_view(layers, textures, height, width, s) for s in (0.0, 1.0 / r, 1.0)]
    if any(s > 0 for s in noise_sigma):
        rng = rng if rng is not None else np.random.default_rng(0)
        views = [np.clip(v + rng.normal(0.0, s, v.shape).astype(np.float32), 0, 1) if s > 0 else v
                 for v, s in zip(views, noise_sigma)]
    front = _front_layer(layers, height, width)
    gt_vals = np.where(front >= 0, np.array(disps, dtype=np.float32)[np.maximum(front, 0)], 0)
    gt = DisparityMap(gt_vals, front >= 0)
    return Triplet(Image(views[0]), Image(views[1]), Image(views[2]), calib, gt,
                   occlusion_mask(layers, height, width, 1.0 / r),
                   occlusion_mask(layers, height, width, 1.0))


def sample_layers(rng: np.random.Generator, spec: SceneSpec) -> list[Layer]:
    grid = np.arange(spec.d_min, spec.d_max, spec.disparity_step)
    grid = grid[grid < spec.d_max]
    if len(grid) < spec.layers:
        raise ValueError(f"only {len(grid)} disparity levels available for {spec.layers} layers")
    disps = np.sort(rng.choice(grid, size=spec.layers, replace=False))
    layers = [Layer(float(disps[0]))]
    h, w = spec.height, spec.width
    for d in disps[1:]:
        bw = int(rng.integers(max(2, w // 8), max(3, w // 3)))
        bh = int(rng.integers(max(2, h // 4), max(3, h // 2)))
        x0 = int(rng.integers(0, w - bw + 1))
        y0 = int(rng.integers(0, h - bh + 1))
        layers.append(Layer(float(d), x0, x0 + bw, y0, y0 + bh))
    return layers


def generate_triplet(seed: int, spec: SceneSpec = SceneSpec()) -> Triplet:
    """Random-dot layered scene with exact ground truth and occlusion masks."""
    if spec.layers < 1:
        raise ValueError("scene needs at least one layer")
    if spec.d_max >= spec.width / 4:
        raise ValueError(f"d_max={spec.d_max} must stay below width/4={spec.width / 4}")
    if spec.d_min < 0 or spec.d_min >= spec.d_max:
        raise ValueError("need 0 <= d_min < d_max")
    rng = np.random.default_rng(seed)
    layers = sample_layers(rng, spec)
    tex_w = spec.width + int(math.ceil(spec.d_max)) + 2
    textures = [_sample_texture(rng, spec.height, tex_w, spec.texture_density, spec.dot_size) for _ in layers]
    calib = Calibration(spec.b_lm, spec.b_lr)
    return render_triplet(layers, textures, spec.height, spec.width, calib, spec.noise_sigma, rng)
