"""Supervised and self-supervised training losses, and the horizontal warp.

Engine-level functions (``*_forward``) take batched arrays: disparities
[N, H, W], images [N, C, H, W].  The plain functions are single-sample
wrappers over the geometry types.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Var, as_var, record
from .geometry import DisparityMap, Image

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
RECON_MODES = ("m", "r", "both")


class EmptySupportError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 1.0
    lambda_p: float = 1.0
    lambda_s: float = 0.01
    delta: float = 0.25
    alpha: float = 0.85
    recon: str = "both"

    def __post_init__(self):
        if min(self.lambda_d, self.lambda_p, self.lambda_s) < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.delta <= 0 or not 0 <= self.alpha <= 1:
            raise ValueError("need delta > 0 and alpha in [0, 1]")
        if self.recon not in RECON_MODES:
            raise ValueError(f"recon must be one of {RECON_MODES}")

    def for_phase(self, phase: str) -> "LossWeights":
        if phase == "supervised":
            return replace(self, lambda_p=0.0)
        if phase == "selfsup":
            return replace(self, lambda_d=0.0)
        raise ValueError(f"unknown phase {phase!r}")


# --------------------------------------------------------------------- Huber


def huber_forward(est, gt: np.ndarray, valid: np.ndarray, delta: float) -> Var:
    est = as_var(est)
    valid = np.asarray(valid, bool)
    if not valid.any():
        raise EmptySupportError("no valid ground-truth pixels")
    e = est.value - np.where(valid, gt, 0).astype(est.dtype)
    ae = np.abs(e)
    quad = ae < delta
    per = np.where(quad, 0.5 * e * e, delta * (ae - 0.5 * delta))
    n = int(valid.sum())
    slope = np.where(quad, e, delta * np.sign(e)) * valid / n
    return record(np.sum(per * valid) / n, (est,), lambda g: (g * slope,), "huber")


def huber_loss(gt: DisparityMap, est: DisparityMap, delta: float = 0.25) -> float:
    if gt.shape != est.shape:
        raise ValueError("disparity maps differ in shape")
    return float(huber_forward(est.values.astype(np.float64)[None], gt.values[None],
                               gt.valid[None], delta).value)


def smooth_l1(e: np.ndarray) -> np.ndarray:
    ae = np.abs(e)
    return np.where(ae < 1, 0.5 * e * e, ae - 0.5)


# ---------------------------------------------------------------------- warp


def warp_forward(target: np.ndarray, disp, scale: float) -> tuple[Var, np.ndarray]:
    """Sample target [N, C, H, W] at (x - scale * disp, y) with linear interpolation.

    Returns the reconstruction and a [N, H, W] mask of in-bounds samples.
    """
    disp = as_var(disp)
    target = np.asarray(target, dtype=disp.dtype)
    n, c, h, w = target.shape
    xs = np.arange(w, dtype=disp.dtype)[None, None, :] - scale * disp.value
    valid = (xs >= 0) & (xs <= w - 1)
    xc = np.clip(xs, 0, w - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(w - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    frac = xc - x0
    idx0 = np.broadcast_to(x0[:, None], (n, c, h, w))
    idx1 = np.broadcast_to(x1[:, None], (n, c, h, w))
    v0 = np.take_along_axis(target, idx0, axis=3)
    v1 = np.take_along_axis(target, idx1, axis=3)
    out = v0 + frac[:, None] * (v1 - v0)
    slope = np.where(valid[:, None], -scale * (v1 - v0), 0)
    return record(out, (disp,), lambda g: ((g * slope).sum(axis=1),), "warp"), valid


def warp(target, dh: DisparityMap, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Single-image warp; ``target`` is an Image or an [H, W(, C)] array."""
    data = target.data if isinstance(target, Image) else np.asarray(target, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if scale <= 0:
        raise ValueError("warp scale must be positive")
    rec, valid = warp_forward(np.moveaxis(data, 2, 0)[None].astype(np.float64),
                              dh.values.astype(np.float64)[None], scale)
    return np.moveaxis(rec.value[0], 0, 2), valid[0] & dh.valid


# ---------------------------------------------------------------------- SSIM


def _reflect_fold(gp: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of 1-pixel reflect padding along ``axis``."""
    g = np.moveaxis(gp, axis, 0)
    core = g[1:-1].copy()
    core[1] += g[0]
    core[-2] += g[-1]
    return np.moveaxis(core, 0, axis)


def box3(x) -> Var:
    """3x3 mean over the last two axes with reflect padding."""
    x = as_var(x)
    h, w = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x.value, pad, mode="reflect")
    out = sum(xp[..., i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0

    def vjp(g):
        gp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gp[..., i:i + h, j:j + w] += g / 9.0
        return (_reflect_fold(_reflect_fold(gp, -2), -1),)

    return record(out, (x,), vjp, "box3")


def ssim_forward(x, y) -> Var:
    """Per-pixel SSIM with a 3x3 uniform window, for images on the [0, 1] range."""
    x, y = as_var(x), as_var(y)
    mu_x, mu_y = box3(x), box3(y)
    sig_x = box3(x * x) - mu_x * mu_x
    sig_y = box3(y * y) - mu_y * mu_y
    sig_xy = box3(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sig_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sig_x + sig_y + SSIM_C2)
    return num / den


def photometric_forward(ref: np.ndarray, rec, mask: np.ndarray, alpha: float) -> Var:
    """ref/rec [N, C, H, W]; mean over masked pixels of the SSIM/L1 mix (channels averaged)."""
    rec = as_var(rec)
    ref = np.asarray(ref, dtype=rec.dtype)
    mask = np.asarray(mask, bool)
    if not mask.any():
        raise EmptySupportError("photometric mask selects no pixels")
    per = 0.0
    if alpha > 0:
        per = alpha * (1 - ssim_forward(ref, rec)) * 0.5
    if alpha < 1:
        per = per + (1 - alpha) * ag.absolute(rec - ref)
    per = ag.mean(per, axis=1)
    return ag.masked_mean(per, mask)


def _as_chw(img) -> np.ndarray:
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    return np.moveaxis(data, 2, 0)[None].astype(np.float64)


def photometric_loss(ref, rec, mask: np.ndarray | None = None, alpha: float = 0.85) -> float:
    a, b = _as_chw(ref), _as_chw(rec)
    if a.shape != b.shape:
        raise ValueError("images differ in shape")
    mask = np.ones(a.shape[2:], bool) if mask is None else np.asarray(mask, bool)
    return float(photometric_forward(a, b, mask[None], alpha).value)


# ---------------------------------------------------------------- smoothness


def smoothness_forward(disp, img: np.ndarray) -> Var:
    """Edge-aware L1 on forward differences, averaged over interior pixels.

    disp [N, H, W]; img [N, C, H, W].  Interior = pixels with both a right and
    a lower neighbour.
    """
    disp = as_var(disp)
    img = np.asarray(img, dtype=disp.dtype)
    dx = disp[:, :-1, 1:] - disp[:, :-1, :-1]
    dy = disp[:, 1:, :-1] - disp[:, :-1, :-1]
    ix = np.abs(img[:, :, :-1, 1:] - img[:, :, :-1, :-1]).mean(axis=1)
    iy = np.abs(img[:, :, 1:, :-1] - img[:, :, :-1, :-1]).mean(axis=1)
    return ag.mean(ag.absolute(dx) * np.exp(-ix) + ag.absolute(dy) * np.exp(-iy))


def smoothness_loss(dh: DisparityMap, ref_img) -> float:
    return float(smoothness_forward(dh.values.astype(np.float64)[None], _as_chw(ref_img)).value)


# --------------------------------------------------------------------- total


def total_loss(components: dict, weights: LossWeights, phase: str | None = None):
    """Weighted sum of the 'd', 'p', 's' components; returns (total, breakdown).

    Components may be floats or engine Vars; missing ones count as zero.  A
    phase forces its coefficient mask before summing.
    """
    w = weights.for_phase(phase) if phase else weights
    if w.lambda_d == 0 and w.lambda_p == 0 and w.lambda_s == 0:
        raise ValueError("degenerate objective: every loss coefficient is zero")
    lam = {"d": w.lambda_d, "p": w.lambda_p, "s": w.lambda_s}
    total = 0.0
    breakdown = {}
    for key, value in components.items():
        if key not in lam:
            raise KeyError(f"unknown loss component {key!r}")
        breakdown[key] = float(value.value if isinstance(value, Var) else value)
        if lam[key] != 0:
            total = total + lam[key] * value
    breakdown.update({f"lambda_{k}": v for k, v in lam.items()})
    return total, breakdown
