"""3D convolution stack over cost volumes and soft-argmin disparity regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Var, as_var, record
from .costvol import CostVolume
from .geometry import DisparityMap
from .layers import batch_norm, conv3d

LEAKY_SLOPE = 0.01


@dataclass
class ConvLayer:
    weight: np.ndarray  # [Cout, Cin, 3, 3, 3]
    bias: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    norm: bool = True
    act: bool = True

    @property
    def channels_in(self) -> int:
        return self.weight.shape[1]

    @property
    def channels_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def from_weight(cls, weight: np.ndarray, bias=None, norm: bool = True, act: bool = True) -> "ConvLayer":
        weight = np.asarray(weight, dtype=np.float32)
        c = weight.shape[0]
        bias = np.zeros(c, np.float32) if bias is None else np.asarray(bias, np.float32)
        return cls(weight, bias, np.ones(c, np.float32), np.zeros(c, np.float32),
                   np.zeros(c, np.float32), np.ones(c, np.float32), norm, act)


@dataclass
class ConvStackParams:
    layers: list[ConvLayer] = field(default_factory=list)

    @property
    def channels_in(self) -> int:
        return self.layers[0].channels_in

    @property
    def channels_out(self) -> int:
        return self.layers[-1].channels_out

    @classmethod
    def init(cls, widths: list[int], rng: np.random.Generator, final_act: bool = False,
             final_scale: float = 1.0, jitter: float = 0.0) -> "ConvStackParams":
        """Matching-prior initialization with optional seeded jitter.

        Each layer starts as a centre-tap map that averages evenly spaced
        input channels into each output (so the untrained stack already
        forwards the correlation evidence), with He-scaled noise added to break
        symmetry.  Every layer but the last is normalized and activated unless
        ``final_act`` is set, in which case all layers are.
        """
        layers = []
        n = len(widths) - 1
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == n - 1
            w = np.zeros((cout, cin, 3, 3, 3))
            for o in range(cout):
                src = [c for c in range(cin) if c * cout // cin == o] or [o * cin // cout]
                w[o, src, 1, 1, 1] = 1.0 / len(src)
            w += rng.normal(0, jitter * np.sqrt(2.0 / (27 * cin)), w.shape)
            if last and not final_act:
                w *= final_scale
            layers.append(ConvLayer.from_weight(w, norm=not last or final_act,
                                                act=not last or final_act))
        return cls(layers)


def conv_stack_forward(x, params: ConvStackParams, training: bool = False,
                       stats: list | None = None) -> Var:
    """x: [N, C, D, H, W] -> [N, C_out, D, H, W]."""
    x = as_var(x)
    if x.shape[1] != params.channels_in:
        raise ValueError(f"stack expects {params.channels_in} groups, volume has {x.shape[1]}")
    for layer in params.layers:
        x = conv3d(x, layer.weight, layer.bias)
        if layer.norm:
            x = batch_norm(x, layer.gamma, layer.beta, layer.running_mean, layer.running_var,
                           training, stats)
        if layer.act:
            x = ag.leaky_relu(x, LEAKY_SLOPE)
    return x


def conv_stack(v: CostVolume, params: ConvStackParams) -> CostVolume:
    out = conv_stack_forward(v.data[None], params).value[0]
    return CostVolume(out.astype(np.float32), "fused" if v.tag == "fused" else v.tag, v.aligned)


def softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    z = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def soft_argmin_forward(scores) -> Var:
    """scores [N, D, H, W] -> sum_k k * softmax_k(scores)  as [N, H, W]."""
    scores = as_var(scores)
    p = softmax(scores.value, axis=1)
    k = np.arange(scores.shape[1], dtype=scores.dtype)[None, :, None, None]
    d = (p * k).sum(axis=1)
    return record(d, (scores,), lambda g: (p * (k - d[:, None]) * g[:, None],), "soft_argmin")


def probability_volume(scores: CostVolume) -> np.ndarray:
    if scores.groups != 1:
        raise ValueError("soft argmin needs a single-group score volume")
    return softmax(scores.data[0].astype(np.float64), axis=0)


def soft_argmin(scores: CostVolume) -> DisparityMap:
    """Quarter-resolution disparity in quarter-resolution LR units."""
    if scores.groups != 1:
        raise ValueError("soft argmin needs a single-group score volume")
    if not np.all(np.isfinite(scores.data)):
        raise ValueError("scores must be finite")
    d = soft_argmin_forward(scores.data[0][None]).value[0]
    return DisparityMap(d, np.ones(d.shape, bool))


def interp_matrix(n_out: int, n_in: int, factor: int) -> np.ndarray:
    """Bilinear weights (half-pixel centres, edge clamped) mapping n_in samples to n_out."""
    src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    A = np.zeros((n_out, n_in))
    np.add.at(A, (np.arange(n_out), i0), 1 - w1)
    np.add.at(A, (np.arange(n_out), i1), w1)
    return A


def upsample_forward(dq, out_shape: tuple[int, int], factor: int = 4) -> Var:
    """[N, h, w] quarter disparities -> [N, H, W] full-resolution pixels."""
    dq = as_var(dq)
    _, h, w = dq.shape
    A = interp_matrix(out_shape[0], h, factor).astype(dq.dtype)
    B = interp_matrix(out_shape[1], w, factor).astype(dq.dtype)
    out = factor * (A @ dq.value @ B.T)
    return record(out, (dq,), lambda g: (factor * (A.T @ g @ B),), "upsample")


def upsample_disparity(dq: DisparityMap, factor: int = 4,
                       out_shape: tuple[int, int] | None = None) -> DisparityMap:
    if factor != 4:
        raise ValueError("only 4x upsampling is supported")
    h, w = dq.shape
    out_shape = out_shape or (h * factor, w * factor)
    vals = np.where(dq.valid, dq.values, 0).astype(np.float64)
    out = upsample_forward(vals[None], out_shape, factor).value[0]
    A = interp_matrix(out_shape[0], h, factor) > 0
    B = interp_matrix(out_shape[1], w, factor) > 0
    bad = (~dq.valid).astype(float)
    touched = (A.astype(float) @ bad @ B.T.astype(float)) > 0
    return DisparityMap(out.astype(np.float32), ~touched)
