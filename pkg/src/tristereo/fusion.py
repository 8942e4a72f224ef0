"""Merging the aligned narrow-baseline stream with the wide-baseline stream.

Fused volumes are [N, G, D, H, W] engine arrays; :func:`fuse` is the
single-sample wrapper over :class:`CostVolume`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Var, as_var, record
from .costvol import CostVolume
from .fileio import FormatError, _atomic_write
from .layers import batch_norm, depthwise_conv3d

METHODS = ("add", "avg", "cat", "max", "top", "ga")
LEVELS = ("cost", "pre_hg", "hg")
MAGIC_GA = 0x54534741  # "TSGA"


@dataclass(frozen=True)
class FusionConfig:
    level: str = "pre_hg"
    method: str = "ga"

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown fusion level {self.level!r}; choose from {LEVELS}")
        if self.method not in METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}; choose from {METHODS}")
        if self.method == "cat" and self.level == "hg":
            raise ValueError("cat doubles the groups; the disparity regression after hg needs one")

    @property
    def name(self) -> str:
        return f"{self.level}_{self.method}"


@dataclass
class GABranch:
    kernel: np.ndarray  # [G, 3, 3, 3]
    gamma: np.ndarray  # [G]
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def identity(cls, groups: int, dtype=np.float32) -> "GABranch":
        k = np.zeros((groups, 3, 3, 3), dtype=dtype)
        k[:, 1, 1, 1] = 1
        return cls(k, np.ones(groups, dtype), np.zeros(groups, dtype),
                   np.zeros(groups, dtype), np.ones(groups, dtype))


@dataclass
class GAParams:
    lm: GABranch
    lr: GABranch

    @classmethod
    def identity(cls, groups: int, dtype=np.float32) -> "GAParams":
        return cls(GABranch.identity(groups, dtype), GABranch.identity(groups, dtype))

    @classmethod
    def init(cls, groups: int, rng: np.random.Generator, jitter: float = 0.05) -> "GAParams":
        p = cls.identity(groups)
        for br in (p.lm, p.lr):
            br.kernel += rng.normal(0, jitter, br.kernel.shape).astype(np.float32)
        return p

    @property
    def groups(self) -> int:
        return self.lm.kernel.shape[0]


def guided_branch(x, br: GABranch, training: bool = False, stats: list | None = None) -> Var:
    """gamma * (depthwise_conv(x) - mean) / sqrt(var + eps) + beta."""
    y = depthwise_conv3d(x, br.kernel)
    return batch_norm(y, br.gamma, br.beta, br.running_mean, br.running_var, training, stats)


def top_select(a, b) -> Var:
    """Per voxel, the G largest of the 2G stacked group values, in descending order.

    Ties keep the lower stacked index, so ``a`` wins over ``b``.
    """
    a, b = as_var(a), as_var(b)
    stacked = np.concatenate([a.value, b.value], axis=1)
    g = a.shape[1]
    order = np.argsort(-stacked, axis=1, kind="stable")[:, :g]
    out = np.take_along_axis(stacked, order, axis=1)

    def vjp(grad):
        full = np.zeros_like(stacked)
        np.put_along_axis(full, order, grad, axis=1)
        return full[:, :g], full[:, g:]

    return record(out, (a, b), vjp, "top_select")


def fuse_streams(a, b, method: str, ga: GAParams | None = None, training: bool = False,
                 stats: list | None = None) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ValueError(f"fusion inputs differ in shape: {a.shape} vs {b.shape}")
    if method == "add":
        return a + b
    if method == "avg":
        return (a + b) * 0.5
    if method == "max":
        return ag.maximum(a, b)
    if method == "cat":
        return ag.concat([a, b], axis=1)
    if method == "top":
        return top_select(a, b)
    if method == "ga":
        if ga is None:
            raise ValueError("ga fusion needs GAParams")
        return guided_branch(a, ga.lm, training, stats) + guided_branch(b, ga.lr, training, stats)
    raise ValueError(f"unknown fusion method {method!r}")


def fuse(a: CostVolume, b: CostVolume, cfg: FusionConfig, params: GAParams | None = None) -> CostVolume:
    """Fuse the aligned LM volume ``a`` with the LR volume ``b`` (inference statistics)."""
    if not (a.on_lr_axis and b.on_lr_axis):
        raise ValueError("both volumes must be on the LR disparity axis; align the LM volume first")
    if a.data.shape != b.data.shape:
        raise ValueError(f"fusion inputs differ in shape: {a.data.shape} vs {b.data.shape}")
    out = fuse_streams(a.data[None], b.data[None], cfg.method, params)
    return CostVolume(out.value[0].astype(np.float32), "fused")


def dump_ga_params(params: GAParams, path) -> None:
    """Per branch: int32 header (magic, branch index, G) then float32 kernel, gamma, beta, mean, var."""
    chunks = []
    for idx, br in enumerate((params.lm, params.lr)):
        chunks.append(np.array([MAGIC_GA, idx, params.groups], dtype="<i4").tobytes())
        for arr in (br.kernel, br.gamma, br.beta, br.running_mean, br.running_var):
            chunks.append(np.asarray(arr, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(chunks))


def load_ga_params(path) -> GAParams:
    buf = Path(path).read_bytes()
    pos, branches = 0, []
    for idx in range(2):
        magic, branch, g = np.frombuffer(buf, dtype="<i4", count=3, offset=pos)
        if magic != MAGIC_GA or branch != idx:
            raise FormatError(f"{path}: bad GA record {idx}")
        pos += 12
        arrays = []
        for shape in ((g, 3, 3, 3), (g,), (g,), (g,), (g,)):
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).copy())
            pos += 4 * n
        branches.append(GABranch(*arrays))
    return GAParams(*branches)
