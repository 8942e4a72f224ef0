"""Trainable parameter set and the batched fusion/aggregation/regression graph.

Wiring by fusion level (streams are the aligned LM volume and the LR volume):

* ``cost``   fuse the raw volumes, then the pre stack, then the hg stack
* ``pre_hg`` shared pre stack on each stream, fuse, then the hg stack
* ``hg``     shared pre stack, a separate hg stack per stream, fuse the scores

``lm_only`` / ``lr_only`` run pre and hg on one stream without fusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .aggregate import ConvStackParams, conv_stack_forward, soft_argmin_forward, upsample_forward
from .autograd import Var
from .config import PipelineConfig
from .fusion import GAParams, fuse_streams

STACK_ROLES = ("pre", "hg", "hg_lm", "hg_lr")


@dataclass
class ParameterSet:
    stacks: dict[str, ConvStackParams] = field(default_factory=dict)
    ga: GAParams | None = None

    def entries(self):
        """(name, owner, attribute, trainable) in a fixed order."""
        out = []
        if self.ga is not None:
            for bname in ("lm", "lr"):
                br = getattr(self.ga, bname)
                for attr in ("kernel", "gamma", "beta"):
                    out.append((f"ga.{bname}.{attr}", br, attr, True))
                for attr in ("running_mean", "running_var"):
                    out.append((f"ga.{bname}.{attr}", br, attr, False))
        for role in STACK_ROLES:
            if role not in self.stacks:
                continue
            for i, layer in enumerate(self.stacks[role].layers):
                attrs = [("weight", True), ("bias", True)]
                if layer.norm:
                    attrs += [("gamma", True), ("beta", True),
                              ("running_mean", False), ("running_var", False)]
                for attr, trainable in attrs:
                    out.append((f"{role}.{i}.{attr}", layer, attr, trainable))
        return out

    def arrays(self, trainable: bool | None = None) -> dict[str, np.ndarray]:
        return {name: getattr(owner, attr) for name, owner, attr, tr in self.entries()
                if trainable is None or tr == trainable}

    def flat(self) -> np.ndarray:
        arrs = list(self.arrays(trainable=True).values())
        return np.concatenate([a.ravel() for a in arrs]) if arrs else np.zeros(0)

    def load_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for name, owner, attr, tr in self.entries():
            if not tr:
                continue
            old = getattr(owner, attr)
            setattr(owner, attr, np.asarray(vec[pos:pos + old.size], dtype=old.dtype).reshape(old.shape).copy())
            pos += old.size
        if pos != len(vec):
            raise ValueError(f"flat vector has {len(vec)} entries, parameter set needs {pos}")

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, owner, attr, _ in self.entries():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            old = getattr(owner, attr)
            if arrays[name].size != old.size:
                raise ValueError(f"{name}: {arrays[name].size} values, expected {old.size}")
            setattr(owner, attr, np.array(arrays[name], dtype=old.dtype).reshape(old.shape))

    def astype(self, dtype) -> "ParameterSet":
        out = self.copy()
        for _, owner, attr, _ in out.entries():
            setattr(owner, attr, getattr(owner, attr).astype(dtype))
        return out

    def copy(self) -> "ParameterSet":
        stacks = {k: ConvStackParams([replace(l) for l in s.layers]) for k, s in self.stacks.items()}
        ga = GAParams(replace(self.ga.lm), replace(self.ga.lr)) if self.ga else None
        out = ParameterSet(stacks, ga)
        for _, owner, attr, _ in out.entries():
            setattr(owner, attr, getattr(owner, attr).copy())
        return out

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.arrays(trainable=True).values()))


def init_params(cfg: PipelineConfig, seed: int = 0, dtype=np.float64) -> ParameterSet:
    rng = np.random.default_rng(seed)
    g = cfg.feat.groups
    level, method = cfg.fusion.level, cfg.fusion.method
    cat = 2 if (cfg.fused and method == "cat") else 1
    pre_in = g * (cat if level == "cost" else 1)
    pre = [pre_in, *cfg.pre_widths]
    hg_in = cfg.pre_widths[-1] * (cat if level == "pre_hg" else 1)
    hg = [hg_in, *cfg.hg_widths]
    stacks = {"pre": ConvStackParams.init(pre, rng, final_act=True)}
    ga = None
    if cfg.fused and level == "hg":
        stacks["hg_lm"] = ConvStackParams.init(hg, rng, final_scale=cfg.score_scale)
        stacks["hg_lr"] = ConvStackParams.init(hg, rng, final_scale=cfg.score_scale)
    else:
        stacks["hg"] = ConvStackParams.init(hg, rng, final_scale=cfg.score_scale)
    if cfg.fused and method == "ga":
        ga_groups = {"cost": g, "pre_hg": cfg.pre_widths[-1], "hg": 1}[level]
        ga = GAParams.init(ga_groups, rng)
    return ParameterSet(stacks, ga).astype(dtype)


def bind(params: ParameterSet) -> tuple[ParameterSet, list[Var]]:
    """Shallow copy whose trainable arrays are gradient-tracking Vars.

    Normalization buffers are shared with ``params`` so running-statistic
    updates land in the original.
    """
    stacks = {k: ConvStackParams([replace(l) for l in s.layers]) for k, s in params.stacks.items()}
    ga = GAParams(replace(params.ga.lm), replace(params.ga.lr)) if params.ga else None
    bound = ParameterSet(stacks, ga)
    leaves = []
    for name, owner, attr, tr in bound.entries():
        if tr:
            v = Var(getattr(owner, attr), requires_grad=True, name=name)
            setattr(owner, attr, v)
            leaves.append(v)
    return bound, leaves


def forward_scores(params: ParameterSet, lm: np.ndarray, lr: np.ndarray, cfg: PipelineConfig,
                   training: bool = False, stats: list | None = None) -> Var:
    """lm, lr: [N, G, D, h, w] volumes on the LR axis -> scores [N, D, h, w]."""
    if cfg.mode == "lm_only" or cfg.mode == "lr_only":
        x = lm if cfg.mode == "lm_only" else lr
        x = conv_stack_forward(x, params.stacks["pre"], training, stats)
        return conv_stack_forward(x, params.stacks["hg"], training, stats)[:, 0]
    level, method = cfg.fusion.level, cfg.fusion.method

    def merge(a, b):
        return fuse_streams(a, b, method, params.ga, training, stats)

    if level == "cost":
        x = conv_stack_forward(merge(lm, lr), params.stacks["pre"], training, stats)
        return conv_stack_forward(x, params.stacks["hg"], training, stats)[:, 0]
    a = conv_stack_forward(lm, params.stacks["pre"], training, stats)
    b = conv_stack_forward(lr, params.stacks["pre"], training, stats)
    if level == "pre_hg":
        return conv_stack_forward(merge(a, b), params.stacks["hg"], training, stats)[:, 0]
    a = conv_stack_forward(a, params.stacks["hg_lm"], training, stats)
    b = conv_stack_forward(b, params.stacks["hg_lr"], training, stats)
    return merge(a, b)[:, 0]


def forward_disparity(params: ParameterSet, lm, lr, out_shape: tuple[int, int], cfg: PipelineConfig,
                      training: bool = False, stats: list | None = None) -> tuple[Var, Var]:
    """Returns (quarter-resolution disparity [N, h, w], full-resolution pixels [N, H, W])."""
    scores = forward_scores(params, lm, lr, cfg, training, stats)
    dq = soft_argmin_forward(scores)
    return dq, upsample_forward(dq, out_shape, 4)

