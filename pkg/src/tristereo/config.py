"""Dataclass configs and the flat ``key=value`` config format.

A config file holds one ``section.field = value`` pair per line with ``#``
comments.  Sections map onto dataclasses: ``scene`` (SceneSpec), ``feat``
(FeatureConfig), ``fusion`` (FusionConfig), ``loss`` (LossWeights),
``pipeline``, ``metrics`` and ``train``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .features import FeatureConfig
from .fusion import FusionConfig
from .geometry import SceneSpec
from .losses import LossWeights

MODES = ("trinocular", "binocular", "lm_only", "lr_only")


@dataclass(frozen=True)
class PipelineConfig:
    feat: FeatureConfig = field(default_factory=FeatureConfig)
    d_max: int = 48
    fusion: FusionConfig = field(default_factory=FusionConfig)
    mode: str = "trinocular"
    loss: LossWeights = field(default_factory=LossWeights)
    d1_conjunctive: bool = False
    pre_widths: tuple[int, ...] = (8, 8)
    hg_widths: tuple[int, ...] = (4, 1)
    score_scale: float = 100.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.d_max % 4 or self.d_max < 8:
            raise ValueError("d_max must be a multiple of 4 and at least 8")
        if not self.pre_widths or not self.hg_widths or self.hg_widths[-1] != 1:
            raise ValueError("stacks need at least one layer and the last must emit one channel")
        if self.score_scale <= 0:
            raise ValueError("score_scale must be positive")

    @property
    def levels(self) -> int:
        """Quarter-resolution disparity levels."""
        return self.d_max // 4

    @property
    def fused(self) -> bool:
        return self.mode in ("trinocular", "binocular")

    @property
    def name(self) -> str:
        return self.fusion.name if self.fused else self.mode


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 4
    epochs_selfsup: int = 8
    epochs_sup: int = 8
    lr: float = 1e-3
    milestones: tuple[int, ...] = ()
    decay: float = 2.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs_selfsup < 0 or self.epochs_sup < 0 or self.batch_size < 1:
            raise ValueError("epoch counts must be >= 0 and batch_size >= 1")


def read_flat(path) -> dict[str, str]:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text()
    parser.read_string("[root]\n" + text, source=str(path))
    return dict(parser["root"])


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return low in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        if default:
            return tuple(type(default[0])(p) for p in parts)
        return tuple(int(p) if p.lstrip("-").isdigit() else float(p) for p in parts)
    return value.strip()


def _apply(obj, pairs: dict[str, str], section: str):
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, value in pairs.items():
        if key not in names:
            raise KeyError(f"unknown config key {section}.{key}")
        updates[key] = _coerce(value, getattr(obj, key))
    return replace(obj, **updates) if updates else obj


def build_configs(pairs: dict[str, str], scene: SceneSpec | None = None,
                  pipeline: PipelineConfig | None = None,
                  train: TrainConfig | None = None):
    """Apply flat pairs over defaults; returns (SceneSpec, PipelineConfig, TrainConfig)."""
    scene = scene or SceneSpec()
    pipeline = pipeline or PipelineConfig()
    train = train or TrainConfig()
    grouped: dict[str, dict[str, str]] = {}
    for key, value in pairs.items():
        section, _, name = key.partition(".")
        if not name:
            raise KeyError(f"config key {key!r} needs a section prefix")
        grouped.setdefault(section, {})[name] = value
    known = {"scene", "feat", "fusion", "loss", "pipeline", "metrics", "train"}
    unknown = set(grouped) - known
    if unknown:
        raise KeyError(f"unknown config section(s): {sorted(unknown)}")
    if "scene" in grouped:
        sc = dict(grouped["scene"])
        if "noise_sigma" in sc:
            vals = tuple(float(v) for v in sc.pop("noise_sigma").replace(",", " ").split())
            scene = replace(scene, noise_sigma=vals[0] if len(vals) == 1 else vals)
        scene = _apply(scene, sc, "scene")
    sub = {
        "feat": _apply(pipeline.feat, grouped.get("feat", {}), "feat"),
        "fusion": _apply(pipeline.fusion, grouped.get("fusion", {}), "fusion"),
        "loss": _apply(pipeline.loss, grouped.get("loss", {}), "loss"),
    }
    pipeline = replace(pipeline, **sub)
    pipeline = _apply(pipeline, grouped.get("pipeline", {}), "pipeline")
    if "metrics" in grouped:
        m = dict(grouped["metrics"])
        if set(m) - {"d1_conjunctive"}:
            raise KeyError(f"unknown metrics keys: {sorted(set(m) - {'d1_conjunctive'})}")
        pipeline = replace(pipeline, d1_conjunctive=_coerce(m["d1_conjunctive"], False))
    train = _apply(train, grouped.get("train", {}), "train")
    return scene, pipeline, train


def load_configs(path=None, overrides: dict[str, str] | None = None):
    pairs = read_flat(path) if path else {}
    pairs.update(overrides or {})
    return build_configs(pairs)
