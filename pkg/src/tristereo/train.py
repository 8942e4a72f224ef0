"""Gradients over the parameter set, Adam, and the alternating two-phase schedule."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .config import PipelineConfig, TrainConfig
from .fileio import dump_arrays, load_arrays
from .geometry import DisparityMap
from .losses import (huber_forward, photometric_forward, smoothness_forward, total_loss,
                     warp_forward)
from .metrics import evaluate
from .model import ParameterSet, bind, forward_disparity, init_params
from .pipeline import Sample, binocular_mode, predict, prepare_sample, stack

__all__ = ["AdamState", "NonFiniteGradientError", "TrainLog", "adam_step", "binocular_mode",
           "compute_gradient", "evaluate_split", "run_sequential", "save_checkpoint",
           "load_checkpoint", "TrainConfig"]

PHASES = ("selfsup", "supervised")
LOG_COLUMNS = ("iter", "phase", "epoch", "loss_total", "loss_d", "loss_p", "loss_s", "epe", "d1")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index: int, name: str = ""):
        self.index = index
        super().__init__(f"non-finite gradient at parameter index {index}" + (f" ({name})" if name else ""))


# ------------------------------------------------------------------ gradients


def loss_graph(bound: ParameterSet, samples: list[Sample], cfg: PipelineConfig, phase: str,
               training: bool = True, stats: list | None = None):
    """Build the phase objective on a batch; returns (total Var, breakdown dict)."""
    shapes = {s.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError("a batch must share one image shape")
    shape = shapes.pop()
    _, d = forward_disparity(bound, stack(samples, "lm"), stack(samples, "lr"), shape, cfg, training, stats)
    w = cfg.loss
    left = stack(samples, "left")
    comps = {"s": smoothness_forward(d, left)}
    if phase == "supervised":
        if any(s.gt is None for s in samples):
            raise ValueError("supervised phase needs ground truth on every sample")
        comps["d"] = huber_forward(d, stack(samples, "gt"), stack(samples, "gt_valid"), w.delta)
    elif phase == "selfsup":
        rs = {s.r for s in samples}
        if len(rs) != 1:
            raise ValueError("a batch must share one baseline ratio")
        r = rs.pop()
        views = {"r": [("right", 1.0)], "m": [("middle", 1.0 / r)],
                 "both": [("middle", 1.0 / r), ("right", 1.0)]}[w.recon]
        photo = 0.0
        for attr, scale in views:
            rec, valid = warp_forward(stack(samples, attr), d, scale)
            photo = photo + photometric_forward(left, rec, valid, w.alpha)
        comps["p"] = photo
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return total_loss(comps, w, phase)


def compute_gradient(params: ParameterSet, samples: list[Sample], cfg: PipelineConfig, phase: str,
                     training: bool = True, stats: list | None = None):
    """(loss, breakdown, flat gradient in ParameterSet.flat() order)."""
    bound, leaves = bind(params)
    loss, breakdown = loss_graph(bound, samples, cfg, phase, training, stats)
    if not isinstance(loss, ag.Var) or not loss.requires_grad:
        return float(getattr(loss, "value", loss)), breakdown, np.zeros(params.size)
    grads = ag.grad(loss, leaves)
    return float(loss.value), breakdown, np.concatenate([g.ravel() for g in grads])


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              names: list[str] | None = None) -> tuple[np.ndarray, AdamState]:
    grads = np.asarray(grads, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteGradientError(i, names[i] if names else "")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def flat_names(params: ParameterSet) -> list[str]:
    return [f"{name}[{i}]" for name, arr in params.arrays(trainable=True).items() for i in range(arr.size)]


# ----------------------------------------------------------------- schedule


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(LOG_COLUMNS)
        for row in self.rows:
            wr.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
        return buf.getvalue()

    def held_out_epe(self) -> list[float]:
        return [r["epe"] for r in self.rows if r["phase"] == "eval"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _as_samples(items, cfg: PipelineConfig) -> list[Sample]:
    return [s if isinstance(s, Sample) else prepare_sample(s, cfg) for s in items]


def evaluate_split(params: ParameterSet, samples: list[Sample], cfg: PipelineConfig,
                   batch_size: int = 8):
    """Pixel-pooled metrics over a split (inference statistics)."""
    gts, ests, valids = [], [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        d = predict(params, chunk, cfg)
        gts += [s.gt for s in chunk]
        valids += [s.gt_valid for s in chunk]
        ests += list(d)
    gt = DisparityMap(np.concatenate(gts, axis=1), np.concatenate(valids, axis=1))
    est = DisparityMap(np.concatenate(ests, axis=1), np.ones(gt.shape, bool))
    return evaluate(gt, est, cfg.d1_conjunctive)


def calibrate_running_stats(params: ParameterSet, samples: list[Sample], cfg: PipelineConfig,
                            phase: str = "supervised") -> None:
    """Seed every normalization buffer with the batch statistics of ``samples``."""
    stats: list = []
    forward_disparity(params, stack(samples, "lm"), stack(samples, "lr"), samples[0].shape, cfg, True, stats)
    seen = set()
    for rm, rv, mu, var in stats:
        if id(rm) in seen:
            continue
        seen.add(id(rm))
        rm[...] = mu
        rv[...] = var


def _update_running(stats: list, momentum: float) -> None:
    for rm, rv, mu, var in stats:
        rm *= 1 - momentum
        rm += momentum * mu
        rv *= 1 - momentum
        rv += momentum * var


def phase_lr(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr / cfg.decay ** sum(epoch >= m for m in cfg.milestones)


def train_phase(params: ParameterSet, samples: list[Sample], pcfg: PipelineConfig, tcfg: TrainConfig,
                phase: str, epochs: int, rng: np.random.Generator, log: TrainLog | None = None,
                iteration: int = 0) -> AdamState:
    """Run ``epochs`` of Adam on one phase objective; learning rate and moments restart."""
    state = AdamState.zeros(params.size)
    names = None
    for epoch in range(epochs):
        lr = phase_lr(tcfg, epoch)
        order = rng.permutation(len(samples))
        sums: dict[str, float] = {}
        n_batches = 0
        for i in range(0, len(order), tcfg.batch_size):
            batch = [samples[j] for j in order[i:i + tcfg.batch_size]]
            stats: list = []
            loss, bd, g = compute_gradient(params, batch, pcfg, phase, True, stats)
            try:
                vec, state = adam_step(params.flat(), g, state, lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
            except NonFiniteGradientError as err:
                names = names or flat_names(params)
                raise NonFiniteGradientError(err.index, names[err.index]) from None
            params.load_flat(vec)
            _update_running(stats, tcfg.bn_momentum)
            sums["total"] = sums.get("total", 0.0) + loss
            for k, v in bd.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        if log is not None:
            avg = {k: v / n_batches for k, v in sums.items()}
            log.add(iter=iteration, phase=phase, epoch=epoch, lr=lr, loss_total=avg["total"],
                    loss_d=avg.get("d"), loss_p=avg.get("p"), loss_s=avg.get("s"),
                    lambda_d=avg["lambda_d"], lambda_p=avg["lambda_p"], lambda_s=avg["lambda_s"])
    return state


def run_sequential(datasets: dict, tcfg: TrainConfig = TrainConfig(),
                   pcfg: PipelineConfig = PipelineConfig(), params: ParameterSet | None = None):
    """Alternate a self-supervised phase and a supervised phase for ``tcfg.iterations`` rounds.

    ``datasets`` maps ``selfsup`` (triplets, truth unused), ``sup`` (triplets
    with truth) and optionally ``heldout`` (with truth) to lists of triplets
    or prepared samples.  Held-out metrics are logged before the first round
    (iteration 0) and after every round.  Returns (params, log, adam state).
    """
    selfsup = _as_samples(datasets.get("selfsup") or [], pcfg)
    sup = _as_samples(datasets.get("sup") or [], pcfg)
    held = _as_samples(datasets.get("heldout") or [], pcfg)
    if not selfsup or not sup:
        raise ValueError("both the self-supervised and the supervised sets must be non-empty")
    selfsup = [Sample(s.lm, s.lr, s.left, s.middle, s.right, s.r) for s in selfsup]
    rng = np.random.default_rng(tcfg.seed)
    if params is None:
        params = init_params(pcfg, tcfg.seed)
        calibrate_running_stats(params, sup, pcfg)
    log = TrainLog()

    def held_out(i):
        if held:
            rep = evaluate_split(params, held, pcfg)
            log.add(iter=i, phase="eval", epe=rep.epe, d1=rep.d1, report=rep)

    held_out(0)
    state = AdamState.zeros(params.size)
    for i in range(1, tcfg.iterations + 1):
        state = train_phase(params, selfsup, pcfg, tcfg, "selfsup", tcfg.epochs_selfsup, rng, log, i)
        state = train_phase(params, sup, pcfg, tcfg, "supervised", tcfg.epochs_sup, rng, log, i)
        held_out(i)
    return params, log, state


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ParameterSet, state: AdamState | None = None) -> None:
    # conv kernels are stored as [Cout, Cin, 27] to fit the 4-dim record header
    arrays = {k: (a.reshape(a.shape[0], a.shape[1], -1) if a.ndim > 4 else a)
              for k, a in params.arrays().items()}
    meta = {}
    if state is not None:
        arrays["adam.m"] = state.m
        arrays["adam.v"] = state.v
        meta["adam.t"] = state.t
    dump_arrays(path, arrays, meta)


def load_checkpoint(path, pcfg: PipelineConfig) -> tuple[ParameterSet, AdamState | None]:
    arrays = load_arrays(path)
    params = init_params(pcfg)
    params.load_arrays(arrays)
    state = None
    if "adam.m" in arrays:
        state = AdamState(arrays["adam.m"], arrays["adam.v"], int(arrays["meta.adam.t"][0]))
    return params, state

