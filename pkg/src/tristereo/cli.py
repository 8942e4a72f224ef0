"""Command-line entry point: ``tristereo {generate,estimate,eval,train,bench}``.

Exit codes: 0 success, 1 processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, TrainConfig, load_configs
from .dataset import generate_dataset, load_dataset, read_triplet, without_truth
from .fileio import FormatError, load_disparity, save_disparity, save_image
from .fusion import FusionConfig, LEVELS, METHODS
from .geometry import Calibration, Image
from .metrics import CSV_HEADER, evaluate

BENCH_CONFIGS = ("cost_max", "cost_top", "cost_cat", "cost_ga", "pre_hg_avg", "pre_hg_ga",
                 "hg_avg", "hg_ga", "lm_only", "lr_only")


class CommandError(RuntimeError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra config override (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("trinocular", "binocular", "lm_only", "lr_only"))
    p.add_argument("--fusion-level", choices=LEVELS)
    p.add_argument("--fusion-method", choices=METHODS)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tristereo", description="Trinocular multi-baseline disparity estimation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded synthetic triplet dataset")
    _common(p)
    p.add_argument("--count", type=int, required=True)

    p = sub.add_parser("estimate", help="estimate disparity for one triplet")
    _common(p)
    p.add_argument("left", type=Path)
    p.add_argument("middle", type=Path)
    p.add_argument("right", type=Path)
    p.add_argument("--gt", type=Path, help="ground truth PFM; also writes an error map")
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("eval", help="metrics row for an estimate against ground truth")
    _common(p)
    p.add_argument("gt", type=Path)
    p.add_argument("est", type=Path)
    p.add_argument("--header", action="store_true")

    p = sub.add_parser("train", help="iterative self-supervised/supervised training")
    _common(p)
    p.add_argument("--sup", type=Path, required=True, help="dataset directory with ground truth")
    p.add_argument("--selfsup", type=Path, required=True, help="dataset directory (truth ignored)")
    p.add_argument("--heldout", type=Path, help="held-out dataset with ground truth")

    p = sub.add_parser("bench", help="fusion level x method ablation table")
    _common(p)
    p.add_argument("--sup", type=Path, required=True)
    p.add_argument("--selfsup", type=Path,
                   help="self-supervised set; with it every configuration gets the full iterative schedule")
    p.add_argument("--heldout", type=Path, required=True)
    p.add_argument("--configs", default=",".join(BENCH_CONFIGS),
                   help="comma-separated subset of " + ",".join(BENCH_CONFIGS))
    return ap


def resolve_configs(args):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise CommandError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    scene, pcfg, tcfg = load_configs(args.config, overrides)
    if args.mode:
        pcfg = replace(pcfg, mode=args.mode)
    if args.fusion_level or args.fusion_method:
        pcfg = replace(pcfg, fusion=FusionConfig(args.fusion_level or pcfg.fusion.level,
                                                 args.fusion_method or pcfg.fusion.method))
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    return scene, pcfg, tcfg


def _require_out(args) -> Path:
    if args.out is None:
        raise CommandError("--out is required")
    return args.out


def cmd_generate(args) -> int:
    scene, _, tcfg = resolve_configs(args)
    if args.count < 0:
        raise CommandError("--count must be >= 0")
    generate_dataset(_require_out(args), scene, args.count, tcfg.seed)
    return 0


def cmd_estimate(args) -> int:
    from .pipeline import error_map, estimate
    from .train import load_checkpoint

    scene, pcfg, _ = resolve_configs(args)
    out = _require_out(args)
    for p in (args.left, args.middle, args.right, args.gt, args.checkpoint):
        if p is not None and not p.is_file():
            raise CommandError(f"no such file: {p}")
    triplet = read_triplet(args.left, args.middle, args.right, Calibration(scene.b_lm, scene.b_lr), args.gt)
    params = load_checkpoint(args.checkpoint, pcfg)[0] if args.checkpoint else None
    est = estimate(triplet, pcfg, params)
    out.mkdir(parents=True, exist_ok=True)
    save_disparity(est, out / "disparity.pfm")
    if triplet.gt is not None:
        save_image(Image(error_map(triplet.gt, est)), out / "error.pgm")
    return 0


def cmd_eval(args) -> int:
    _, pcfg, _ = resolve_configs(args)
    report = evaluate(load_disparity(args.gt), load_disparity(args.est), pcfg.d1_conjunctive)
    text = (CSV_HEADER + "\n" if args.header else "") + report.csv_row() + "\n"
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    from .train import run_sequential, save_checkpoint

    _, pcfg, tcfg = resolve_configs(args)
    out = _require_out(args)
    data = {"sup": load_dataset(args.sup), "selfsup": without_truth(load_dataset(args.selfsup, with_gt=False))}
    if args.heldout:
        data["heldout"] = load_dataset(args.heldout)
    params, log, state = run_sequential(data, tcfg, pcfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", params, state)
    (out / "train_log.csv").write_text(log.to_csv())
    return 0


def bench_pipeline(name: str, base: PipelineConfig) -> PipelineConfig:
    if name in ("lm_only", "lr_only"):
        return replace(base, mode=name)
    level, _, method = name.rpartition("_")
    mode = base.mode if base.mode in ("trinocular", "binocular") else "trinocular"
    return replace(base, mode=mode, fusion=FusionConfig(level, method))


def run_bench(sup, heldout, names, pcfg: PipelineConfig, tcfg: TrainConfig, selfsup=None):
    """Train each configuration from the same seed and evaluate it on the held-out split.

    With ``selfsup`` the iterative schedule of ``train`` is used; otherwise
    ``tcfg.epochs_sup`` supervised epochs.  Returns [(name, MetricsReport, seconds)].
    """
    import numpy as np

    from .model import init_params
    from .train import (_as_samples, calibrate_running_stats, evaluate_split, run_sequential,
                        train_phase)

    rows = []
    for name in names:
        cfg = bench_pipeline(name, pcfg)
        t0 = time.perf_counter()
        train_set = _as_samples(sup, cfg)
        if selfsup:
            params = run_sequential({"sup": train_set, "selfsup": selfsup}, tcfg, cfg)[0]
        else:
            params = init_params(cfg, tcfg.seed)
            calibrate_running_stats(params, train_set, cfg)
            train_phase(params, train_set, cfg, tcfg, "supervised", tcfg.epochs_sup,
                        np.random.default_rng(tcfg.seed))
        rows.append((name, evaluate_split(params, _as_samples(heldout, cfg), cfg), time.perf_counter() - t0))
    return rows


def cmd_bench(args) -> int:
    _, pcfg, tcfg = resolve_configs(args)
    out = _require_out(args)
    names = [n.strip() for n in args.configs.split(",") if n.strip()]
    unknown = [n for n in names if n not in BENCH_CONFIGS]
    if unknown:
        raise CommandError(f"unknown bench configuration(s) {unknown}; choose from {BENCH_CONFIGS}")
    selfsup = without_truth(load_dataset(args.selfsup, with_gt=False)) if args.selfsup else None
    rows = run_bench(load_dataset(args.sup), load_dataset(args.heldout), names, pcfg, tcfg, selfsup)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text("config," + CSV_HEADER + "\n"
                                   + "".join(f"{n},{r.csv_row()}\n" for n, r, _ in rows))
    (out / "bench_timing.csv").write_text("config,seconds\n"
                                          + "".join(f"{n},{s:.3f}\n" for n, _, s in rows))
    return 0


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate, "eval": cmd_eval,
            "train": cmd_train, "bench": cmd_bench}


def _thread_limit():
    value = os.environ.get("TRISTEREO_THREADS")
    if not value:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    limiter = _thread_limit()
    try:
        return COMMANDS[args.command](args)
    except (CommandError, FormatError, ValueError, KeyError, OSError, FloatingPointError) as err:
        print(f"tristereo {args.command}: error: {err}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
