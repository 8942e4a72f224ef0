"""On-disk triplet datasets: ``NNNN_{left,middle,right}.pgm``, ``NNNN_gt.pfm``,
``NNNN_occ_{lm,lr}.pgm`` and a headerless ``manifest.csv`` of
``index,seed,b_lm,b_lr`` rows."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .fileio import load_disparity, load_image, load_mask, save_disparity, save_image, save_mask
from .geometry import Calibration, SceneSpec, Triplet, generate_triplet

MANIFEST = "manifest.csv"


def sample_seed(seed: int, index: int) -> int:
    return seed * 100_003 + index


def write_triplet(t: Triplet, out: Path, index: int) -> None:
    stem = out / f"{index:04d}"
    for view in ("left", "middle", "right"):
        save_image(getattr(t, view), f"{stem}_{view}.pgm")
    if t.gt is not None:
        save_disparity(t.gt, f"{stem}_gt.pfm")
    if t.occlusion_lm is not None:
        save_mask(t.occlusion_lm, f"{stem}_occ_lm.pgm")
        save_mask(t.occlusion_lr, f"{stem}_occ_lr.pgm")


def generate_dataset(out, spec: SceneSpec, count: int, seed: int) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        s = sample_seed(seed, i)
        write_triplet(generate_triplet(s, spec), out, i)
        rows.append(f"{i},{s},{spec.b_lm!r},{spec.b_lr!r}\n")
    (out / MANIFEST).write_text("".join(rows))
    return out


def read_manifest(root) -> list[tuple[int, int, float, float]]:
    path = Path(root) / MANIFEST
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            i, s, blm, blr = line.split(",")
            rows.append((int(i), int(s), float(blm), float(blr)))
    return rows


def read_triplet(left, middle, right, calib: Calibration, gt=None, occ_lm=None, occ_lr=None) -> Triplet:
    views = [load_image(p) for p in (left, middle, right)]
    return Triplet(*views, calib,
                   load_disparity(gt) if gt else None,
                   load_mask(occ_lm) if occ_lm else None,
                   load_mask(occ_lr) if occ_lr else None)


def load_dataset(root, with_gt: bool = True) -> list[Triplet]:
    root = Path(root)
    out = []
    for i, _, blm, blr in read_manifest(root):
        stem = root / f"{i:04d}"
        gt = f"{stem}_gt.pfm" if with_gt else None
        occ = (f"{stem}_occ_lm.pgm", f"{stem}_occ_lr.pgm") if with_gt and Path(f"{stem}_occ_lm.pgm").exists() else (None, None)
        out.append(read_triplet(f"{stem}_left.pgm", f"{stem}_middle.pgm", f"{stem}_right.pgm",
                                Calibration(blm, blr), gt, *occ))
    if with_gt and any(t.gt is None for t in out):
        raise ValueError(f"{root}: ground truth missing")
    return out


def without_truth(triplets: list[Triplet]) -> list[Triplet]:
    return [replace(t, gt=None, occlusion_lm=None, occlusion_lr=None) for t in triplets]
