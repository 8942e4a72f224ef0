"""Argmax agreement between the spline-aligned narrow-baseline volume and the wide-baseline volume.

Reports agreement for several block margins, plus how often each argmax hits
the quantized ground truth.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from test_acceptance import CONSISTENCY_SCENE, consistency_mask  # noqa: E402
from tristereo.costvol import align_lm_cost, build_cost  # noqa: E402
from tristereo.features import extract_features  # noqa: E402
from tristereo.geometry import generate_triplet  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--triplets", type=int, default=20)
    ap.add_argument("--levels", type=int, default=8)
    ap.add_argument("--margins", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    volumes = []
    for seed in range(args.triplets):
        t = generate_triplet(seed, CONSISTENCY_SCENE)
        fl, fm, fr = (extract_features(v) for v in (t.left, t.middle, t.right))
        lr = build_cost(fl, fr, args.levels).data.sum(axis=0).argmax(axis=0)
        lm = align_lm_cost(build_cost(fl, fm, args.levels, "LM"), t.calib.r).data.sum(axis=0).argmax(axis=0)
        volumes.append((t, lr, lm, (t.gt.values[::4, ::4] // 4).astype(int)))

    print("margin  pixels  agree%   lr==gt%  lm==gt%")
    for m in args.margins:
        n = agree = hit_lr = hit_lm = 0
        for t, lr, lm, gq in volumes:
            mask = consistency_mask(t, args.levels, m)
            n += mask.sum()
            agree += (lr == lm)[mask].sum()
            hit_lr += (lr == gq)[mask].sum()
            hit_lm += (lm == gq)[mask].sum()
        print(f"{m:6d}  {n:6d}  {100 * agree / n:6.2f}  {100 * hit_lr / n:7.2f}  {100 * hit_lm / n:7.2f}")


if __name__ == "__main__":
    main()
