"""End-to-end finite-difference check of the training gradient for any fusion configuration.

    python scripts/gradient_check.py --level cost --method ga --phase selfsup --steps 1e-4 1e-6
"""

import argparse
from dataclasses import replace

import numpy as np

from tristereo.config import PipelineConfig
from tristereo.fusion import FusionConfig
from tristereo.geometry import SceneSpec, generate_triplet
from tristereo.model import init_params
from tristereo.pipeline import prepare_sample
from tristereo.train import compute_gradient, flat_names, loss_graph


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", default="pre_hg")
    ap.add_argument("--method", default="ga")
    ap.add_argument("--phase", default="supervised", choices=("supervised", "selfsup"))
    ap.add_argument("--jitter", type=float, default=0.0, help="perturb the initial parameters")
    ap.add_argument("--score-scale", type=float, default=100.0)
    ap.add_argument("--steps", type=float, nargs="+", default=[1e-4])
    ap.add_argument("--floor", type=float, default=1e-6)
    ap.add_argument("--show", type=int, default=5)
    args = ap.parse_args()

    scene = SceneSpec(16, 16, layers=2, d_min=1.0, d_max=3.5, disparity_step=0.5, texture_density=1.0, dot_size=2)
    cfg = replace(PipelineConfig(d_max=16, score_scale=args.score_scale),
                  fusion=FusionConfig(args.level, args.method))
    samples = [prepare_sample(generate_triplet(0, scene), cfg)]
    params = init_params(cfg, 0)
    if args.jitter:
        params.load_flat(params.flat() + np.random.default_rng(1).normal(0, args.jitter, params.size))
    _, _, analytic = compute_gradient(params, samples, cfg, args.phase)
    names = flat_names(params)
    x = params.flat().copy()

    def loss():
        params.load_flat(x)
        return float(loss_graph(params, samples, cfg, args.phase)[0].value)

    for step in args.steps:
        numeric = np.zeros_like(x)
        for i in range(x.size):
            h = step * max(abs(x[i]), 1.0)
            x[i] += h
            fp = loss()
            x[i] -= 2 * h
            fm = loss()
            x[i] += h
            numeric[i] = (fp - fm) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), args.floor)
        print(f"h={step:g}: {x.size} params, max rel {rel.max():.2e}, above 1e-4: {(rel > 1e-4).sum()}")
        for i in np.argsort(-rel)[:args.show]:
            print(f"    {names[i]:28s} analytic {analytic[i]: .8e}  numeric {numeric[i]: .8e}")


if __name__ == "__main__":
    main()
