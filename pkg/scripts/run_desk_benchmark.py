"""Generate the seeded desk benchmark, train the default pipeline, and write the ablation table.

    python scripts/run_desk_benchmark.py --out runs/desk
"""

import argparse
import sys
import time
from pathlib import Path

from tristereo.cli import main


def run(argv):
    t0 = time.perf_counter()
    code = main(argv)
    print(f"[{time.perf_counter() - t0:6.1f}s] tristereo {' '.join(argv[:1])} -> {code}")
    if code:
        sys.exit(code)


def cli():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--counts", type=int, nargs=3, default=(16, 16, 8), metavar=("SUP", "SELF", "HELD"))
    ap.add_argument("--configs", help="bench subset (default: all ten rows)")
    args = ap.parse_args()

    data = args.out / "data"
    for (name, seed), count in zip((("sup", 1), ("selfsup", 2), ("heldout", 3)), args.counts):
        run(["generate", "--config", args.config, "--seed", str(seed), "--count", str(count),
             "--out", str(data / name)])
    sets = ["--sup", str(data / "sup"), "--selfsup", str(data / "selfsup"), "--heldout", str(data / "heldout")]
    run(["train", "--config", args.config, *sets, "--out", str(args.out / "train")])
    bench = ["bench", "--config", args.config, *sets, "--out", str(args.out / "bench")]
    if args.configs:
        bench += ["--configs", args.configs]
    run(bench)

    print("\nheld-out EPE per iteration")
    for line in (args.out / "train" / "train_log.csv").read_text().splitlines()[1:]:
        cols = line.split(",")
        if cols[1] == "eval":
            print(f"  iter {cols[0]}: {float(cols[7]):.4f}")
    print("\n" + (args.out / "bench" / "bench.csv").read_text())


if __name__ == "__main__":
    cli()
