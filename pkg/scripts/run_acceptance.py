"""Run the Monte Carlo comparisons behind the acceptance suite and write reports.

    python3 scripts/run_acceptance.py --out runs/acceptance --cache runs/cache
"""
import argparse
import sys
from pathlib import Path

from paraxial_tr.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/acceptance"))
    ap.add_argument("--cache", type=Path, default=None)
    ap.add_argument("--n", type=int, default=None, help="override n_realizations")
    args = ap.parse_args(argv)
    worst = 0
    for name in ("acceptance", "imaging"):
        cmd = ["compare", str(CONFIGS / f"{name}.cfg"), "--out", str(args.out / name)]
        if args.cache is not None:
            cmd += ["--cache", str(args.cache)]
        if args.n is not None:
            cmd += ["--n", str(args.n)]
        print(f"== {name}", flush=True)
        worst = max(worst, main(cmd))
    return worst


if __name__ == "__main__":
    sys.exit(run())
