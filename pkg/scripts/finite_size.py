"""Refocused-field statistics along a ray from the focus, per realization.

Records u_tr at r = 0, 1, 2, 4, 8 R_tr, the mean intensity on the 6-8 R_tr
ring and the total energy, then compares the sample variance with the
x-independent limit covariance I_b. Used to size the finite-parameter
departures (near-focus excess, far-field deficit) discussed in the README.

    python3 scripts/finite_size.py configs/acceptance.cfg --n 300 --save stats.npy
"""
import argparse
import math

import numpy as np

from paraxial_tr.core import load_config, validate
from paraxial_tr.moments import MomentParams, background_intensity, limit_mean_refocused
from paraxial_tr.montecarlo import Channel, run_ensemble_channels

RADII = (0, 1, 2, 4, 8)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--save", default=None, help="write per-realization samples (.npy)")
    args = ap.parse_args()
    cfg = validate(load_config(args.config))
    g = cfg.grid
    p = MomentParams.from_config(cfg)
    R = p.R_tr
    idx = [g.index_of((r * R, 0.0)) for r in RADII]
    ring = (g.r2 >= (6 * R) ** 2) & (g.r2 <= (8 * R) ** 2)

    def observe(i, fields):
        u = fields[0]
        return [u[j] for j in idx] + [np.mean(np.abs(u[ring]) ** 2), np.sum(np.abs(u) ** 2) * g.spacing**2]

    _, rows = run_ensemble_channels(cfg, args.n, [Channel("main")], observe=observe)
    a = np.array(rows)
    if args.save:
        np.save(args.save, a)
    Ib, _ = background_intensity(p)
    lim, _ = limit_mean_refocused([(r * R, 0.0) for r in RADII], (0.0, 0.0), p)
    n = len(a)
    print(f"Q = {p.Q:.3g}  X/r0^2 = {p.X / p.r0**2:.3g}  R_tr = {R:.4g}  I_b = {Ib:.4g}  N = {n}")
    print(f"{'r/R_tr':>6} {'|mean|':>9} {'limit':>9} {'var':>9} {'se':>9} {'var/I_b':>8}")
    for k, r in enumerate(RADII):
        u = a[:, k]
        dev = np.abs(u - u.mean()) ** 2
        print(f"{r:6d} {abs(u.mean()):9.4f} {abs(lim[k]):9.4f} {dev.sum() / (n - 1):9.4f} "
              f"{dev.std(ddof=1) / math.sqrt(n):9.4f} {dev.sum() / (n - 1) / Ib:8.3f}")
    print(f"ring 6-8 R_tr: E|u|^2 = {a[:, 5].real.mean():.4f} +- {a[:, 5].real.std(ddof=1) / math.sqrt(n):.4f}")
    e = a[:, 6].real
    print(f"energy: mean {e.mean():.4g}, CV {e.std(ddof=1) / e.mean():.3f}")


if __name__ == "__main__":
    main()
