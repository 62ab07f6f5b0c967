"""Quadrature vs closed-form SNR across the three element-size regimes.

Sweeps X / rho0^2 at fixed Q and X / r0^2 and prints one row per point, so
the plateau at r0^2 / rho0^2 and the mid-range mismatch are both visible.
"""
import argparse
import math

import numpy as np

from paraxial_tr.medium import MediumModel
from paraxial_tr.moments import MomentParams, snr


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--Q", type=float, default=40.0, help="sigma^2 k0^2 l_c L")
    ap.add_argument("--Xr", type=float, nargs="+", default=[0.01, 1.0, 20.0], help="X / r0^2 values")
    ap.add_argument("--points", type=int, default=7)
    args = ap.parse_args()
    k0, L, l_c = 10.0, 40.0, 1.0
    s2 = args.Q / (k0**2 * l_c * L)
    X = s2 * L**3 / (6 * l_c)
    m = MediumModel(math.sqrt(s2), l_c)
    print(f"{'X/r0^2':>8} {'X/rho0^2':>10} {'regime':>6} {'quad':>10} {'closed':>10} {'rel':>7} {'r0^2/rho0^2':>12}")
    for xr in args.Xr:
        for xp in np.geomspace(xr * 1.5, xr * 1e3, args.points):
            p = MomentParams(k0, L, math.sqrt(X / xr), math.sqrt(X / xp), m)
            res = snr(p)
            rel = res.quadrature / res.closed_form - 1
            print(f"{xr:8.3g} {xp:10.4g} {res.regime:6d} {res.quadrature:10.4g} {res.closed_form:10.4g} "
                  f"{rel:+7.3f} {(p.r0 / p.rho0) ** 2:12.4g}")


if __name__ == "__main__":
    main()
