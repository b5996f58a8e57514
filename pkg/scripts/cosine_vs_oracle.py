#!/usr/bin/env python3
"""Convergence study: 1d cosine data against the closed-form solution.

For mu = (1 + a cos 2 pi x) dx on the circle and nu uniform, the optimal
map is the mu-CDF and the potential follows by integrating it twice.
Solves at a range of resolutions and prints a sup-error table.
"""

import argparse
import time

import numpy as np

from hessianma import geometry as geo
from hessianma import measures as mea
from hessianma import solver as sol


def closed_form(node_x, masses):
    n = len(node_x)
    F = np.cumsum(masses) - 0.5 * masses
    up = F - node_x
    up -= np.mean(up)
    u = (np.cumsum(up) - 0.5 * up) / n
    return u - np.mean(u)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--amplitude", type=float, default=0.5)
    ap.add_argument("--tol", type=float, default=1e-6)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[64, 128, 256, 512, 1024])
    args = ap.parse_args()

    model = geo.torus(dim=1)
    print(f"{'N':>6} {'iters':>6} {'sup error':>12} {'seconds':>8}")
    for n in args.sizes:
        g = geo.primal_grid(model, n)
        mu = mea.GridDensity.cosine(g, args.amplitude)
        nu = mea.GridDensity.uniform(geo.dual_grid(model, n))
        t0 = time.time()
        st = sol.solve_grid(mu, nu, sol.SolveOptions(tol=args.tol,
                                                     max_iters=400))
        u = st.phi.u - np.mean(st.phi.u)
        ref = closed_form(g.nodes[:, 0], mu.masses)
        err = float(np.max(np.abs(u - ref)))
        print(f"{n:>6} {st.iteration:>6} {err:>12.3e} "
              f"{time.time() - t0:>8.2f}")


if __name__ == "__main__":
    main()
