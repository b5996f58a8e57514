#!/usr/bin/env python3
"""Sweep lambda for the Einstein-Hessian equation on the circle.

Solves ma_nu(phi) = e^{-lambda u} mu0 for a range of lambda and reports
the Ding energy, iteration count, and the sup residual of the pointwise
relation -lambda u = log(rho / rho_0) + const at the solution.
"""

import argparse

import numpy as np

from hessianma import einstein as ein
from hessianma import geometry as geo
from hessianma import measures as mea
from hessianma import solver as sol


def relation_residual(st, prob):
    rho = mea.ma_measure(st.phi, sol._oversampled_nu(prob.nu, 8))
    good = rho.density > 1e-12
    rel = np.log(rho.density[good] / prob.mu0.density[good]) \
        + prob.lam * st.phi.u[good]
    return float(np.max(rel) - np.min(rel))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+",
                    default=[-4.0, -2.0, -1.0, -0.5, 0.0, 0.5])
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--mu0-amplitude", type=float, default=0.4)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()

    model = geo.torus(dim=1)
    g = geo.primal_grid(model, args.n)
    nu = mea.GridDensity.uniform(geo.dual_grid(model, args.n))
    mu0 = mea.GridDensity.cosine(g, args.mu0_amplitude)
    print(f"{'lambda':>8} {'iters':>6} {'D':>12} {'osc(u)':>10} "
          f"{'relation':>10}")
    for lam in args.lams:
        prob = ein.EinsteinProblem(nu, mu0, lam)
        st = ein.solve_einstein(prob, sol.SolveOptions(tol=args.tol,
                                                       max_iters=400))
        osc = float(np.max(st.phi.u) - np.min(st.phi.u))
        print(f"{lam:>8.2f} {st.iteration:>6} {st.F_value:>12.6f} "
              f"{osc:>10.3e} {relation_residual(st, prob):>10.3e}")


if __name__ == "__main__":
    main()
