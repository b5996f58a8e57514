#!/usr/bin/env python3
"""Quasi-periodic tilings from random semi-discrete solves on T^2.

Draws `count` random weighted atoms, solves the semi-discrete problem
against the uniform dual volume, and writes the cell decomposition of
the requested window as SVG (plus JSON) per seed.
"""

import argparse
from pathlib import Path

import numpy as np

from hessianma import geometry as geo
from hessianma import measures as mea
from hessianma import solver as sol
from hessianma import tiling as til


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--dual", type=int, default=256)
    ap.add_argument("--window", type=float, default=1.0,
                    help="window is [0, w]^2, may exceed one period")
    ap.add_argument("--out", type=Path, default=Path("gallery"))
    args = ap.parse_args()

    model = geo.torus(dim=2)
    nu = mea.GridDensity.uniform(geo.dual_grid(model, (args.dual,) * 2))
    args.out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        atoms = mea.random_atoms(model, args.count, seed=seed)
        opts = sol.SolveOptions(tol=5e-3 / atoms.weights.min(),
                                max_iters=80)
        pa = sol.solve_semidiscrete(atoms, nu, opts)
        window = (np.zeros(2), np.full(2, args.window))
        t = til.extract_tiling(pa, window)
        base = args.out / f"tiling_seed{seed}"
        base.with_suffix(".svg").write_text(til.tiling_to_svg(t))
        base.with_suffix(".json").write_text(til.tiling_to_json(t))
        print(f"seed {seed}: {len(t.cells)} cells, "
              f"total volume {t.total_volume():.6f}, "
              f"converged={pa.state.converged} -> {base}.svg")


if __name__ == "__main__":
    main()
