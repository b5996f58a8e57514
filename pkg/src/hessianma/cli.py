"""Command line entry point: run, verify, export-tiling, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import einstein as ein
from . import geometry as geo
from . import legendre as leg
from . import measures as mea
from . import solver as sol
from . import tiling as til
from .arrayio import write_array
from .errors import ConfigError, HessianMAError, NotConverged

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3


def _round_floats(obj, digits=12):
    # summary records must be bitwise reproducible for a fixed config+seed;
    # rounding kills dependence on nondeterministic reduction order
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


def _write_summary(out_dir: Path, summary: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(_round_floats(summary), f, indent=2, sort_keys=True)
        f.write("\n")


def _log_writer(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    f = open(out_dir / "convergence.jsonl", "w")

    def log(rec):
        f.write(json.dumps(_round_floats(rec)) + "\n")
        f.flush()
    return f, log


def _solve_options(cfg: cfgmod.RunConfig) -> sol.SolveOptions:
    n = cfg.numeric
    return sol.SolveOptions(tol=n.tol, max_iters=n.max_iters, radius=n.radius,
                            seed=n.seed, raise_on_fail=False)


def _export_tiling(pa, model, out_dir: Path, formats) -> dict:
    lo = np.zeros(model.dim)
    if model.kind == "torus":
        hi = np.asarray(model.periods, dtype=float)
    else:
        hi = np.array([2.0])
    tiling = til.extract_tiling(pa, (lo, hi))
    info = {"cells": len(tiling.cells),
            "total_volume": float(tiling.total_volume())}
    if "json" in formats:
        (out_dir / "tiling.json").write_text(til.tiling_to_json(tiling))
    if "svg" in formats and model.dim == 2:
        (out_dir / "tiling.svg").write_text(til.tiling_to_svg(tiling))
    return info


def cmd_run(cfg: cfgmod.RunConfig, out_dir: Path) -> int:
    model = cfgmod.build_model(cfg)
    pgrid, dgrid = cfgmod.grids(cfg, model)
    nu = cfgmod.build_density(cfg.nu, dgrid, cfg.base_dir)
    opts = _solve_options(cfg)
    kind = cfg.problem.kind
    logf, log = _log_writer(out_dir)
    summary = {"problem": kind, "seed": cfg.numeric.seed, "converged": False}
    status = EXIT_NOT_CONVERGED
    try:
        if kind == "monge_ampere":
            mu = cfgmod.build_density(cfg.mu, pgrid, cfg.base_dir)
            st = sol.solve_grid(mu, nu, opts, log=log)
            u = st.phi.u
            write_array(out_dir / "u.bin", u.reshape(pgrid.shape))
            summary.update(converged=st.converged, iterations=st.iteration,
                           F=st.F_value, grad_sup=st.grad_norm,
                           osc_u=float(np.max(u) - np.min(u)),
                           estimates_ok=st.estimates_ok)
            status = EXIT_OK if st.converged else EXIT_NOT_CONVERGED
        elif kind == "einstein":
            mu0 = cfgmod.build_density(cfg.mu, pgrid, cfg.base_dir)
            prob = ein.EinsteinProblem(nu, mu0, cfg.problem.lam)
            st = ein.solve_einstein(prob, opts, log=log)
            u = st.phi.u
            write_array(out_dir / "u.bin", u.reshape(pgrid.shape))
            summary.update(converged=st.converged, iterations=st.iteration,
                           D=st.F_value, grad_sup=st.grad_norm,
                           osc_u=float(np.max(u) - np.min(u)),
                           lam=cfg.problem.lam)
            status = EXIT_OK if st.converged else EXIT_NOT_CONVERGED
        elif kind == "semidiscrete":
            atoms = cfgmod.build_atoms(cfg, model)
            pa = sol.solve_semidiscrete(atoms, nu, opts, log=log)
            st = pa.state
            write_array(out_dir / "potentials.bin", pa.potentials)
            write_array(out_dir / "atoms.bin", pa.atoms)
            summary.update(converged=st.converged, iterations=st.iteration,
                           dual_objective=-st.F_value,
                           mass_residual=st.grad_norm,
                           atoms=len(atoms))
            if st.converged and model.dim <= 2:
                summary["tiling"] = _export_tiling(
                    pa, model, out_dir, cfg.output.formats)
            status = EXIT_OK if st.converged else EXIT_NOT_CONVERGED
        elif kind == "approximate":
            mu = cfgmod.build_density(cfg.mu, pgrid, cfg.base_dir)
            stg = sol.solve_grid(mu, nu, opts, log=log)
            counts = cfg.problem.atom_counts or [4, 16, 64]
            errors = []
            seed = cfg.numeric.seed if cfg.numeric.seed is not None else 0
            for n_atoms in counts:
                pa = til.pa_approximate(stg.phi, n_atoms, nu=nu, seed=seed)
                errors.append({"atoms": int(n_atoms),
                               "sup_error": float(pa.approx_error)})
            summary.update(converged=stg.converged, sweep=errors)
            status = EXIT_OK if stg.converged else EXIT_NOT_CONVERGED
        else:
            raise ConfigError(f"unknown problem kind {kind!r}",
                              field="problem.kind")
    except NotConverged as e:
        summary["error"] = str(e)
        status = EXIT_NOT_CONVERGED
    except ConfigError:
        raise
    except HessianMAError as e:
        summary["error"] = f"{type(e).__name__}: {e}"
        status = EXIT_NOT_CONVERGED
    finally:
        logf.close()
        _write_summary(out_dir, summary)
    return status


def cmd_verify(cfg: cfgmod.RunConfig, out_dir: Path) -> int:
    model = cfgmod.build_model(cfg)
    checks = list(geo.verify_model(model))

    # quadrature / transform invariants on a small seeded section
    pgrid, dgrid = cfgmod.grids(cfg, model)
    rng = np.random.default_rng(cfg.numeric.seed or 0)
    u = 0.01 * rng.standard_normal(pgrid.num_nodes)
    s = leg.GridSection(pgrid, u)
    w = leg.legendre_transform(s, dgrid=dgrid)
    s2 = leg.convexify(s)
    checks.append(("double_transform_below",
                   bool(np.all(s2.u <= s.u + 1e-9)),
                   float(np.max(s2.u - s.u))))
    s3 = leg.convexify(s2)
    checks.append(("convexify_idempotent",
                   bool(np.max(np.abs(s3.u - s2.u)) <= 1e-9),
                   float(np.max(np.abs(s3.u - s2.u)))))
    C = leg.grid_cost_matrix(pgrid, dgrid)
    fy = (s2.u[:, None] + w.w[None, :] + C).min()
    checks.append(("fenchel_young", bool(fy >= -1e-9), float(fy)))
    nu = mea.GridDensity.uniform(dgrid)
    push = mea.ma_measure(s2, nu)
    mass_err = abs(float(push.density @ pgrid.cell_volumes) - 1.0)
    checks.append(("pushforward_mass", mass_err <= 1e-10, mass_err))
    osc_ok = sol.check_c0(s2)
    checks.append(("c0_bound", bool(osc_ok), sol.c0_bound(model)))

    report = [{"name": n, "ok": bool(ok), "slack": float(sl)}
              for n, ok, sl in checks]
    _write_summary(out_dir, {"verify": report})
    for rec in report:
        print(f"{'PASS' if rec['ok'] else 'FAIL'}  {rec['name']}  "
              f"(slack {rec['slack']:.3g})")
    return EXIT_OK if all(r["ok"] for r in report) else EXIT_NOT_CONVERGED


def cmd_export_tiling(cfg: cfgmod.RunConfig, out_dir: Path) -> int:
    if cfg.problem.kind not in ("semidiscrete", "approximate"):
        raise ConfigError("export-tiling needs a semidiscrete problem",
                          field="problem.kind")
    model = cfgmod.build_model(cfg)
    _, dgrid = cfgmod.grids(cfg, model)
    nu = cfgmod.build_density(cfg.nu, dgrid, cfg.base_dir)
    atoms = cfgmod.build_atoms(cfg, model)
    pa = sol.solve_semidiscrete(atoms, nu, _solve_options(cfg))
    out_dir.mkdir(parents=True, exist_ok=True)
    info = _export_tiling(pa, model, out_dir,
                          set(cfg.output.formats) | {"json"})
    _write_summary(out_dir, {"problem": "export-tiling", "tiling": info,
                             "converged": bool(pa.state.converged)})
    return EXIT_OK if pa.state.converged else EXIT_NOT_CONVERGED


def cmd_report(out_dir: Path) -> int:
    path = out_dir / "summary.json"
    if not path.exists():
        print(f"no summary at {path}", file=sys.stderr)
        return EXIT_CONFIG
    summary = json.loads(path.read_text())
    for k in sorted(summary):
        print(f"{k}: {summary[k]}")
    log = out_dir / "convergence.jsonl"
    if log.exists():
        lines = log.read_text().splitlines()
        print(f"iterations logged: {len(lines)}")
        if lines:
            print(f"last: {lines[-1]}")
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="hma",
                                description="Monge-Ampere solves on compact "
                                            "Hessian manifolds")
    p.add_argument("verb",
                   choices=["run", "verify", "export-tiling", "report"])
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--radius", type=int)
    p.add_argument("--tol", type=float)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "report":
        return cmd_report(args.out)
    if args.config is None:
        print("--config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg.numeric.seed = args.seed
        if args.threads is not None:
            cfg.numeric.threads = args.threads
        if args.radius is not None:
            cfg.numeric.radius = args.radius
        if args.tol is not None:
            cfg.numeric.tol = args.tol
        out_dir = args.out
        if args.verb == "run":
            return cmd_run(cfg, out_dir)
        if args.verb == "verify":
            return cmd_verify(cfg, out_dir)
        return cmd_export_tiling(cfg, out_dir)
    except ConfigError as e:
        field = f" (field: {e.field})" if e.field else ""
        print(f"config error: {e}{field}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
