"""TOML run configuration: parsing, validation and object construction."""

from __future__ import annotations

import dataclasses
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:        # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import geometry as geo
from . import measures as mea
from .arrayio import read_array
from .errors import ConfigError

PROBLEM_KINDS = ("monge_ampere", "einstein", "semidiscrete", "approximate")
MEASURE_KINDS = ("uniform", "cosine", "gaussian", "file")


@dataclasses.dataclass
class ModelConfig:
    kind: str = "torus"
    dim: int = 1
    Q: list | None = None
    periods: list | None = None
    radius: int | None = None


@dataclasses.dataclass
class MeasureConfig:
    kind: str = "uniform"
    amplitude: float = 0.5
    mode: list | None = None
    center: list | None = None
    sigma: float = 0.15
    path: str | None = None      # kind = "file": binary density array


@dataclasses.dataclass
class ProblemConfig:
    kind: str = "monge_ampere"
    lam: float | None = None
    atoms: list | None = None            # explicit points
    atom_weights: list | None = None
    atom_count: int | None = None        # seeded random atoms
    atom_counts: list | None = None      # kind = "approximate" sweep


@dataclasses.dataclass
class NumericConfig:
    grid: list = dataclasses.field(default_factory=lambda: [64])
    dual_grid: list | None = None
    radius: int | None = None
    tol: float = 1e-5
    max_iters: int = 500
    seed: int | None = None
    threads: int | None = None


@dataclasses.dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = dataclasses.field(default_factory=lambda: ["json"])


@dataclasses.dataclass
class RunConfig:
    model: ModelConfig
    mu: MeasureConfig
    nu: MeasureConfig
    problem: ProblemConfig
    numeric: NumericConfig
    output: OutputConfig
    base_dir: Path = Path(".")


def _section(data, name, cls):
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"section [{name}] must be a table", field=name)
    fields = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for k, v in raw.items():
        key = "lam" if (name == "problem" and k == "lambda") else k
        if key not in fields:
            raise ConfigError(f"unknown key {k!r} in [{name}]",
                              field=f"{name}.{k}")
        out[key] = v
    return cls(**out)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}", field="<file>")
    cfg = RunConfig(
        model=_section(data, "model", ModelConfig),
        mu=_section(data, "mu", MeasureConfig),
        nu=_section(data, "nu", MeasureConfig),
        problem=_section(data, "problem", ProblemConfig),
        numeric=_section(data, "numeric", NumericConfig),
        output=_section(data, "output", OutputConfig),
        base_dir=path.parent,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    m, p, n = cfg.model, cfg.problem, cfg.numeric
    if m.kind not in ("torus", "log_barrier"):
        raise ConfigError(f"unknown model kind {m.kind!r}", field="model.kind")
    if m.kind == "log_barrier" and m.dim != 1:
        raise ConfigError("log_barrier is one-dimensional", field="model.dim")
    if m.dim < 1:
        raise ConfigError("dimension must be positive", field="model.dim")
    if p.kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {p.kind!r}",
                          field="problem.kind")
    if p.lam is not None and p.kind != "einstein":
        raise ConfigError("lambda is only meaningful for einstein problems",
                          field="problem.lambda")
    if p.kind == "einstein" and p.lam is None:
        raise ConfigError("einstein problems need lambda",
                          field="problem.lambda")
    has_atoms = p.atoms is not None or p.atom_count is not None
    if has_atoms and p.kind not in ("semidiscrete", "approximate"):
        raise ConfigError(
            "atoms belong to semidiscrete/approximate problems only",
            field="problem.atoms")
    if p.kind == "semidiscrete" and not has_atoms:
        raise ConfigError("semidiscrete problems need atoms or atom_count",
                          field="problem.atoms")
    if p.atom_weights is not None and p.atoms is None:
        raise ConfigError("atom_weights without atoms",
                          field="problem.atom_weights")
    if len(n.grid) != m.dim:
        raise ConfigError("grid shape rank must match model dimension",
                          field="numeric.grid")
    if n.dual_grid is not None and len(n.dual_grid) != m.dim:
        raise ConfigError("dual grid shape rank must match model dimension",
                          field="numeric.dual_grid")
    if n.tol <= 0:
        raise ConfigError("tolerance must be positive", field="numeric.tol")
    for mc, name in ((cfg.mu, "mu"), (cfg.nu, "nu")):
        if mc.kind not in MEASURE_KINDS:
            raise ConfigError(f"unknown measure kind {mc.kind!r}",
                              field=f"{name}.kind")
        if mc.kind == "file" and not mc.path:
            raise ConfigError("file measures need a path",
                              field=f"{name}.path")


def build_model(cfg: RunConfig) -> geo.HessianModel:
    m = cfg.model
    if m.kind == "log_barrier":
        kw = {}
        if m.radius is not None:
            kw["radius"] = m.radius
        return geo.log_barrier(**kw)
    Q = np.asarray(m.Q, dtype=float) if m.Q is not None else None
    if Q is not None and Q.ndim == 1:
        Q = np.diag(Q)
    kw = dict(dim=m.dim)
    if Q is not None:
        kw["Q"] = Q
    if m.periods is not None:
        kw["periods"] = np.asarray(m.periods, dtype=float)
    if m.radius is not None:
        kw["radius"] = m.radius
    return geo.torus(**kw)


def build_density(mc: MeasureConfig, grid: geo.Grid,
                  base_dir: Path) -> mea.GridDensity:
    if mc.kind == "uniform":
        return mea.GridDensity.uniform(grid)
    if mc.kind == "cosine":
        return mea.GridDensity.cosine(grid, mc.amplitude, mc.mode)
    if mc.kind == "gaussian":
        return mea.GridDensity.gaussian(grid, mc.center, mc.sigma)
    vals = read_array(base_dir / mc.path)
    return mea.GridDensity.from_values(grid, vals)


def build_atoms(cfg: RunConfig, model) -> mea.AtomicMeasure:
    p = cfg.problem
    if p.atoms is not None:
        pts = np.asarray(p.atoms, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if p.atom_weights is not None:
            w = np.asarray(p.atom_weights, dtype=float)
        else:
            w = np.full(len(pts), 1.0 / len(pts))
        return mea.AtomicMeasure(model, pts, w)
    seed = cfg.numeric.seed if cfg.numeric.seed is not None else 0
    return mea.random_atoms(model, p.atom_count, seed=seed)


def grids(cfg: RunConfig, model):
    pshape = tuple(int(s) for s in cfg.numeric.grid)
    dshape = tuple(int(s) for s in (cfg.numeric.dual_grid or cfg.numeric.grid))
    return geo.Grid(model, "primal", pshape), geo.Grid(model, "dual", dshape)
