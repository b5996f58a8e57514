"""Probability measures on M and M*, pushforwards and the MA operator.

The nu-Monge-Ampere measure of a convex section is the pushforward of nu
under the gradient map, realized by histogram deposition at dual-node
resolution.  The weak (Alexandrov) formulation is what the binning
computes; no Jacobians appear, so grid, smooth and piecewise-affine
sections are all handled the same way.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import geometry as geo
from . import legendre as leg
from .errors import HessianMAError
from .geometry import Grid, HessianModel


@dataclasses.dataclass
class AtomicMeasure:
    """Finitely many weighted points on M (fundamental representatives)."""

    model: HessianModel
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree in length")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        pts, _ = geo.reduce_to_fundamental(self.model, pts)
        pts, w = _merge_close_atoms(self.model, pts, w)
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        self.points = pts
        self.weights = w

    def __len__(self):
        return len(self.weights)


def _merge_close_atoms(model, pts, w, tol=1e-9):
    """Merge atoms that coincide after reduction (min-image distance)."""
    k = len(w)
    frac = geo.primal_frac(model, pts)
    keep = []
    acc_w = []
    for i in range(k):
        merged = False
        for j, ki in enumerate(keep):
            d = np.abs(frac[i] - frac[ki])
            d = np.minimum(d, 1.0 - d)
            if np.max(d) < tol:
                acc_w[j] += w[i]
                merged = True
                break
        if not merged:
            keep.append(i)
            acc_w.append(w[i])
    return pts[keep], np.asarray(acc_w)


@dataclasses.dataclass
class GridDensity:
    """Nonnegative density on a fundamental grid, midpoint quadrature."""

    grid: Grid
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float).ravel()
        if d.shape != (self.grid.num_nodes,):
            raise ValueError("density has wrong size for the grid")
        if np.any(d < 0):
            raise ValueError("density must be nonnegative")
        total = float(d @ self.grid.cell_volumes)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"total mass {total} is not 1")
        self.density = d

    @property
    def masses(self):
        return self.density * self.grid.cell_volumes

    @property
    def model(self):
        return self.grid.model

    @classmethod
    def from_masses(cls, grid, masses):
        masses = np.asarray(masses, dtype=float).ravel()
        return cls(grid, masses / grid.cell_volumes)

    @classmethod
    def uniform(cls, grid):
        return cls(grid, np.full(grid.num_nodes, 1.0 / grid.total_volume))

    @classmethod
    def from_values(cls, grid, values):
        """Normalize raw nonnegative values into a probability density."""
        v = np.asarray(values, dtype=float).ravel()
        total = v @ grid.cell_volumes
        if total <= 0:
            raise ValueError("values must have positive total mass")
        return cls(grid, v / total)

    @classmethod
    def cosine(cls, grid, amplitude=0.5, mode=None):
        """1 + amplitude * cos(2 pi <mode, t>) in fractional coordinates."""
        if mode is None:
            mode = [1] * grid.dim
        mode = np.asarray(mode, dtype=float)
        if abs(amplitude) >= 1:
            raise ValueError("amplitude must keep the density positive")
        v = 1.0 + amplitude * np.cos(2.0 * np.pi * grid.frac @ mode)
        return cls.from_values(grid, v)

    @classmethod
    def gaussian(cls, grid, center=None, sigma=0.15):
        """Periodized Gaussian bump in fractional coordinates."""
        if center is None:
            center = np.full(grid.dim, 0.5)
        d = np.abs(grid.frac - np.asarray(center, dtype=float))
        d = np.minimum(d, 1.0 - d)
        v = np.exp(-0.5 * np.sum(d * d, axis=1) / sigma ** 2)
        return cls.from_values(grid, v)


def random_atoms(model, count, seed=0, random_weights=True):
    """Seeded atoms at uniform fractional positions."""
    rng = np.random.default_rng(seed)
    frac = rng.random((count, model.dim))
    pts = geo.frac_to_point(model, frac)
    if random_weights:
        w = rng.random(count) + 0.25
    else:
        w = np.ones(count)
    w = w / w.sum()
    return AtomicMeasure(model, pts, w)


# ---------------------------------------------------------------------------
# the nu-Monge-Ampere operator
# ---------------------------------------------------------------------------

def ma_measure(phi: leg.GridSection, nu: GridDensity, radius=None,
               refine=True, deposit="linear") -> GridDensity:
    """(T_phi)_* nu as a density on the primal grid.

    Each dual cell's mass lands at the gradient-map image of its node.
    ``deposit`` chooses multilinear spreading ("linear") or hard binning
    at the argmax node ("nearest"); both conserve mass exactly.
    """
    if nu.grid.side != "dual":
        raise ValueError("nu must live on a dual grid")
    frac, idx = leg.gradient_map_grid(phi, nu.grid, radius, refine=refine)
    if deposit == "linear":
        dep = phi.grid.deposit(frac, nu.masses)
    elif deposit == "nearest":
        dep = phi.grid.deposit_nearest(idx, nu.masses)
    else:
        raise ValueError(f"unknown deposit mode {deposit!r}")
    return GridDensity.from_masses(phi.grid, dep)


def semidiscrete_labels(model, atoms, potentials, nu_grid: Grid,
                        radius=None, need_words=False):
    """Argmax atom index at each dual node, ties to the lowest index.

    The rule matches gradient_map on the induced piecewise-affine section:
    node p belongs to atom i maximizing -psi_i - c(x_i, p), the affine
    branch of the conjugate section attaining the sup at p.
    """
    out = leg.cost_matrix(model, atoms, nu_grid.nodes, radius,
                          need_words=need_words)
    if need_words:
        C, words = out
    else:
        C = out
    scores = -np.asarray(potentials, dtype=float)[:, None] - C
    labels = np.argmax(scores, axis=0)
    if need_words:
        cols = np.arange(labels.shape[0])
        return labels, words[labels, cols]
    return labels


def cell_masses(model, atoms, potentials, nu: GridDensity, radius=None):
    labels = semidiscrete_labels(model, atoms, potentials, nu.grid, radius)
    k = len(potentials)
    return np.bincount(labels, weights=nu.masses, minlength=k)


def mass_of_cell(pa, i, nu: GridDensity, radius=None):
    """nu-measure of the cell of atom i of a piecewise-affine section."""
    masses = cell_masses(pa.model, pa.atoms, pa.potentials, nu,
                         radius if radius is not None else pa.radius)
    return float(masses[i])


# ---------------------------------------------------------------------------
# W1 diagnostics
# ---------------------------------------------------------------------------

def _w1_piecewise_linear(delta_edges, widths):
    """Integral of |F| for F piecewise linear with values delta_edges."""
    A = delta_edges[:-1]
    B = delta_edges[1:]
    same = A * B >= 0
    area_same = 0.5 * (np.abs(A) + np.abs(B)) * widths
    with np.errstate(divide="ignore", invalid="ignore"):
        area_cross = 0.5 * (A * A + B * B) / np.abs(B - A) * widths
    area_cross = np.where(np.abs(B - A) < 1e-300, area_same, area_cross)
    return float(np.sum(np.where(same, area_same, area_cross)))


def _axis_widths(grid: Grid, ax):
    N = grid.shape[ax]
    if grid.model.kind == "torus":
        return np.full(N, grid.model.periods[ax] / N)
    if grid.side == "primal":
        return np.full(N, 1.0 / N)
    edges = 2.0 ** (np.arange(N + 1) / N)
    return np.diff(edges)


def _w1_1d(m1, m2, widths):
    dm = m1 - m2
    cdf = np.concatenate([[0.0], np.cumsum(dm)])
    return _w1_piecewise_linear(cdf, widths)


def wasserstein1_grid(mu1: GridDensity, mu2: GridDensity) -> float:
    """W1 between two densities on the same grid.

    Exact in one dimension by the CDF-difference integral over the
    fundamental interval.  In higher dimension: marginal sweep along axis
    0 plus per-slice conditional distances, an upper-bound style estimate
    meant only for monotone convergence diagnostics.
    """
    if mu1.grid is not mu2.grid and mu1.grid.key() != mu2.grid.key():
        raise ValueError("measures must share a grid")
    grid = mu1.grid
    if grid.dim == 1:
        return _w1_1d(mu1.masses, mu2.masses, _axis_widths(grid, 0))
    m1 = mu1.masses.reshape(grid.shape)
    m2 = mu2.masses.reshape(grid.shape)
    w0 = _axis_widths(grid, 0)
    w1 = _axis_widths(grid, 1)
    if grid.dim != 2:
        raise HessianMAError("wasserstein1_grid supports dim <= 2")
    marg1 = m1.sum(axis=1)
    marg2 = m2.sum(axis=1)
    total = _w1_1d(marg1, marg2, w0)
    for i in range(grid.shape[0]):
        a, b = m1[i].sum(), m2[i].sum()
        if a <= 0 or b <= 0:
            continue
        total += min(a, b) * _w1_1d(m1[i] / a, m2[i] / b, w1)
    return total
