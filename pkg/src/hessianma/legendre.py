"""Generalized Legendre transform, pairing, cost and the gradient map.

The pairing [x, p] = sup_gamma (gamma.q)(x) over the deck group (q the
intercept-zero section of slope p) induces the cost

    c(x, p) = -[x, p] + phi0(x) + phi0*(p),

which is a genuine function on M x M*.  All transforms reduce to finite
maxima of -c(x, p) - u(x) over fundamental-domain grids, so the cost
matrix between a primal and a dual grid is the central cached object.
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict

import numpy as np

from . import geometry as geo
from .errors import TruncationSaturated
from .geometry import Grid, HessianModel, LOG2


# ---------------------------------------------------------------------------
# sections on grids
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class GridSection:
    """phi = phi0 + u with u sampled on a primal fundamental grid."""

    grid: Grid
    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        if self.grid.side != "primal":
            raise ValueError("GridSection lives on a primal grid")
        if self.u.shape != (self.grid.num_nodes,):
            raise ValueError("u has wrong size for the grid")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("section values must be finite")

    @property
    def model(self):
        return self.grid.model

    def phi_values(self):
        return self.u + geo.reference_potential(self.model, self.grid.nodes)

    def u_at(self, x):
        """Evaluate u at cover points (periodic interpolation)."""
        t = geo.primal_frac(self.model, np.atleast_2d(x))
        return self.grid.interpolate(self.u, t)

    def copy_with(self, u):
        return GridSection(self.grid, u)


@dataclasses.dataclass
class DualGridSection:
    """phi* = phi0* + w with w sampled on a dual fundamental grid."""

    grid: Grid
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).ravel()
        if self.grid.side != "dual":
            raise ValueError("DualGridSection lives on a dual grid")
        if self.w.shape != (self.grid.num_nodes,):
            raise ValueError("w has wrong size for the grid")

    @property
    def model(self):
        return self.grid.model

    def w_at(self, p):
        t = geo.dual_frac(self.model, np.atleast_2d(p))
        return self.grid.interpolate(self.w, t)


def zero_section(grid: Grid) -> GridSection:
    return GridSection(grid, np.zeros(grid.num_nodes))


# ---------------------------------------------------------------------------
# pairing and cost (scalar, generic group-word path)
# ---------------------------------------------------------------------------

def _resolve_radius(model, radius):
    return model.default_radius if radius is None else int(radius)


def pairing(model: HessianModel, x, p, radius=None, return_word=False):
    """[x, p]: truncated sup over deck words of the acted section at x.

    Raises TruncationSaturated when the argmax word sits on the shell of
    the truncation box, since the true sup may then lie outside it.
    """
    radius = _resolve_radius(model, radius)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = geo.AffineSection(np.atleast_1d(p), 0.0)
    vecs = geo.truncation_vectors(model, radius)
    best = -np.inf
    best_m = None
    for m in vecs:
        sec = geo.act_on_section(model, geo.vector_to_word(m), q)
        val = float(sec(x))
        if val > best:
            best = val
            best_m = m
    if np.max(np.abs(best_m)) >= radius:
        raise TruncationSaturated(
            "pairing argmax on the truncation shell; enlarge radius",
            word=geo.vector_to_word(best_m), radius=radius)
    if return_word:
        return best, geo.vector_to_word(best_m)
    return best


def cost_function(model: HessianModel, x, p, radius=None):
    """c(x, p) = -[x, p] + phi0(x) + phi0*(p); nonnegative, deck invariant.

    Deck invariance lets us reduce both arguments first, which keeps the
    truncated sup honest for points far out on the cover.
    """
    x, _ = geo.reduce_to_fundamental(model, np.atleast_1d(x))
    p, _ = geo.reduce_dual(model, np.atleast_1d(p))
    val = pairing(model, x, p, radius)
    return float(-val + geo.reference_potential(model, x)
                 + geo.reference_conjugate(model, p))


# ---------------------------------------------------------------------------
# vectorized cost matrices
# ---------------------------------------------------------------------------

def cost_matrix(model: HessianModel, X, P, radius=None, need_words=False):
    """Cost between batches of points and covectors.

    Parameters
    ----------
    X : (k, n) points in Omega (reduced internally).
    P : (m, n) covectors in the dual domain.
    need_words : also return the argmin deck exponent vectors (k, m, n).
    """
    radius = _resolve_radius(model, radius)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if model.kind == "torus":
        return _cost_matrix_torus(model, X, P, radius, need_words)
    return _cost_matrix_logbarrier(model, X, P, radius, need_words)


def _cost_matrix_torus_diagonal(model, xr, yr, need_words):
    """Separable per-axis minimum for diagonal Q (reduced inputs).

    With Q diagonal the lattice minimization splits per axis and the
    nearest-integer translate wins, so no translate scan is needed.
    """
    diag = np.diag(model.Q)
    n = model.dim
    C = np.zeros((xr.shape[0], yr.shape[0]))
    words = np.empty((xr.shape[0], yr.shape[0], n), dtype=np.int32) \
        if need_words else None
    for ax in range(n):
        L = model.periods[ax]
        d = xr[:, ax, None] - yr[None, :, ax]
        k = np.round(d / L)
        d -= k * L
        C += (0.5 * diag[ax]) * d * d
        if need_words:
            words[:, :, ax] = k.astype(np.int32)
    if need_words:
        return C, words
    return C


def _cost_matrix_torus(model, X, P, radius, need_words):
    # c(x, p) = min over lattice t of |x - Qinv p - t|_Q^2 / 2
    Q = model.Q
    xr, _ = geo.reduce_to_fundamental(model, X)
    y = geo.gradient_preimage(model, P)
    yr, _ = geo.reduce_to_fundamental(model, y)
    if np.allclose(Q, np.diag(np.diag(Q)), atol=0.0):
        return _cost_matrix_torus_diagonal(model, xr, yr, need_words)
    qx = geo.reference_potential(model, xr)
    vecs = geo.truncation_vectors(model, radius)
    best = None
    arg = None
    for i, m in enumerate(vecs):
        z = yr + m * model.periods
        qz = 0.5 * np.einsum("mi,ij,mj->m", z, Q, z)
        val = qx[:, None] + qz[None, :] - xr @ (Q @ z.T)
        if best is None:
            best = val
            arg = np.zeros(val.shape, dtype=np.int32)
        else:
            mask = val < best
            np.copyto(best, val, where=mask)
            arg[mask] = i
    if np.any(geo.on_truncation_shell(vecs[arg.ravel()], radius)):
        raise TruncationSaturated(
            "cost argmin on the truncation shell; enlarge radius",
            radius=radius)
    np.maximum(best, 0.0, out=best)   # clip -0.0 size rounding
    if need_words:
        return best, vecs[arg]
    return best


def _cost_matrix_logbarrier(model, X, P, radius, need_words):
    yr, _ = geo.reduce_to_fundamental(model, X)
    ar, _ = geo.reduce_dual(model, P)
    y = yr[:, 0]
    a = ar[:, 0]
    ms = np.arange(-radius, radius + 1)
    best = None
    arg = None
    prod = np.outer(y, -a)            # positive
    for i, m in enumerate(ms):
        val = (2.0 ** (-m)) * prod + m * LOG2
        if best is None:
            best = val
            arg = np.zeros(val.shape, dtype=np.int32)
        else:
            mask = val < best
            np.copyto(best, val, where=mask)
            arg[mask] = i
    if np.any(np.abs(ms[arg.ravel()]) >= radius):
        raise TruncationSaturated(
            "cost argmin on the truncation shell; enlarge radius",
            radius=radius)
    C = best - np.log(y)[:, None] - 1.0 - np.log(-a)[None, :]
    np.maximum(C, 0.0, out=C)
    if need_words:
        return C, ms[arg][:, :, None]
    return C


# cache of grid-to-grid cost matrices; a handful of big arrays at most
_COST_CACHE: OrderedDict = OrderedDict()
_COST_CACHE_MAX = 4


def grid_cost_matrix(pgrid: Grid, dgrid: Grid, radius=None) -> np.ndarray:
    model = pgrid.model
    radius = _resolve_radius(model, radius)
    key = (pgrid.key(), dgrid.key(), radius)
    if key in _COST_CACHE:
        _COST_CACHE.move_to_end(key)
        return _COST_CACHE[key]
    C = cost_matrix(model, pgrid.nodes, dgrid.nodes, radius)
    _COST_CACHE[key] = C
    while len(_COST_CACHE) > _COST_CACHE_MAX:
        _COST_CACHE.popitem(last=False)
    return C


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def legendre_transform(phi: GridSection, dual_shape=None, radius=None,
                       dgrid: Grid | None = None) -> DualGridSection:
    """(phi* - phi0*)(p) = max over grid nodes x of -c(x, p) - u(x).

    The max over M is exact on the grid; no subgrid refinement.
    """
    if dgrid is None:
        shape = phi.grid.shape if dual_shape is None else dual_shape
        dgrid = geo.dual_grid(phi.model, shape)
    C = grid_cost_matrix(phi.grid, dgrid, radius)
    w = np.max(-C - phi.u[:, None], axis=0)
    return DualGridSection(dgrid, w)


def inverse_transform(psi: DualGridSection, primal_shape=None, radius=None,
                      pgrid: Grid | None = None) -> GridSection:
    """(phi** - phi0)(x) = max over dual nodes p of -c(x, p) - w(p)."""
    if pgrid is None:
        shape = psi.grid.shape if primal_shape is None else primal_shape
        pgrid = geo.primal_grid(psi.model, shape)
    C = grid_cost_matrix(pgrid, psi.grid, radius)
    u = np.max(-C - psi.w[None, :], axis=1)
    return GridSection(pgrid, u)


def convexify(s: GridSection, radius=None) -> GridSection:
    """Double transform s**: the convexification projection (s** <= s)."""
    w = legendre_transform(s, radius=radius)
    return inverse_transform(w, radius=radius, pgrid=s.grid)


def is_grid_convex(phi: GridSection, tol=1e-9) -> bool:
    """Sampled midpoint-convexity of phi along the grid axes."""
    model = phi.model
    nodes = phi.grid.nodes
    pot = geo.reference_potential(model, nodes)
    vals = (phi.u + pot).reshape(phi.grid.shape)
    for ax in range(phi.grid.dim):
        N = phi.grid.shape[ax]
        if N < 3:
            continue
        step = np.zeros(model.dim)
        if model.kind == "torus":
            step[ax] = model.periods[ax] / N
            plus = nodes + step
            minus = nodes - step
        else:
            h = 1.0 / N
            plus = nodes + h
            minus = nodes - h
        phi_plus = (phi.u_at(plus)
                    + geo.reference_potential(model, plus)).reshape(phi.grid.shape)
        phi_minus = (phi.u_at(minus)
                     + geo.reference_potential(model, minus)).reshape(phi.grid.shape)
        second = phi_plus - 2.0 * vals + phi_minus
        if np.min(second) < -tol:
            return False
    return True


# ---------------------------------------------------------------------------
# gradient map
# ---------------------------------------------------------------------------

def _refined_frac(grid: Grid, flat_idx, F):
    """One quadratic refinement of argmax locations, in frac coordinates.

    F is the (num_primal, num_query) score matrix whose per-column argmax
    is flat_idx.  The refinement is separable per axis.
    """
    multi = np.array(np.unravel_index(flat_idx, grid.shape))  # (n, q)
    q = len(flat_idx)
    cols = np.arange(q)
    frac = np.empty((q, grid.dim))
    f0 = F[flat_idx, cols]
    for ax in range(grid.dim):
        N = grid.shape[ax]
        nodes = grid.axis_fracs[ax]
        if N < 3:
            frac[:, ax] = nodes[multi[ax]]
            continue
        up = multi.copy()
        up[ax] = (up[ax] + 1) % N
        dn = multi.copy()
        dn[ax] = (dn[ax] - 1) % N
        fp = F[np.ravel_multi_index(up, grid.shape), cols]
        fm = F[np.ravel_multi_index(dn, grid.shape), cols]
        denom = fm - 2.0 * f0 + fp
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = 0.5 * (fm - fp) / denom
        delta = np.where(np.abs(denom) < 1e-14, 0.0, delta)
        delta = np.clip(delta, -0.5, 0.5)
        i = multi[ax]
        t0 = nodes[i]
        gap_up = np.mod(nodes[(i + 1) % N] - t0, 1.0)
        gap_dn = np.mod(t0 - nodes[(i - 1) % N], 1.0)
        t = t0 + np.where(delta >= 0, delta * gap_up, delta * gap_dn)
        frac[:, ax] = np.mod(t, 1.0)
    return frac


def gradient_map_grid(phi: GridSection, dgrid: Grid, radius=None,
                      refine=True):
    """T_phi at every dual grid node.

    Returns (frac_positions, argmax_flat_indices).  Argmax ties resolve to
    the lowest lexicographic node, matching np.argmax on C-ordered grids.
    """
    C = grid_cost_matrix(phi.grid, dgrid, radius)
    F = -C - phi.u[:, None]
    idx = np.argmax(F, axis=0)
    if refine:
        frac = _refined_frac(phi.grid, idx, F)
    else:
        frac = phi.grid.frac[idx]
    return frac, idx


def gradient_map(phi: GridSection, p, radius=None, refine=True,
                 return_info=False):
    """T_phi(p): fundamental-domain point maximizing [x,p] - phi(x)."""
    model = phi.model
    P = np.atleast_2d(np.asarray(p, dtype=float))
    C = cost_matrix(model, phi.grid.nodes, P, radius)
    F = -C - phi.u[:, None]
    idx = np.argmax(F, axis=0)
    top = F[idx, np.arange(P.shape[0])]
    runner = np.partition(F, -2, axis=0)[-2, :] if F.shape[0] > 1 else top
    tie = np.abs(top - runner) <= 1e-12
    if refine:
        frac = _refined_frac(phi.grid, idx, F)
    else:
        frac = phi.grid.frac[idx]
    pts = geo.frac_to_point(model, frac)
    if np.asarray(p).ndim == 1:
        pts, idx, tie = pts[0], int(idx[0]), bool(tie[0])
    if return_info:
        return pts, idx, tie
    return pts


def legendre_variation_check(phi: GridSection, v, p, h=1e-4, radius=None):
    """First variation of the transform vs a centered finite difference.

    Returns (analytic, numeric) where analytic = -v(T_phi(p)) and numeric
    differences (phi + t v)*(p) at t = +-h.
    """
    v = np.asarray(v, dtype=float).ravel()
    model = phi.model
    P = np.atleast_2d(np.asarray(p, dtype=float))
    C = cost_matrix(model, phi.grid.nodes, P, radius)[:, 0]
    # analytic term via the refined argmax of -C - u
    F = (-C - phi.u)[:, None]
    idx = np.array([int(np.argmax(F[:, 0]))])
    frac = _refined_frac(phi.grid, idx, F)
    analytic = -float(phi.grid.interpolate(v, frac)[0])
    wp = np.max(-C - (phi.u + h * v))
    wm = np.max(-C - (phi.u - h * v))
    numeric = (wp - wm) / (2.0 * h)
    return analytic, numeric
