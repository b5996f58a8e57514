"""Piecewise-affine sections and their quasi-periodic cell structure.

A finite atom set x_i with scalars psi_i (the height of phi above phi0
at each atom) defines a section whose conjugate is the finite sup

    (phi* - phi0*)(p) = max over atoms i and deck words gamma of
                        -c(gamma.x_i, p) - psi_i,

piecewise affine with slopes in the atom orbit; phi itself is recovered
by conjugating back.  The affine pieces of the conjugate, pulled back
through dphi0, tile the cover by convex polytopes: the cell of atom i is
where the gradient map sends points to x_i.  This module evaluates such
sections, extracts the tiling over a window by half-plane clipping,
exports it, and quantizes grid solutions into atomic ones.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import geometry as geo
from . import legendre as leg
from . import measures as mea
from .errors import TruncationSaturated, UnsupportedDimension
from .geometry import HessianModel, LOG2


@dataclasses.dataclass
class PiecewiseAffineSection:
    """Atoms x_i and scalars psi_i = (phi - phi0)(x_i); the data behind phi."""

    model: HessianModel
    atoms: np.ndarray
    potentials: np.ndarray
    radius: int | None = None

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.potentials = np.asarray(self.potentials, dtype=float).ravel()
        if self.atoms.shape[0] != self.potentials.shape[0]:
            raise ValueError("atoms and potentials disagree in length")
        self.atoms, _ = geo.reduce_to_fundamental(self.model, self.atoms)
        if self.radius is None:
            self.radius = self.model.default_radius

    @property
    def dual_points(self):
        """p_i = dPhi0(x_i), the slopes tangent at the atoms."""
        return geo.reference_gradient(self.model, self.atoms)

    def conjugate_values(self, dgrid: geo.Grid):
        """w = phi* - phi0* at dual nodes: max_i of -c(x_i, p) - psi_i."""
        C = leg.cost_matrix(self.model, self.atoms, dgrid.nodes, self.radius)
        return np.max(-C - self.potentials[:, None], axis=0)

    def u_values(self, pgrid: geo.Grid, dgrid: geo.Grid | None = None):
        """u = phi - phi0 on a primal grid.

        phi is the conjugate of the piecewise-affine dual section, so it
        is evaluated as a double transform through a dual quadrature grid
        (same resolution as pgrid unless given); error is second order in
        the dual spacing.
        """
        if dgrid is None:
            dgrid = geo.dual_grid(self.model, pgrid.shape)
        w = self.conjugate_values(dgrid)
        C = leg.grid_cost_matrix(pgrid, dgrid, self.radius)
        return np.max(-C - w[None, :], axis=1)


def pa_evaluate(pa: PiecewiseAffineSection, x, return_tie=False, dgrid=None):
    """Evaluate phi at a cover point.

    The value is the conjugate of the piecewise-affine dual section,
    taken over a dual quadrature grid.  The returned atom index and word
    identify the cell of x: the affine branch (same family extract_tiling
    clips) attaining the max there, ties flagged and resolved to the
    lowest atom index.
    """
    model = pa.model
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xr, shift = geo.reduce_to_fundamental(model, x)
    kvec = geo.word_to_vector(model, shift)
    if dgrid is None:
        shape = 1024 if model.dim == 1 else (64,) * model.dim
        dgrid = geo.dual_grid(model, shape)
    w = pa.conjugate_values(dgrid)
    Cx = leg.cost_matrix(model, xr[None, :], dgrid.nodes, pa.radius)
    scores = -Cx[0] - w
    value = float(np.max(scores) + geo.reference_potential(model, x))
    branches = _enumerate_branches(pa, xr, xr, pa.radius)
    vals = np.array([s @ xr + o for _, _, s, o in branches])
    b = int(np.argmax(vals))
    i = branches[b][0]
    word_vec = np.asarray(branches[b][1]).ravel() + kvec
    tie = False
    if len(vals) > 1:
        runner = np.partition(vals, -2)[-2]
        tie = bool(vals[b] - runner <= 1e-12)
    out = (value, i, geo.vector_to_word(word_vec))
    if return_tie:
        return out + (tie,)
    return out


# ---------------------------------------------------------------------------
# affine branches
# ---------------------------------------------------------------------------

def _torus_branch(model, site, psi):
    """Conjugate-section branch of the lifted site, in window coordinates.

    The cell of a site is where [site, dphi0(x)] - phi0(site) - psi
    attains the max over sites; affine in x with slope Q site.
    """
    Qs = model.Q @ site
    return Qs, -psi - 0.5 * site @ Qs


def _logbarrier_branch(model, atom_y, m, psi):
    p = -1.0 / atom_y
    slope = p * 2.0 ** (-m)
    offset = -psi - m * LOG2 + 1.0 - np.log(atom_y)
    return np.array([slope]), float(offset)


def _enumerate_branches(pa: PiecewiseAffineSection, lo, hi, radius):
    """(atom, word, slope, offset) for all deck translates near the window."""
    model = pa.model
    branches = []
    vecs = geo.truncation_vectors(model, radius)
    if model.kind == "torus":
        margin = model.periods
        for i, (x, psi) in enumerate(zip(pa.atoms, pa.potentials)):
            for m in vecs:
                site = x + m * model.periods
                if np.any(site < lo - margin) or np.any(site > hi + margin):
                    continue
                s, o = _torus_branch(model, site, psi)
                branches.append((i, m.copy(), s, o))
    else:
        for i, (x, psi) in enumerate(zip(pa.atoms, pa.potentials)):
            y = float(x[0])
            for m in vecs[:, 0]:
                s, o = _logbarrier_branch(model, y, int(m), psi)
                branches.append((i, np.array([int(m)]), s, o))
    return branches


@dataclasses.dataclass
class Cell:
    atom: int
    word: list
    halfplanes: tuple          # (A, b) with A x <= b rows
    vertices: np.ndarray | None
    volume: float


@dataclasses.dataclass
class Tiling:
    model: HessianModel
    window: tuple              # (lo, hi)
    cells: list

    def total_volume(self):
        return float(sum(c.volume for c in self.cells))

    def validate(self, rel_tol=1e-6, vert_tol=1e-9):
        lo, hi = self.window
        wvol = float(np.prod(np.asarray(hi) - np.asarray(lo)))
        ok_cover = abs(self.total_volume() - wvol) <= rel_tol * wvol
        ok_convex = True
        for c in self.cells:
            if c.vertices is None:
                continue
            A, b = c.halfplanes
            slack = c.vertices @ np.asarray(A).T - np.asarray(b)[None, :]
            ok_convex = ok_convex and np.max(slack) <= vert_tol
        return ok_cover, ok_convex


def _clip_halfplane(poly, a, b, tol=1e-12):
    """Sutherland-Hodgman clip of a convex polygon by a.x <= b."""
    if len(poly) == 0:
        return poly
    vals = poly @ a - b
    inside = vals <= tol
    if np.all(inside):
        return poly
    if not np.any(inside):
        return poly[:0]
    out = []
    n = len(poly)
    for k in range(n):
        k2 = (k + 1) % n
        p1, p2 = poly[k], poly[k2]
        v1, v2 = vals[k], vals[k2]
        if inside[k]:
            out.append(p1)
        if inside[k] != inside[k2]:
            t = v1 / (v1 - v2)
            out.append(p1 + t * (p2 - p1))
    return np.asarray(out)


def _dedupe_vertices(poly, tol=1e-8):
    if len(poly) == 0:
        return poly
    keep = [poly[0]]
    for v in poly[1:]:
        if np.max(np.abs(v - keep[-1])) > tol:
            keep.append(v)
    if len(keep) > 1 and np.max(np.abs(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.asarray(keep)


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def extract_tiling(pa: PiecewiseAffineSection, window, radius=None,
                   min_volume=1e-12) -> Tiling:
    """Cells of the active affine branches over a window of the cover.

    Each cell is the intersection of half-planes {own branch >= other}
    clipped to the window; 1d uses interval intersection.  A cell of a
    branch on the truncation shell means the enumeration was too small,
    which raises TruncationSaturated.
    """
    model = pa.model
    if model.dim >= 3:
        raise UnsupportedDimension(
            "vertex extraction implemented for dim <= 2 only; "
            "use the half-plane data of pa branches directly")
    radius = pa.radius if radius is None else int(radius)
    lo = np.atleast_1d(np.asarray(window[0], dtype=float))
    hi = np.atleast_1d(np.asarray(window[1], dtype=float))
    branches = _enumerate_branches(pa, lo, hi, radius)
    slopes = np.array([b[2] for b in branches])
    offs = np.array([b[3] for b in branches])
    cells = []
    for k, (atom, word_vec, sk, ok_) in enumerate(branches):
        if model.dim == 1:
            cell = _cell_interval(k, slopes, offs, lo[0], hi[0])
        else:
            cell = _cell_polygon(k, slopes, offs, lo, hi)
        if cell is None:
            continue
        verts, volume, hps = cell
        if volume < min_volume:
            continue
        if np.max(np.abs(word_vec)) >= radius:
            raise TruncationSaturated(
                "active branch on the truncation shell; enlarge radius",
                word=geo.vector_to_word(word_vec), radius=radius)
        cells.append(Cell(atom, geo.vector_to_word(word_vec), hps, verts,
                          volume))
    return Tiling(model, (lo, hi), cells)


def _cell_interval(k, slopes, offs, lo, hi):
    a, b = lo, hi
    tight_lo, tight_hi = None, None
    for j in range(len(slopes)):
        if j == k:
            continue
        ds = slopes[k, 0] - slopes[j, 0]
        do = offs[j] - offs[k]
        if abs(ds) < 1e-14:
            if do > 0:        # other branch strictly dominates everywhere
                return None
            continue
        bound = do / ds
        if ds > 0:
            if bound > a:
                a, tight_lo = bound, j
        else:
            if bound < b:
                b, tight_hi = bound, j
        if a >= b:
            return None
    verts = np.array([[a], [b]])
    A = np.array([[-1.0], [1.0]])
    bb = np.array([-a, b])
    return verts, b - a, (A, bb)


def _cell_polygon(k, slopes, offs, lo, hi):
    poly = np.array([[lo[0], lo[1]], [hi[0], lo[1]],
                     [hi[0], hi[1]], [lo[0], hi[1]]])
    diff_s = slopes - slopes[k]
    diff_o = offs[k] - offs
    order = np.argsort(-np.linalg.norm(diff_s, axis=1))
    for j in order:
        if j == k:
            continue
        if len(poly) == 0:
            return None
        a = diff_s[j]
        if np.linalg.norm(a) < 1e-14:
            if diff_o[j] < 0:
                return None
            continue
        # skip constraints that cannot cut the current polygon
        if len(poly) and np.max(poly @ a - diff_o[j]) <= 0:
            continue
        poly = _clip_halfplane(poly, a, diff_o[j])
        if len(poly) == 0:
            return None
    poly = _dedupe_vertices(poly)
    area = _polygon_area(poly)
    if area <= 0:
        return None
    # keep the window bounds plus constraints tight on the polygon
    A_rows = [np.array([-1.0, 0.0]), np.array([1.0, 0.0]),
              np.array([0.0, -1.0]), np.array([0.0, 1.0])]
    b_rows = [-lo[0], hi[0], -lo[1], hi[1]]
    for j in range(len(slopes)):
        if j == k:
            continue
        a = diff_s[j]
        if np.linalg.norm(a) < 1e-14:
            continue
        slack = poly @ a - diff_o[j]
        if np.max(slack) >= -1e-9:
            A_rows.append(a)
            b_rows.append(diff_o[j])
    return poly, area, (np.asarray(A_rows), np.asarray(b_rows))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def tiling_to_json(tiling: Tiling) -> str:
    lo, hi = tiling.window
    payload = {
        "model": {"kind": tiling.model.kind, "dim": tiling.model.dim},
        "window": {"lo": list(map(float, lo)), "hi": list(map(float, hi))},
        "cells": [
            {
                "atom": int(c.atom),
                "word": list(map(int, c.word)),
                "halfplanes": {
                    "A": np.asarray(c.halfplanes[0]).tolist(),
                    "b": np.asarray(c.halfplanes[1]).tolist(),
                },
                "vertices": None if c.vertices is None
                else np.asarray(c.vertices).tolist(),
                "volume": float(c.volume),
            }
            for c in tiling.cells
        ],
    }
    return json.dumps(payload, indent=2)


_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
            "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]


def tiling_to_svg(tiling: Tiling, size=640) -> str:
    """2d tiling as SVG: cells colored by atom, boundaries stroked."""
    if tiling.model.dim != 2:
        raise UnsupportedDimension("SVG export is two dimensional")
    lo, hi = tiling.window
    span = np.asarray(hi) - np.asarray(lo)
    scale = size / float(np.max(span))
    w, h = span * scale

    def to_px(v):
        return ((v[0] - lo[0]) * scale, h - (v[1] - lo[1]) * scale)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{w:.0f}" height="{h:.0f}" '
             f'viewBox="0 0 {w:.2f} {h:.2f}">']
    for c in tiling.cells:
        if c.vertices is None or len(c.vertices) < 3:
            continue
        pts = " ".join(f"{px:.3f},{py:.3f}"
                       for px, py in (to_px(v) for v in c.vertices))
        color = _PALETTE[c.atom % len(_PALETTE)]
        parts.append(f'<polygon points="{pts}" fill="{color}" '
                     f'stroke="#222222" stroke-width="1.0"/>')
    # fundamental domain outline
    flo, fhi = tiling.model.fundamental_domain
    rect = [to_px(np.array(v)) for v in
            [(flo[0], flo[1]), (fhi[0], flo[1]), (fhi[0], fhi[1]),
             (flo[0], fhi[1])]]
    pts = " ".join(f"{px:.3f},{py:.3f}" for px, py in rect)
    parts.append(f'<polygon points="{pts}" fill="none" stroke="#000000" '
                 f'stroke-width="2.5" stroke-dasharray="6,4"/>')
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# quantization and piecewise-affine approximation
# ---------------------------------------------------------------------------

def quantize_density(mu: mea.GridDensity, n_atoms, seed=0, iters=200,
                     tol=1e-12) -> mea.AtomicMeasure:
    """Mass-weighted k-means of a grid density in fractional coordinates.

    One dimension initializes at CDF quantiles (deterministic); higher
    dimensions sample seeds from the density.  Distances are min-image
    periodic and centroids are circular means, so clusters may wrap.
    """
    grid = mu.grid
    model = grid.model
    t = grid.frac
    w = mu.masses
    rng = np.random.default_rng(seed)
    if n_atoms >= grid.num_nodes:
        raise ValueError("more atoms than grid nodes")
    if grid.dim == 1:
        cdf = np.cumsum(w)
        targets = (np.arange(n_atoms) + 0.5) / n_atoms
        idx = np.searchsorted(cdf, targets)
        centers = t[np.clip(idx, 0, len(t) - 1)].copy()
    else:
        idx = rng.choice(grid.num_nodes, size=n_atoms, replace=False,
                         p=w / w.sum())
        centers = t[idx].copy()
    for _ in range(iters):
        d = np.abs(t[:, None, :] - centers[None, :, :])
        d = np.minimum(d, 1.0 - d)
        assign = np.argmin(np.sum(d * d, axis=2), axis=1)
        new_centers = centers.copy()
        for j in range(n_atoms):
            mask = assign == j
            if not np.any(mask):
                continue
            ang = 2.0 * np.pi * t[mask]
            ww = w[mask][:, None]
            s = np.sum(ww * np.sin(ang), axis=0)
            c = np.sum(ww * np.cos(ang), axis=0)
            new_centers[j] = np.mod(np.arctan2(s, c) / (2.0 * np.pi), 1.0)
        shift = np.max(np.abs(new_centers - centers)) if n_atoms else 0.0
        centers = new_centers
        if shift < tol:
            break
    d = np.abs(t[:, None, :] - centers[None, :, :])
    d = np.minimum(d, 1.0 - d)
    assign = np.argmin(np.sum(d * d, axis=2), axis=1)
    weights = np.bincount(assign, weights=w, minlength=n_atoms)
    keep = weights > 0
    pts = geo.frac_to_point(model, centers[keep])
    return mea.AtomicMeasure(model, pts, weights[keep] / weights.sum())


def pa_approximate(phi: leg.GridSection, n_atoms, opts=None, nu=None,
                   seed=0, radius=None):
    """Piecewise-affine approximation of a convex grid section.

    Pushes forward the default uniform dual volume through phi, quantizes
    the image measure to ``n_atoms`` atoms, solves the semi-discrete
    problem, and records the sup-norm gap to phi as ``approx_error``.
    """
    from .solver import SolveOptions, solve_semidiscrete

    opts = opts or SolveOptions(tol=1e-9)
    if nu is None:
        nu = mea.GridDensity.uniform(geo.dual_grid(phi.model, phi.grid.shape))
    mu_img = mea.ma_measure(phi, nu, radius)
    atoms = quantize_density(mu_img, n_atoms, seed=seed)
    pa = solve_semidiscrete(atoms, nu, opts)
    u_pa = pa.u_values(phi.grid)
    du = u_pa - phi.u
    # sup-norm modulo constants: center the gap
    gap = du - 0.5 * (np.max(du) + np.min(du))
    pa.approx_error = float(np.max(np.abs(gap)))
    return pa
