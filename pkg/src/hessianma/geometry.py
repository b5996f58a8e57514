"""Compact Hessian manifolds presented on their universal cover.

A manifold M = Omega/Pi is described by a convex domain Omega in R^n, a
free affine action of a group Pi, and a convex reference potential whose
Hessian tensor is Pi-invariant.  Everything downstream works on the cover
in a fixed trivialization: an affine section is a (slope, intercept) pair
and the reference section q0 is the zero pair.

Two analytically known families are supported:

* ``torus``: Omega = R^n, Pi a diagonal lattice of translations,
  potential x.Qx/2 for a symmetric positive definite Q.
* ``log_barrier``: Omega = (0, inf), Pi generated by y -> 2y,
  potential -log y.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import HessianMAError

LOG2 = float(np.log(2.0))


def _as_array(x, n=None):
    a = np.asarray(x, dtype=float)
    if n is not None and a.shape[-1] != n:
        raise ValueError(f"expected last axis of length {n}, got {a.shape}")
    return a


@dataclasses.dataclass(frozen=True)
class AffineMap:
    """x -> linear @ x + translation."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.atleast_2d(np.asarray(self.linear, dtype=float))
        tr = np.atleast_1d(np.asarray(self.translation, dtype=float))
        if abs(np.linalg.det(lin)) <= 1e-12:
            raise ValueError("affine map is not invertible")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    def __call__(self, x):
        x = _as_array(x)
        return x @ self.linear.T + self.translation

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self after other."""
        return AffineMap(self.linear @ other.linear,
                         self.linear @ other.translation + self.translation)

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.translation)


@dataclasses.dataclass(frozen=True)
class AffineSection:
    """q = q0 + <slope, x> + intercept in the q0-trivialization."""

    slope: np.ndarray
    intercept: float

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.slope, dtype=float))
        if not np.all(np.isfinite(s)) or not np.isfinite(self.intercept):
            raise ValueError("section data must be finite")
        object.__setattr__(self, "slope", s)
        object.__setattr__(self, "intercept", float(self.intercept))

    def __call__(self, x):
        x = _as_array(x)
        return x @ self.slope + self.intercept


@dataclasses.dataclass(frozen=True)
class HessianModel:
    """A catalog manifold on its cover.

    ``kind`` is "torus" or "log_barrier".  For the torus, ``Q`` is the SPD
    potential matrix and ``periods`` the diagonal lattice; the fundamental
    domain is the box [0, periods).  For the log barrier the fundamental
    domain is [1, 2) and the single generator is y -> 2y.
    """

    kind: str
    dim: int
    Q: np.ndarray | None = None
    periods: np.ndarray | None = None
    default_radius: int = 3

    def __post_init__(self):
        if self.kind not in ("torus", "log_barrier"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "torus":
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            if Q.shape != (self.dim, self.dim):
                raise ValueError("Q has wrong shape")
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q must be symmetric")
            if np.linalg.eigvalsh(Q).min() <= 0:
                raise ValueError("Q must be positive definite")
            periods = np.atleast_1d(np.asarray(self.periods, dtype=float))
            if periods.shape != (self.dim,) or np.any(periods <= 0):
                raise ValueError("periods must be positive, one per axis")
            object.__setattr__(self, "Q", Q)
            object.__setattr__(self, "periods", periods)
        else:
            if self.dim != 1:
                raise ValueError("log_barrier model is one dimensional")

    # -- hashable identity for caches -------------------------------------
    def key(self):
        if self.kind == "torus":
            return ("torus", self.dim, self.Q.tobytes(), self.periods.tobytes(),
                    self.default_radius)
        return ("log_barrier", self.default_radius)

    @cached_property
    def Qinv(self):
        return np.linalg.inv(self.Q) if self.kind == "torus" else None

    @property
    def fundamental_domain(self):
        """(lo, hi) box in Omega coordinates."""
        if self.kind == "torus":
            return np.zeros(self.dim), self.periods.copy()
        return np.array([1.0]), np.array([2.0])

    @cached_property
    def generators(self):
        if self.kind == "torus":
            eye = np.eye(self.dim)
            return tuple(AffineMap(eye, self.periods[i] * eye[i])
                         for i in range(self.dim))
        return (AffineMap(np.array([[2.0]]), np.array([0.0])),)

    @cached_property
    def dual_lattice(self):
        """Columns generate the slope-coordinate lattice (torus only)."""
        return self.Q @ np.diag(self.periods)

    def contains(self, x):
        x = _as_array(x, self.dim)
        if self.kind == "torus":
            return np.ones(x.shape[:-1], dtype=bool)
        return x[..., 0] > 0

    def in_dual_domain(self, p):
        p = _as_array(p, self.dim)
        if self.kind == "torus":
            return np.ones(p.shape[:-1], dtype=bool)
        return p[..., 0] < 0


def torus(Q=None, periods=None, dim=None, radius=3) -> HessianModel:
    if Q is None and dim is None and periods is None:
        dim = 1
    if dim is None:
        dim = len(np.atleast_1d(periods)) if periods is not None \
            else np.atleast_2d(Q).shape[0]
    if Q is None:
        Q = np.eye(dim)
    if periods is None:
        periods = np.ones(dim)
    return HessianModel("torus", dim, Q=Q, periods=periods,
                        default_radius=radius)


def log_barrier(radius=8) -> HessianModel:
    return HessianModel("log_barrier", 1, default_radius=radius)


# ---------------------------------------------------------------------------
# group words
# ---------------------------------------------------------------------------

def word_to_vector(model: HessianModel, word: Sequence[int]) -> np.ndarray:
    """Collapse a generator word into an integer exponent vector.

    Entries of ``word`` are +-(i+1) for generator i; the catalog groups are
    abelian so the order never matters.
    """
    m = np.zeros(model.dim, dtype=int)
    for w in word:
        if w == 0 or abs(w) > model.dim:
            raise ValueError(f"bad word letter {w}")
        m[abs(w) - 1] += 1 if w > 0 else -1
    return m


def vector_to_word(m) -> list:
    word = []
    for i, k in enumerate(np.atleast_1d(np.asarray(m, dtype=int))):
        word.extend([int(np.sign(k)) * (i + 1)] * abs(int(k)))
    return word


def act_on_point(model: HessianModel, word, x):
    """Apply the deck transform of ``word`` to a point of the cover."""
    x = _as_array(x, model.dim)
    m = word_to_vector(model, word)
    if model.kind == "torus":
        out = x + m * model.periods
    else:
        out = x * 2.0 ** m[0]
    if not np.all(model.contains(out)):
        raise HessianMAError("group word maps point outside the domain")
    return out


def act_on_section(model: HessianModel, word, q: AffineSection) -> AffineSection:
    """gamma.q = q + Phi_q - Phi_q o gamma^{-1}, in the q0-trivialization.

    For the torus (translation by t = periods * m):
        slope a + Q t,  intercept b - t.Qt/2 - <a, t>.
    For the log barrier (y -> 2^m y):
        slope 2^{-m} a, intercept b - m log 2.
    """
    m = word_to_vector(model, word)
    a, b = q.slope, q.intercept
    if model.kind == "torus":
        t = m * model.periods
        Qt = model.Q @ t
        return AffineSection(a + Qt, b - 0.5 * t @ Qt - a @ t)
    k = int(m[0])
    return AffineSection(a * 2.0 ** (-k), b - k * LOG2)


def act_on_dual_point(model: HessianModel, word, p):
    """Induced action on slope coordinates of the dual manifold."""
    p = _as_array(p, model.dim)
    m = word_to_vector(model, word)
    if model.kind == "torus":
        return p + model.dual_lattice @ m
    return p * 2.0 ** (-int(m[0]))


def reduce_to_fundamental(model: HessianModel, x):
    """Orbit representative in the fundamental box, plus the word back to x.

    ``act_on_point(model, word, rep) == x``.  Boundary ties go to the
    lower-closed faces.
    """
    x = _as_array(x, model.dim)
    if not np.all(model.contains(x)):
        raise HessianMAError("point outside the domain")
    if model.kind == "torus":
        m = np.floor(x / model.periods).astype(int)
        rep = x - m * model.periods
        # guard against x exactly on the upper face after rounding
        hi = model.periods
        over = rep >= hi
        rep = np.where(over, rep - hi, rep)
        m = m + over.astype(int)
    else:
        m = np.floor(np.log2(x)).astype(int)
        rep = x * 2.0 ** (-m)
        over = rep >= 2.0
        rep = np.where(over, rep / 2.0, rep)
        m = m + over.astype(int)
        under = rep < 1.0
        rep = np.where(under, rep * 2.0, rep)
        m = m - under.astype(int)
    if x.ndim == 1:
        return rep, vector_to_word(m)
    return rep, m


def reduce_dual(model: HessianModel, p):
    """Dual-orbit representative of a slope coordinate, plus the word."""
    p = _as_array(p, model.dim)
    if not np.all(model.in_dual_domain(p)):
        raise HessianMAError("covector outside the dual domain")
    if model.kind == "torus":
        coeff = p @ np.linalg.inv(model.dual_lattice).T
        m = np.floor(coeff).astype(int)
        rep = p - m @ model.dual_lattice.T
    else:
        # representative a in (-2, -1], action a -> 2^{-m} a
        s = np.log2(-p)
        k = np.ceil(-s).astype(int)
        rep = p * 2.0 ** k
        over = rep <= -2.0
        rep = np.where(over, rep / 2.0, rep)
        k = k - over.astype(int)
        m = -k
    if p.ndim == 1:
        return rep, vector_to_word(m)
    return rep, m


# ---------------------------------------------------------------------------
# reference potential
# ---------------------------------------------------------------------------

def reference_potential(model: HessianModel, x):
    x = _as_array(x, model.dim)
    if model.kind == "torus":
        return 0.5 * np.einsum("...i,ij,...j->...", x, model.Q, x)
    return -np.log(x[..., 0])


def reference_gradient(model: HessianModel, x):
    x = _as_array(x, model.dim)
    if model.kind == "torus":
        return x @ model.Q
    return -1.0 / x


def reference_hessian(model: HessianModel, x):
    x = _as_array(x, model.dim)
    if model.kind == "torus":
        return np.broadcast_to(model.Q, x.shape[:-1] + model.Q.shape)
    return (1.0 / x[..., 0] ** 2)[..., None, None]


def reference_conjugate(model: HessianModel, p):
    """Closed-form Legendre conjugate of the reference potential."""
    p = _as_array(p, model.dim)
    if not np.all(model.in_dual_domain(p)):
        raise HessianMAError("covector outside the dual domain")
    if model.kind == "torus":
        return 0.5 * np.einsum("...i,ij,...j->...", p, model.Qinv, p)
    return -1.0 - np.log(-p[..., 0])


def gradient_image(model: HessianModel, x):
    """dPhi0(x) as a dual point (same as reference_gradient)."""
    return reference_gradient(model, x)


def gradient_preimage(model: HessianModel, p):
    """Inverse of dPhi0: the point whose reference gradient is p."""
    p = _as_array(p, model.dim)
    if model.kind == "torus":
        return p @ model.Qinv
    return -1.0 / p


# ---------------------------------------------------------------------------
# periodic (fractional) coordinates
# ---------------------------------------------------------------------------

def primal_frac(model: HessianModel, x):
    """Map a cover point to [0,1)^n coordinates on the fundamental torus."""
    x = _as_array(x, model.dim)
    if model.kind == "torus":
        return np.mod(x / model.periods, 1.0)
    return np.mod(np.log2(x), 1.0)


def frac_to_point(model: HessianModel, t):
    t = _as_array(t, model.dim)
    if model.kind == "torus":
        return t * model.periods
    return 2.0 ** t


def dual_frac(model: HessianModel, p):
    p = _as_array(p, model.dim)
    if model.kind == "torus":
        return np.mod(p @ np.linalg.inv(model.dual_lattice).T, 1.0)
    return np.mod(np.log2(-p), 1.0)


def frac_to_dual(model: HessianModel, t):
    t = _as_array(t, model.dim)
    if model.kind == "torus":
        return t @ model.dual_lattice.T
    return -(2.0 ** t)


# ---------------------------------------------------------------------------
# dual model descriptor
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class DualModel:
    """The quotient presentation of M* induced by act_on_section."""

    primal: HessianModel

    @property
    def dim(self):
        return self.primal.dim

    @cached_property
    def generators(self):
        m = self.primal
        if m.kind == "torus":
            eye = np.eye(m.dim)
            return tuple(AffineMap(eye, m.dual_lattice[:, i])
                         for i in range(m.dim))
        return (AffineMap(np.array([[0.5]]), np.array([0.0])),)

    @property
    def fundamental_domain(self):
        m = self.primal
        if m.kind == "torus":
            lo = np.zeros(m.dim)
            return lo, m.dual_lattice.copy()   # parallelepiped basis
        return np.array([-2.0]), np.array([-1.0])


def dual_model(model: HessianModel) -> DualModel:
    return DualModel(model)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Grid:
    """A product grid of cell midpoints over a fundamental domain.

    ``side`` selects the primal fundamental box or the dual one.  Nodes are
    stored both in their natural coordinates and in fractional coordinates
    t in [0,1)^n, where all periodic bookkeeping happens.
    """

    model: HessianModel
    side: str
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.side not in ("primal", "dual"):
            raise ValueError("side must be 'primal' or 'dual'")
        if len(self.shape) != self.model.dim:
            raise ValueError("grid shape rank must match model dimension")

    def key(self):
        return (self.model.key(), self.side, self.shape)

    @property
    def dim(self):
        return self.model.dim

    @property
    def num_nodes(self):
        return int(np.prod(self.shape))

    @cached_property
    def axis_fracs(self):
        """Per-axis sorted node positions in fractional coordinates."""
        out = []
        for ax, N in enumerate(self.shape):
            t = (np.arange(N) + 0.5) / N
            if self.model.kind == "log_barrier" and self.side == "primal":
                # nodes uniform in y on [1,2); frac = log2(y)
                y = 1.0 + t
                out.append(np.log2(y))
            else:
                out.append(t)
        return tuple(out)

    @cached_property
    def frac(self):
        """(num_nodes, n) fractional coordinates, C order."""
        mesh = np.meshgrid(*self.axis_fracs, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def nodes(self):
        """(num_nodes, n) node coordinates (points or covectors)."""
        if self.side == "primal":
            return frac_to_point(self.model, self.frac)
        return frac_to_dual(self.model, self.frac)

    @cached_property
    def cell_volumes(self):
        m = self.model
        M = self.num_nodes
        if m.kind == "torus":
            if self.side == "primal":
                vol = float(np.prod(m.periods))
            else:
                vol = abs(np.linalg.det(m.dual_lattice))
            return np.full(M, vol / M)
        N = self.shape[0]
        if self.side == "primal":
            return np.full(M, 1.0 / N)
        # dual: cells in a-coordinate between edges -2^{(j+1)/N} and -2^{j/N}
        edges = 2.0 ** (np.arange(N + 1) / N)
        return np.diff(edges)

    @cached_property
    def total_volume(self):
        return float(self.cell_volumes.sum())

    # -- periodic interpolation / deposition ------------------------------

    def _axis_locate(self, ax, t):
        """Bracketing indices and weights for frac queries along one axis.

        Returns (i0, i1, w) with node(i0) <= t < node(i1) cyclically and
        w the weight of node i1.
        """
        nodes = self.axis_fracs[ax]
        N = len(nodes)
        t = np.mod(t, 1.0)
        j = np.searchsorted(nodes, t)         # nodes[j-1] <= t < nodes[j]
        i1 = np.mod(j, N)
        i0 = np.mod(j - 1, N)
        lo = nodes[i0]
        hi = nodes[i1]
        gap = np.mod(hi - lo, 1.0)
        gap = np.where(gap == 0.0, 1.0, gap)
        w = np.mod(t - lo, 1.0) / gap
        return i0, i1, np.clip(w, 0.0, 1.0)

    def interpolate(self, values, frac_pts):
        """Periodic multilinear interpolation at fractional coordinates."""
        v = np.asarray(values, dtype=float).reshape(self.shape)
        pts = np.atleast_2d(np.asarray(frac_pts, dtype=float))
        k = pts.shape[0]
        locs = [self._axis_locate(ax, pts[:, ax]) for ax in range(self.dim)]
        out = np.zeros(k)
        for corner in range(2 ** self.dim):
            idx = []
            w = np.ones(k)
            for ax in range(self.dim):
                i0, i1, wa = locs[ax]
                if corner >> ax & 1:
                    idx.append(i1)
                    w = w * wa
                else:
                    idx.append(i0)
                    w = w * (1.0 - wa)
            out += w * v[tuple(idx)]
        return out

    def deposit(self, frac_pts, masses):
        """Scatter point masses onto the grid with multilinear weights.

        Conserves total mass exactly; accumulation order is fixed, so the
        result is deterministic.
        """
        pts = np.atleast_2d(np.asarray(frac_pts, dtype=float))
        masses = np.asarray(masses, dtype=float)
        out = np.zeros(self.shape)
        locs = [self._axis_locate(ax, pts[:, ax]) for ax in range(self.dim)]
        for corner in range(2 ** self.dim):
            idx = []
            w = np.ones(len(masses))
            for ax in range(self.dim):
                i0, i1, wa = locs[ax]
                if corner >> ax & 1:
                    idx.append(i1)
                    w = w * wa
                else:
                    idx.append(i0)
                    w = w * (1.0 - wa)
            np.add.at(out, tuple(idx), w * masses)
        return out.ravel()

    def deposit_nearest(self, node_indices, masses):
        """Accumulate masses at given flat node indices (hard binning)."""
        out = np.zeros(self.num_nodes)
        np.add.at(out, np.asarray(node_indices, dtype=int), np.asarray(masses))
        return out


def primal_grid(model: HessianModel, shape) -> Grid:
    if np.isscalar(shape):
        shape = (shape,) * model.dim
    return Grid(model, "primal", tuple(shape))


def dual_grid(model: HessianModel, shape) -> Grid:
    if np.isscalar(shape):
        shape = (shape,) * model.dim
    return Grid(model, "dual", tuple(shape))


# ---------------------------------------------------------------------------
# lattice enumeration for truncated sups over Pi
# ---------------------------------------------------------------------------

def truncation_vectors(model: HessianModel, radius: int) -> np.ndarray:
    """All exponent vectors with max |m_i| <= radius, lexicographic order."""
    r = int(radius)
    ax = np.arange(-r, r + 1)
    mesh = np.meshgrid(*([ax] * model.dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def on_truncation_shell(m, radius: int):
    m = np.atleast_2d(np.asarray(m, dtype=int))
    return np.max(np.abs(m), axis=-1) >= int(radius)


# ---------------------------------------------------------------------------
# model self-checks (used by the CLI verify verb and the tests)
# ---------------------------------------------------------------------------

def verify_model(model: HessianModel, n_samples=64, seed=0):
    """Numerical checks of the model invariants.

    Returns a list of (name, passed, slack) tuples.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.fundamental_domain
    xs = lo + (hi - lo) * rng.random((n_samples, model.dim))
    results = []

    # generators are bijections of the domain
    slack = 0.0
    ok = True
    for g in model.generators:
        back = g.inverse()(g(xs))
        slack = max(slack, float(np.max(np.abs(back - xs))))
        ok = ok and np.all(model.contains(g(xs)))
    results.append(("generator_bijective", ok and slack < 1e-12, slack))

    # Hessian tensor invariance: A^T H(gamma x) A == H(x)
    slack = 0.0
    for g in model.generators:
        H0 = reference_hessian(model, xs)
        H1 = reference_hessian(model, g(xs))
        pulled = np.einsum("ai,...ij,jb->...ab", g.linear.T, H1, g.linear)
        slack = max(slack, float(np.max(np.abs(pulled - H0))))
    results.append(("hessian_invariant", slack < 1e-10, slack))

    # fundamental domain tiles: reduce is a left inverse of the word action
    slack = 0.0
    words_ok = True
    shift = rng.integers(-2, 3, size=(n_samples, model.dim))
    moved = np.stack([act_on_point(model, vector_to_word(m), x)
                      for m, x in zip(shift, xs)])
    for x in moved:
        rep, word = reduce_to_fundamental(model, x)
        inside = np.all(rep >= lo - 1e-9) and np.all(rep < hi + 1e-9)
        words_ok = words_ok and inside
        back = act_on_point(model, word, rep)
        slack = max(slack, float(np.max(np.abs(back - x))))
    results.append(("fundamental_tiles", words_ok and slack < 1e-12, slack))

    # Fenchel-Young identity of the reference data
    g = reference_gradient(model, xs)
    fy = reference_potential(model, xs) + reference_conjugate(model, g) \
        - np.einsum("...i,...i->...", g, xs)
    slack = float(np.max(np.abs(fy)))
    results.append(("reference_fenchel_young", slack < 1e-12, slack))
    return results
