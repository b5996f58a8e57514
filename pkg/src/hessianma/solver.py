"""Minimization of the affine Kantorovich functional.

Two solvers: projected damped descent on grids for continuous data, and a
damped Newton iteration on the concave semi-discrete dual for atomic data.
Both keep their iterates inside the compact set given by the a priori
C0 and Lipschitz bounds, which are checked at every accepted step.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import geometry as geo
from . import legendre as leg
from . import measures as mea
from .errors import EmptyCell, NotConverged, NuDegenerate
from .geometry import HessianModel
from .legendre import GridSection
from .measures import AtomicMeasure, GridDensity


@dataclasses.dataclass
class SolveOptions:
    tol: float = 1e-5
    max_iters: int = 500
    radius: int | None = None
    nu_floor: float = 1e-12
    seed: int | None = None          # None: start from u = 0 / psi = 0
    init_amplitude: float = 0.01
    normalization: str = "MeanZeroAgainstMu"
    precond: str = "inverse_laplacian"   # or "jacobi"
    residual_oversample: int | None = None   # None: 8 in 1D, 2 in 2D
    armijo_c: float = 1e-4
    min_step: float = 1e-14
    raise_on_fail: bool = True


@dataclasses.dataclass
class KantorovichState:
    phi: object
    F_value: float
    grad_norm: float
    iteration: int
    normalization: str
    converged: bool = False
    estimates_ok: bool = True
    history: list = dataclasses.field(default_factory=list)
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# functional and gradient
# ---------------------------------------------------------------------------

def kantorovich_value(phi: GridSection, mu: GridDensity, nu: GridDensity,
                      radius=None) -> float:
    """F(phi) = int (phi - phi0) dmu + int (phi* - phi0*) dnu."""
    w = leg.legendre_transform(phi, radius=radius, dgrid=nu.grid)
    return float(phi.u @ mu.masses + w.w @ nu.masses)


def kantorovich_gradient(phi: GridSection, mu: GridDensity, nu: GridDensity,
                         radius=None, refine=False, deposit="nearest"):
    """Gateaux gradient of F against grid test functions: mu - (T_phi)_* nu.

    With the default hard binning this is the exact derivative of the
    discrete functional, which is what finite differences of
    kantorovich_value see.
    """
    push = mea.ma_measure(phi, nu, radius, refine=refine, deposit=deposit)
    return mu.density - push.density


def _normalize(u, mu: GridDensity, mode: str):
    if mode == "MeanZeroAgainstMu":
        return u - float(u @ mu.masses)
    if mode == "SupZero":
        return u - float(np.max(u))
    raise ValueError(f"unknown normalization {mode!r}")


def _jacobi_smooth(g, shape):
    """One Jacobi averaging pass with periodic neighbours."""
    a = np.asarray(g, dtype=float).reshape(shape)
    acc = a.copy()
    count = 1
    for ax in range(a.ndim):
        if shape[ax] < 2:
            continue
        acc = acc + np.roll(a, 1, axis=ax) + np.roll(a, -1, axis=ax)
        count += 2
    return (acc / count).ravel()


def _inv_laplacian(g, grid):
    """Periodic inverse Laplacian of a mean-zero grid function.

    The linearization of the pushforward residual around a smooth section
    is a Laplacian in u, so this acts as an approximate Newton
    preconditioner; the zero mode (constant gauge) is projected out.
    """
    shape = grid.shape
    a = np.asarray(g, dtype=float).reshape(shape)
    model = grid.model
    eig = np.zeros(shape)
    for ax, N in enumerate(shape):
        if model.kind == "torus":
            h = model.periods[ax] / N
        else:
            h = 1.0 / N
        k = np.arange(N)
        lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / N)) / h ** 2
        sh = [1] * len(shape)
        sh[ax] = N
        eig = eig + lam.reshape(sh)
    ghat = np.fft.fftn(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ghat = ghat / eig
    ghat.flat[0] = 0.0
    return np.real(np.fft.ifftn(ghat)).ravel()


def _precondition(g, grid, mode):
    if mode == "inverse_laplacian":
        return _inv_laplacian(g, grid)
    if mode == "jacobi":
        return _jacobi_smooth(g, grid.shape)
    raise ValueError(f"unknown preconditioner {mode!r}")


def _seeded_init(grid, amplitude, seed):
    """A small smooth random perturbation: a few low-frequency modes.

    Mode coefficients are damped by 1/|k|^2 so the second differences stay
    well below the reference Hessian and the start remains grid-convex.
    """
    rng = np.random.default_rng(seed)
    t = grid.frac
    u = np.zeros(grid.num_nodes)
    for _ in range(4):
        k = rng.integers(1, 4, size=grid.dim)
        phase = rng.random() * 2 * np.pi
        u += rng.normal() / float(k @ k) * np.cos(2 * np.pi * t @ k + phase)
    mx = np.max(np.abs(u))
    if mx <= 0:
        return u
    u *= amplitude / mx
    # keep u'' safely below the reference Hessian so the start is convex
    model = grid.model
    if model.kind == "torus":
        hess_floor = float(np.min(np.linalg.eigvalsh(model.Q)))
    else:
        hess_floor = 0.25
    curv = 0.0
    a = u.reshape(grid.shape)
    for ax, N in enumerate(grid.shape):
        h = (model.periods[ax] / N) if model.kind == "torus" else 1.0 / N
        dd = (np.roll(a, 1, ax) - 2.0 * a + np.roll(a, -1, ax)) / h ** 2
        curv += float(np.max(np.abs(dd)))
    if curv > 0.3 * hess_floor:
        u *= 0.3 * hess_floor / curv
    return u


# ---------------------------------------------------------------------------
# a priori estimates
# ---------------------------------------------------------------------------

def _doubled_box_corner_diffs(model: HessianModel):
    """Corner difference vectors of the doubled fundamental box."""
    if model.kind == "torus":
        span = 2.0 * model.periods
    else:
        span = np.array([3.0])      # [1,4) doubled via the group action
    sigmas = geo.truncation_vectors(model, 1)   # {-1,0,1}^n patterns
    return sigmas * span


def c0_bound(model: HessianModel) -> float:
    """C with |phi - phi0| <= C for SupZero-normalized convex sections.

    The segment integral of the reference Hessian over the doubled
    fundamental box: (diam_Q K)^2 / 2 for quadratic potentials, and the
    diameter times the sup of the Hessian for the log barrier.
    """
    diffs = _doubled_box_corner_diffs(model)
    if model.kind == "torus":
        vals = np.einsum("ki,ij,kj->k", diffs, model.Q, diffs)
        return 0.5 * float(np.max(vals))
    diam2 = float(np.max(diffs) ** 2)
    hess_sup = 1.0                   # sup of 1/y^2 on [1,4]
    return 0.5 * diam2 * hess_sup


def check_c0(phi: GridSection, slack=1e-9) -> bool:
    """Oscillation of u stays inside the a priori C0 box."""
    osc = float(np.max(phi.u) - np.min(phi.u))
    return osc <= c0_bound(phi.model) + slack


def lipschitz_bound(phi: GridSection) -> float:
    """sup u - inf u plus the reference-gradient spread over the doubled box."""
    model = phi.model
    diffs = _doubled_box_corner_diffs(model)
    if model.kind == "torus":
        grads = diffs @ model.Q
        c_ref = float(np.max(np.linalg.norm(grads, axis=1)))
    else:
        c_ref = 1.0 - 0.25           # osc of -1/y on [1,4]
    return float(np.max(phi.u) - np.min(phi.u)) + c_ref


def lipschitz_bound_check(phi: GridSection, slack=1e-9) -> bool:
    """Finite-difference Lipschitz constant of u against the bound."""
    model = phi.model
    u = phi.u.reshape(phi.grid.shape)
    lip = 0.0
    for ax in range(u.ndim):
        N = phi.grid.shape[ax]
        if model.kind == "torus":
            h = model.periods[ax] / N
            d = np.abs(np.roll(u, -1, axis=ax) - u) / h
        else:
            h = 1.0 / N
            d = np.abs(np.diff(u, axis=ax)) / h   # skip the doubling seam
        if d.size:
            lip = max(lip, float(np.max(d)))
    return lip <= lipschitz_bound(phi) + slack


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------

def _oversampled_nu(nu: GridDensity, factor: int) -> GridDensity:
    """Refine the dual quadrature of nu by a per-axis factor.

    The deposited pushforward density aliases badly where gradient-map
    images land sparser than one primal cell; sampling nu on a finer dual
    grid removes that floor without changing the measure.
    """
    if factor <= 1:
        return nu
    fine = geo.Grid(nu.grid.model, "dual",
                    tuple(factor * s for s in nu.grid.shape))
    vals = nu.grid.interpolate(nu.density, fine.frac)
    return GridDensity.from_values(fine, np.maximum(vals, 0.0))


def _project_convex(s, radius):
    """Convexification projection; identity on already convex sections.

    The discrete double transform perturbs even convex inputs at
    interpolation-error level, and that node-scale noise dominates the
    refined pushforward density, so it is skipped when nothing needs
    projecting.
    """
    if leg.is_grid_convex(s):
        return s
    return leg.convexify(s, radius)


def solve_grid(mu: GridDensity, nu: GridDensity, opts: SolveOptions | None = None,
               log=None) -> KantorovichState:
    """Projected damped descent for ma_nu(phi) = mu on a grid.

    Every step moves against the (smoothed) gradient density, projects
    back onto convex sections by the double Legendre transform, and is
    accepted only if F decreases (Armijo backtracking from step 1).
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    if float(np.min(nu.density)) < opts.nu_floor:
        raise NuDegenerate("nu density falls below the positivity floor")
    grid = mu.grid
    if nu.grid.side != "dual":
        raise ValueError("nu must live on a dual grid")
    radius = opts.radius

    if opts.seed is None:
        u = np.zeros(grid.num_nodes)
    else:
        u = _seeded_init(grid, opts.init_amplitude, opts.seed)
    phi = _project_convex(GridSection(grid, u), radius)
    phi.u = _normalize(phi.u, mu, opts.normalization)
    F = kantorovich_value(phi, mu, nu, radius)

    factor = opts.residual_oversample
    if factor is None:
        factor = 8 if grid.dim == 1 else 2
    nu_res = _oversampled_nu(nu, factor)

    state = KantorovichState(phi, F, np.inf, 0, opts.normalization)
    step = 1.0
    g_next = None
    for it in range(opts.max_iters):
        if g_next is None:
            push = mea.ma_measure(phi, nu_res, radius, refine=True,
                                  deposit="linear")
            g = mu.density - push.density
        else:
            g = g_next
        gsup = float(np.max(np.abs(g)))
        state.phi, state.F_value, state.grad_norm, state.iteration = \
            phi, F, gsup, it
        ok = check_c0(phi) and lipschitz_bound_check(phi)
        state.estimates_ok = state.estimates_ok and ok
        rec = {"iteration": it, "F": F, "grad_sup": gsup, "step": step}
        state.history.append(rec)
        if log is not None:
            log(rec)
        if gsup <= opts.tol:
            state.converged = True
            break
        d = _precondition(g, grid, opts.precond)
        slope = float((g * d) @ grid.cell_volumes)
        t = min(1.0, 4.0 * step)
        accepted = False
        g_next = None
        slack = 1e-8 * (1.0 + abs(F))
        while t > opts.min_step:
            u_try = _normalize(phi.u - t * d, mu, opts.normalization)
            phi_try = _project_convex(GridSection(grid, u_try), radius)
            phi_try.u = _normalize(phi_try.u, mu, opts.normalization)
            F_try = kantorovich_value(phi_try, mu, nu, radius)
            if F_try <= F - opts.armijo_c * t * slope:
                accepted = True
                break
            if F_try <= F + slack + t * slope:
                # the discrete functional can be exactly flat below the
                # node-gap scale; fall back to residual decrease
                push_try = mea.ma_measure(phi_try, nu_res, radius,
                                          refine=True, deposit="linear")
                g_try = mu.density - push_try.density
                if float(np.max(np.abs(g_try))) <= 0.9 * gsup:
                    accepted = True
                    g_next = g_try
                    break
            t *= 0.5
        if not accepted:
            break               # stalled at the floor of the discretization
        step = t
        phi, F = phi_try, F_try
    state.wall_time = time.perf_counter() - t0
    if not state.converged and opts.raise_on_fail:
        raise NotConverged(
            f"grid solver stalled at grad sup {state.grad_norm:.3e} "
            f"after {state.iteration + 1} iterations",
            diagnostics={"state": state})
    return state


# ---------------------------------------------------------------------------
# semi-discrete solver
# ---------------------------------------------------------------------------

def solve_semidiscrete(mu: AtomicMeasure, nu: GridDensity,
                       opts: SolveOptions | None = None, log=None):
    """Damped Newton ascent of the semi-discrete dual functional.

    Returns the induced piecewise-affine section; the iteration state is
    attached as ``.state``.  One dimension uses exact interval masses so
    the Newton limit is sharp; higher dimensions quadrate on the dual grid.
    """
    from .tiling import PiecewiseAffineSection

    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    model = mu.model
    if float(np.min(nu.density)) < opts.nu_floor:
        raise NuDegenerate("nu density falls below the positivity floor")
    radius = opts.radius if opts.radius is not None else model.default_radius

    lam = mu.weights
    n_atoms = len(lam)
    psi = np.zeros(n_atoms)
    exact_1d = model.dim == 1 and model.kind == "torus"
    helper = _Exact1D(model, mu, nu) if exact_1d \
        else _GridCells(model, mu, nu, radius)

    masses, J = helper.masses_and_objective(psi)
    state = KantorovichState(None, -J, np.inf, 0, "SupZero")
    tol_mass = opts.tol * float(np.min(lam))
    converged = False
    best = (np.inf, psi, masses, J)
    for it in range(opts.max_iters):
        resid = masses - lam
        rsup = float(np.max(np.abs(resid)))
        if rsup < best[0]:
            best = (rsup, psi.copy(), masses.copy(), J)
        state.F_value, state.grad_norm, state.iteration = -J, rsup, it
        rec = {"iteration": it, "J": J, "mass_residual": rsup}
        state.history.append(rec)
        if log is not None:
            log(rec)
        if rsup <= tol_mass:
            converged = True
            break
        H = helper.hessian(psi)
        H = H + (1e-8 * n_atoms) * np.eye(n_atoms)
        delta = np.linalg.solve(H, lam - masses)
        delta -= delta.mean()        # fix the constant gauge
        alpha = 1.0
        accepted = False
        while alpha > opts.min_step:
            try:
                m_try, J_try = helper.masses_and_objective(psi + alpha * delta)
            except EmptyCell:
                alpha *= 0.5
                continue
            if np.any((m_try <= 0) & (lam > 0)):
                alpha *= 0.5
                continue
            if J_try > J:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        psi = psi + alpha * delta
        psi -= psi[0]
        masses, J = m_try, J_try
    if not converged:
        # the dual grid quantizes masses; report the best iterate seen
        rsup, psi, masses, J = best
        state.F_value, state.grad_norm = -J, rsup
        converged = rsup <= tol_mass
    state.converged = converged
    state.wall_time = time.perf_counter() - t0
    # the Newton variable is the Kantorovich dual potential at the atoms;
    # the section stores its negative, the height of phi above phi0 there
    pa = PiecewiseAffineSection(model, mu.points, -psi,
                                radius=radius)
    pa.state = state
    if not converged and opts.raise_on_fail:
        raise NotConverged(
            f"semi-discrete solver: mass residual {state.grad_norm:.3e} "
            f"after {state.iteration + 1} iterations",
            diagnostics={"state": state, "pa": pa})
    return pa


class _GridCells:
    """Cell masses, dual objective and Hessian by dual-grid quadrature."""

    def __init__(self, model, mu, nu, radius):
        self.model = model
        self.mu = mu
        self.nu = nu
        self.radius = radius
        self.C, self.words = leg.cost_matrix(
            model, mu.points, nu.grid.nodes, radius, need_words=True)
        self._labels = None

    def masses_and_objective(self, psi):
        scores = psi[:, None] - self.C
        labels = np.argmax(scores, axis=0)
        self._labels = labels
        top = scores[labels, np.arange(scores.shape[1])]
        nu_m = self.nu.masses
        masses = np.bincount(labels, weights=nu_m, minlength=len(psi))
        J = float(self.mu.weights @ psi - top @ nu_m)
        return masses, J

    def hessian(self, psi):
        """partial m_i / partial psi_j assembled from cell interfaces.

        Interface terms: facet measure times density over the slope jump
        of the competing score branches.
        """
        model = self.model
        grid = self.nu.grid
        n = len(psi)
        if self._labels is None:
            self.masses_and_objective(psi)
        lab = self._labels.reshape(grid.shape)
        # lifted site of the active branch at each dual node, point coords
        pts, _ = geo.reduce_to_fundamental(model, self.mu.points)
        if model.kind == "torus":
            sites_all = pts[:, None, :] - \
                self.words * model.periods  # see cost argmin convention
        else:
            raise NotImplementedError("grid Hessian only for torus models")
        cols = np.arange(self._labels.shape[0])
        site = sites_all[self._labels, cols].reshape(grid.shape + (model.dim,))
        dens = self.nu.density.reshape(grid.shape)
        vols = self.nu.cell_volumes if hasattr(self.nu, "cell_volumes") \
            else None
        cellvol = grid.cell_volumes.reshape(grid.shape)
        H = np.zeros((n, n))
        DL = model.dual_lattice
        for ax in range(grid.dim):
            step = np.linalg.norm(DL[:, ax]) / grid.shape[ax]
            lab_n = np.roll(lab, -1, axis=ax)
            site_n = np.roll(site, -1, axis=ax)
            dens_n = np.roll(dens, -1, axis=ax)
            vol_n = np.roll(cellvol, -1, axis=ax)
            mask = lab != lab_n
            if not np.any(mask):
                continue
            a = lab[mask]
            b = lab_n[mask]
            jump = np.linalg.norm(site[mask] - site_n[mask], axis=-1)
            jump = np.maximum(jump, 1e-12)
            facet = 0.5 * (cellvol[mask] + vol_n[mask]) / step
            nu_bar = 0.5 * (dens[mask] + dens_n[mask])
            hij = nu_bar * facet / jump
            np.add.at(H, (a, b), -hij)
            np.add.at(H, (b, a), -hij)
            np.add.at(H, (a, a), hij)
            np.add.at(H, (b, b), hij)
        return H


class _Exact1D:
    """Exact cell masses on the circle from the nu CDF.

    Cells of circularly consecutive atoms meet at analytically known
    boundaries; masses and the dual objective integrate the piecewise
    constant density exactly, so Newton can reach machine precision.
    """

    def __init__(self, model, mu, nu):
        self.model = model
        self.q = float(model.Q[0, 0])
        self.period = float(model.periods[0])
        order = np.argsort(mu.points[:, 0], kind="stable")
        self.order = order
        self.x = mu.points[order, 0]
        self.lam = mu.weights[order]
        self.nu = nu
        # dual cells in y = a / q coordinate
        grid = nu.grid
        N = grid.num_nodes
        edges_frac = np.arange(N + 1) / N
        a_edges = geo.frac_to_dual(model, edges_frac[:, None])[:, 0]
        y_edges = a_edges / self.q
        self.y_lo = y_edges[0]
        m = nu.masses
        rho = m / np.diff(y_edges)          # density per unit y
        self.y_edges = y_edges
        self.rho = rho
        self.M0 = np.concatenate([[0.0], np.cumsum(m)])
        self.M1 = np.concatenate([[0.0],
                                  np.cumsum(rho * 0.5 *
                                            (y_edges[1:] ** 2 - y_edges[:-1] ** 2))])
        self.M2 = np.concatenate([[0.0],
                                  np.cumsum(rho / 3.0 *
                                            (y_edges[1:] ** 3 - y_edges[:-1] ** 3))])
        self.T1 = self.M1[-1]
        self.T2 = self.M2[-1]

    def _cum(self, y):
        """(M0, M1, M2) of nu on [y_lo, y] for y in the fundamental window."""
        j = np.clip(np.searchsorted(self.y_edges, y) - 1, 0,
                    len(self.rho) - 1)
        e = self.y_edges[j]
        r = self.rho[j]
        m0 = self.M0[j] + r * (y - e)
        m1 = self.M1[j] + r * 0.5 * (y * y - e * e)
        m2 = self.M2[j] + r / 3.0 * (y ** 3 - e ** 3)
        return m0, m1, m2

    def _moments_interval(self, a, b):
        """nu moments over a lifted interval [a, b], b - a <= period."""
        P = self.period
        out0 = out1 = out2 = 0.0
        # split [a,b] at period copies of the fundamental window
        k0 = np.floor((a - self.y_lo) / P)
        pos = a
        while pos < b - 1e-300:
            k = np.floor((pos - self.y_lo) / P + 1e-12)
            hi = self.y_lo + (k + 1) * P
            seg_end = min(b, hi)
            s = k * P                      # shift back to the window
            m0a, m1a, m2a = self._cum(pos - s)
            m0b, m1b, m2b = self._cum(seg_end - s)
            d0 = m0b - m0a
            d1 = (m1b - m1a) + s * d0
            d2 = (m2b - m2a) + 2 * s * (m1b - m1a) + s * s * d0
            out0 += d0
            out1 += d1
            out2 += d2
            if seg_end >= b:
                break
            pos = seg_end
        return out0, out1, out2

    def boundaries(self, psi_sorted):
        """Cell endpoints b_{i+1/2} between atom i and i+1 (cyclic lift)."""
        x = self.x
        P = self.period
        x_next = np.roll(x, -1)
        x_next[-1] += P
        gap = x_next - x
        mid = 0.5 * (x + x_next)
        psi_next = np.roll(psi_sorted, -1)
        b = mid + (psi_sorted - psi_next) / (self.q * gap)
        return b

    def masses_and_objective(self, psi):
        psi_s = psi[self.order]
        b = self.boundaries(psi_s)
        left = np.roll(b, 1)
        left[0] -= self.period
        if np.any(b - left <= 0):
            raise EmptyCell("cell ordering violated", atom=int(
                self.order[np.argmin(b - left)]))
        masses_s = np.empty(len(psi))
        J_transport = 0.0
        for i in range(len(psi)):
            m0, m1, m2 = self._moments_interval(left[i], b[i])
            masses_s[i] = m0
            xi = self.x[i]
            # int q (y - x_i)^2 / 2 dnu over the cell
            J_transport += 0.5 * self.q * (m2 - 2 * xi * m1 + xi * xi * m0)
        masses = np.empty_like(masses_s)
        masses[self.order] = masses_s
        J = float(self.lam @ psi_s - psi_s @ masses_s + J_transport)
        # J = sum lam psi + int min_i (c_i - psi_i) dnu
        return masses, J

    def hessian(self, psi):
        psi_s = psi[self.order]
        b = self.boundaries(psi_s)
        k = len(psi)
        x_next = np.roll(self.x, -1)
        x_next[-1] += self.period
        gap = x_next - self.x
        # density (per unit y) at each boundary, periodic lookup
        dens = np.empty(k)
        for i, y in enumerate(b):
            yy = self.y_lo + np.mod(y - self.y_lo, self.period)
            j = np.clip(np.searchsorted(self.y_edges, yy) - 1, 0,
                        len(self.rho) - 1)
            dens[i] = self.rho[j]
        dbd = 1.0 / (self.q * gap)      # d b_{i+1/2} / d psi_i = +dbd
        H = np.zeros((k, k))
        for i in range(k):
            j = (i + 1) % k
            h = dens[i] * dbd[i]
            a_, b_ = self.order[i], self.order[j]
            H[a_, a_] += h
            H[b_, b_] += h
            H[a_, b_] -= h
            H[b_, a_] -= h
        return H
