"""The Ding and Mabuchi functionals and the Einstein-Hessian equation.

Solves ma_nu(phi) = e^{-lambda (phi - phi0)} mu0 (suitably normalized) by
projected damped descent on the Ding functional.  Everything is a small
variation on the Kantorovich machinery: the fixed target mu is replaced
by a Gibbs density that follows the current iterate.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import legendre as leg
from . import measures as mea
from . import solver as sol
from .errors import EntropyInfinite, NotConverged, NuDegenerate, OverflowGuard
from .legendre import GridSection
from .measures import GridDensity


@dataclasses.dataclass
class EinsteinProblem:
    """Data (nu, mu0, lambda) for the Einstein-Hessian equation."""

    nu: GridDensity
    mu0: GridDensity
    lam: float

    def __post_init__(self):
        if self.nu.grid.side != "dual":
            raise ValueError("nu must live on a dual grid")
        if self.mu0.grid.side != "primal":
            raise ValueError("mu0 must live on a primal grid")
        if not np.isfinite(self.lam):
            raise ValueError("lambda must be finite")

    @property
    def model(self):
        return self.mu0.grid.model


def _guard_exponent(lam, u):
    osc = float(np.max(u) - np.min(u))
    if abs(lam) * osc > 500.0:
        raise OverflowGuard(
            f"lambda * osc(u) = {abs(lam) * osc:.3g} exceeds the "
            "double-precision safety bound 500")


def gibbs_density(phi: GridSection, prob: EinsteinProblem) -> GridDensity:
    """e^{-lambda u} mu0 normalized to a probability density."""
    _guard_exponent(prob.lam, phi.u)
    e = -prob.lam * phi.u
    e -= np.max(e)              # stabilize before exponentiating
    vals = np.exp(e) * prob.mu0.density
    return GridDensity.from_values(phi.grid, vals)


def ding_value(phi: GridSection, prob: EinsteinProblem, radius=None) -> float:
    """D(phi) = int (phi* - phi0*) dnu - (1/lambda) log int e^{-lambda u} dmu0.

    Invariant under phi -> phi + C; lambda = 0 is the Kantorovich
    functional with data (mu0, nu).
    """
    if prob.lam == 0.0:
        return sol.kantorovich_value(phi, prob.mu0, prob.nu, radius)
    _guard_exponent(prob.lam, phi.u)
    w = leg.legendre_transform(phi, radius=radius, dgrid=prob.nu.grid)
    first = float(w.w @ prob.nu.masses)
    e = -prob.lam * phi.u
    shift = float(np.max(e))
    logZ = shift + float(np.log(np.exp(e - shift) @ prob.mu0.masses))
    return first - logZ / prob.lam


def ding_gradient(phi: GridSection, prob: EinsteinProblem, radius=None,
                  refine=False, deposit="nearest"):
    """Signed density of dD at phi: normalized Gibbs term minus ma_nu(phi)."""
    gibbs = gibbs_density(phi, prob)
    push = mea.ma_measure(phi, prob.nu, radius, refine=refine, deposit=deposit)
    return gibbs.density - push.density


def solve_einstein(prob: EinsteinProblem, opts: sol.SolveOptions | None = None,
                   log=None) -> sol.KantorovichState:
    """Projected damped descent on the Ding functional.

    Identical to the grid Kantorovich descent except that the target
    density is re-evaluated from the current iterate.  For lambda < 0 the
    minimizer is unique modulo constants; for lambda > 0 whatever
    minimizer is found is returned without a uniqueness claim.
    """
    opts = opts or sol.SolveOptions()
    t0 = time.perf_counter()
    grid = prob.mu0.grid
    if float(np.min(prob.nu.density)) < opts.nu_floor:
        raise NuDegenerate("nu density falls below the positivity floor")
    radius = opts.radius

    if opts.seed is None:
        u = np.zeros(grid.num_nodes)
    else:
        u = sol._seeded_init(grid, opts.init_amplitude, opts.seed)
    phi = sol._project_convex(GridSection(grid, u), radius)
    phi.u = sol._normalize(phi.u, prob.mu0, opts.normalization)
    D = ding_value(phi, prob, radius)

    factor = opts.residual_oversample
    if factor is None:
        factor = 8 if grid.dim == 1 else 2
    nu_res = sol._oversampled_nu(prob.nu, factor)

    state = sol.KantorovichState(phi, D, np.inf, 0, opts.normalization)
    step = 1.0
    g_next = None
    for it in range(opts.max_iters):
        gibbs = gibbs_density(phi, prob)
        if g_next is None:
            push = mea.ma_measure(phi, nu_res, radius, refine=True,
                                  deposit="linear")
            g = gibbs.density - push.density
        else:
            g = g_next
        gsup = float(np.max(np.abs(g)))
        state.phi, state.F_value, state.grad_norm, state.iteration = \
            phi, D, gsup, it
        ok = sol.check_c0(phi) and sol.lipschitz_bound_check(phi)
        state.estimates_ok = state.estimates_ok and ok
        rec = {"iteration": it, "D": D, "grad_sup": gsup, "step": step,
               "exp_term": float(gibbs.density @ grid.cell_volumes)}
        state.history.append(rec)
        if log is not None:
            log(rec)
        if gsup <= opts.tol:
            state.converged = True
            break
        d = sol._precondition(g, grid, opts.precond)
        slope = float((g * d) @ grid.cell_volumes)
        t = min(1.0, 4.0 * step)
        accepted = False
        g_next = None
        slack = 1e-8 * (1.0 + abs(D))
        while t > opts.min_step:
            u_try = sol._normalize(phi.u - t * d, prob.mu0,
                                   opts.normalization)
            phi_try = sol._project_convex(GridSection(grid, u_try), radius)
            phi_try.u = sol._normalize(phi_try.u, prob.mu0,
                                       opts.normalization)
            D_try = ding_value(phi_try, prob, radius)
            if D_try <= D - opts.armijo_c * t * slope:
                accepted = True
                break
            if D_try <= D + slack + t * slope:
                # flat-functional fallback, cf. solve_grid
                gibbs_try = gibbs_density(phi_try, prob)
                push_try = mea.ma_measure(phi_try, nu_res, radius,
                                          refine=True, deposit="linear")
                g_try = gibbs_try.density - push_try.density
                if float(np.max(np.abs(g_try))) <= 0.9 * gsup:
                    accepted = True
                    g_next = g_try
                    break
            t *= 0.5
        if not accepted:
            break
        step = t
        phi, D = phi_try, D_try
    state.wall_time = time.perf_counter() - t0
    if not state.converged and opts.raise_on_fail:
        raise NotConverged(
            f"einstein solver stalled at grad sup {state.grad_norm:.3e} "
            f"after {state.iteration + 1} iterations",
            diagnostics={"state": state})
    return state


def entropy(mu: GridDensity, mu0: GridDensity) -> float:
    """int log(dmu/dmu0) dmu with the convention 0 log 0 = 0."""
    if mu.grid.key() != mu0.grid.key():
        raise ValueError("mu and mu0 must share a grid")
    m = mu.masses
    m0 = mu0.masses
    bad = (m > 0) & (m0 <= 0)
    if np.any(bad):
        raise EntropyInfinite(
            "mu has mass where mu0 vanishes; entropy is +infinity")
    pos = m > 0
    return float(np.sum(m[pos] * np.log(m[pos] / m0[pos])))


def mabuchi_value(mu: GridDensity, prob: EinsteinProblem,
                  opts: sol.SolveOptions | None = None) -> float:
    """M(mu) = lambda inf_phi F_{mu,nu}(phi) + int log(dmu/dmu0) dmu."""
    ent = entropy(mu, prob.mu0)
    if prob.lam == 0.0:
        return ent
    st = sol.solve_grid(mu, prob.nu, opts)
    return prob.lam * st.F_value + ent


def exp_integral_convexity_gap(u0, u1, mu0: GridDensity,
                               ts=(0.0, 0.25, 0.5, 0.75, 1.0)) -> float:
    """Worst midpoint-convexity violation of t -> log int e^{u_t} dmu0.

    u_t = (1-t) u0 + t u1.  Holder's inequality makes the map convex, so
    the returned gap should be <= 0 up to roundoff.
    """
    u0 = np.asarray(u0, dtype=float).ravel()
    u1 = np.asarray(u1, dtype=float).ravel()

    def h(t):
        e = (1.0 - t) * u0 + t * u1
        shift = float(np.max(e))
        return shift + float(np.log(np.exp(e - shift) @ mu0.masses))

    vals = {t: h(t) for t in ts}
    worst = -np.inf
    ts = sorted(ts)
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            mid = 0.5 * (ts[i] + ts[j])
            gap = h(mid) - 0.5 * (vals[ts[i]] + vals[ts[j]])
            worst = max(worst, gap)
    return float(worst)
