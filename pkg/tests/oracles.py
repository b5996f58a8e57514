"""Independent reference computations used by the test suite.

Everything in here is implemented directly from first principles with
plain numpy/scipy, without going through the package's cost-matrix
machinery, so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar


def rearrangement_oracle_circle(node_x, masses, period=1.0):
    """Solution of the 1d continuous problem by monotone rearrangement.

    For mu given by midpoint masses on the circle of the given period and
    nu uniform on the dual circle (Q = 1), the optimal map is the CDF of
    mu and u follows by integrating u' = F_mu(x) - x/period twice.
    Returns mean-zero u at the nodes.
    """
    node_x = np.asarray(node_x, dtype=float)
    masses = np.asarray(masses, dtype=float)
    n = len(node_x)
    h = period / n
    # CDF at nodes: mass up to the node (half of the node's own cell)
    F = np.cumsum(masses) - 0.5 * masses
    up = F - node_x / period
    up = up - np.mean(up)
    # integrate to cell midpoints: full cells before + half the own cell
    u = (np.cumsum(up) - 0.5 * up) * h
    return u - np.mean(u)


def _interval_transport_cost(a, b, x, period):
    """int_a^b d_per(s, x)^2/2 ds on the circle, exact piecewise cubic."""
    # reduce so that the lift of x nearest the interval is explicit
    def F(t):
        return t ** 3 / 6.0

    total = 0.0
    # split [a, b] at points where the periodic distance to x is non-smooth:
    # the lifts of x and of x + period/2
    cuts = [a, b]
    k0 = np.floor((a - x) / period) - 1
    for k in np.arange(k0, k0 + int((b - a) / period) + 3):
        for c in (x + k * period, x + (k + 0.5) * period):
            if a < c < b:
                cuts.append(c)
    cuts = np.unique(cuts)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        d = (mid - x) / period
        d = d - np.round(d)
        xl = mid - d * period          # nearest lift of x to this piece
        total += F(hi - xl) - F(lo - xl)
    return total


def semidiscrete_boundaries_circle(atom_x, weights, period=1.0):
    """Optimal cell boundaries for atoms on the circle, nu uniform.

    Cells are consecutive arcs with prescribed masses; the one remaining
    rotation parameter is found by minimizing the exact transport cost.
    Returns the sorted cell start points b_0 < ... < b_{k-1} where the
    cell of sorted atom i is [b_i, b_i + period * lam_i).
    """
    order = np.argsort(atom_x)
    xs = np.asarray(atom_x, dtype=float)[order]
    lam = np.asarray(weights, dtype=float)[order]
    k = len(xs)
    starts_rel = period * np.concatenate([[0.0], np.cumsum(lam)[:-1]])

    def cost(theta):
        tot = 0.0
        for i in range(k):
            a = theta + starts_rel[i]
            tot += _interval_transport_cost(a, a + period * lam[i], xs[i],
                                            period)
        return tot

    thetas = np.linspace(0.0, period, 512, endpoint=False)
    vals = [cost(t) for t in thetas]
    t0 = thetas[int(np.argmin(vals))]
    res = minimize_scalar(cost, bracket=(t0 - period / 256.0, t0,
                                         t0 + period / 256.0),
                          options={"xtol": 1e-13})
    theta = float(res.x)
    b = np.mod(theta + starts_rel, period)
    return xs, lam, np.sort(b)


def power_diagram_labels(points, sites, psi, periods):
    """Periodic power-diagram label of each point, by direct enumeration.

    label(x) = argmin_i min_t |x - site_i - t|^2/2 - psi_i over lattice
    translates t in {-1,0,1}^n * periods.
    """
    points = np.asarray(points, dtype=float)
    sites = np.asarray(sites, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n = points.shape[1]
    best = np.full(len(points), np.inf)
    label = np.zeros(len(points), dtype=int)
    shifts = np.array(np.meshgrid(*[[-1, 0, 1]] * n,
                                  indexing="ij")).reshape(n, -1).T
    for i, s in enumerate(sites):
        d2 = np.full(len(points), np.inf)
        for t in shifts:
            diff = points - (s + t * np.asarray(periods))
            d2 = np.minimum(d2, 0.5 * np.sum(diff * diff, axis=1))
        score = d2 - psi[i]
        upd = score < best
        best[upd] = score[upd]
        label[upd] = i
    return label


def brute_force_conjugate(node_x, u, p_vals, period=1.0, n_fine=4096,
                          m_range=4):
    """(phi* - phi0*)(p) for the circle by a dense double loop.

    phi = x^2/2 + u(x) periodically extended; conjugate computed on a
    fine lift grid with |m| <= m_range copies.
    """
    xf = (np.arange(n_fine) + 0.5) / n_fine * period
    uf = np.interp(xf, node_x, u, period=period)
    out = np.empty(len(p_vals))
    lifts = []
    for m in range(-m_range, m_range + 1):
        lifts.append((xf + m * period, uf))
    X = np.concatenate([a for a, _ in lifts])
    U = np.concatenate([b for _, b in lifts])
    for j, p in enumerate(p_vals):
        out[j] = np.max(p * X - 0.5 * X * X - U) - 0.5 * p * p
    return out


def log_barrier_cost_direct(y, a, m_range=8):
    """Cost on the log-barrier model by direct truncated minimum.

    c(y, a) = min_m [2^{-m}(-a) y + m log 2] - log y - 1 - log(-a).
    """
    ms = np.arange(-m_range, m_range + 1)
    vals = np.ldexp(-a, -ms) * y + ms * np.log(2.0)
    return float(np.min(vals)) - np.log(y) - 1.0 - np.log(-a)


def torus_cost_direct(x, p, Q, periods, shell=3):
    """Periodic squared distance cost min_t |x - Qinv p - t|_Q^2 / 2."""
    Q = np.atleast_2d(Q)
    x = np.atleast_1d(x)
    p = np.atleast_1d(p)
    y = np.linalg.solve(Q, p)
    n = len(x)
    shifts = np.array(np.meshgrid(*[np.arange(-shell, shell + 1)] * n,
                                  indexing="ij")).reshape(n, -1).T
    best = np.inf
    for t in shifts:
        d = x - y - t * np.asarray(periods)
        best = min(best, 0.5 * float(d @ Q @ d))
    return best
