"""Kantorovich functional, a priori estimates and the two solvers."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from hessianma import geometry as geo
from hessianma import legendre as leg
from hessianma import measures as mea
from hessianma import solver as sol
from hessianma.errors import NotConverged, NuDegenerate


def cosine_setup(circle, n=128, amplitude=0.5):
    g = geo.primal_grid(circle, n)
    dg = geo.dual_grid(circle, n)
    mu = mea.GridDensity.cosine(g, amplitude)
    nu = mea.GridDensity.uniform(dg)
    return g, mu, nu


# ---------------------------------------------------------------------------
# the functional
# ---------------------------------------------------------------------------

def test_functional_vanishes_at_reference(circle):
    g, mu, nu = cosine_setup(circle)
    assert abs(sol.kantorovich_value(leg.zero_section(g), mu, nu)) <= 1e-12


def test_functional_shift_gauge(circle):
    # F(phi + C) = F(phi): the two integrals shift oppositely
    g, mu, nu = cosine_setup(circle)
    rng = np.random.default_rng(1)
    phi = leg.convexify(leg.GridSection(g, 0.1 * rng.standard_normal(128)))
    f0 = sol.kantorovich_value(phi, mu, nu)
    f1 = sol.kantorovich_value(phi.copy_with(phi.u + 0.37), mu, nu)
    assert abs(f0 - f1) <= 1e-10
    g0 = sol.kantorovich_gradient(phi, mu, nu)
    g1 = sol.kantorovich_gradient(phi.copy_with(phi.u + 0.37), mu, nu)
    assert np.max(np.abs(g0 - g1)) <= 1e-12


def test_functional_against_direct_sum(circle):
    # recompute F by an independent dense double loop over node lifts
    g, mu, nu = cosine_setup(circle, 128)
    x = g.nodes[:, 0]
    u = 0.1 * np.cos(2 * np.pi * x)
    phi = leg.GridSection(g, u)
    got = sol.kantorovich_value(phi, mu, nu)
    p = nu.grid.nodes[:, 0]
    lifts = np.concatenate([x + m for m in range(-4, 5)])
    ulift = np.tile(u, 9)
    w = np.max(p[:, None] * lifts[None, :] - 0.5 * lifts[None, :] ** 2
               - ulift[None, :], axis=1) - 0.5 * p ** 2
    ref = float(u @ mu.masses) + float(w @ nu.masses)
    assert abs(got - ref) <= 1e-12


@given(seed=st.integers(0, 30))
def test_gradient_integrates_to_zero(circle, seed):
    g, mu, nu = cosine_setup(circle, 64)
    rng = np.random.default_rng(seed)
    phi = leg.convexify(leg.GridSection(g, 0.1 * rng.standard_normal(64)))
    grad = sol.kantorovich_gradient(phi, mu, nu)
    # gradient density is mu - pushforward: total mass cancels
    assert abs(float(grad @ g.cell_volumes)) <= 1e-10


def test_gradient_finite_difference(circle):
    # base point with argmax margins well clear of the FD step, where
    # the hard-binned gradient is the exact discrete derivative
    g, mu, nu = cosine_setup(circle, 64)
    phi = leg.GridSection(g, 3e-4 * np.cos(2 * np.pi * g.frac[:, 0]))
    grad = sol.kantorovich_gradient(phi, mu, nu)
    rng = np.random.default_rng(7)
    h = 1e-4
    for _ in range(5):
        ks = rng.integers(1, 4, 2)
        cs = rng.standard_normal(2)
        v = sum(c * np.cos(2 * np.pi * k * g.frac[:, 0])
                for c, k in zip(cs, ks))
        v = v / np.max(np.abs(v))
        fp = sol.kantorovich_value(phi.copy_with(phi.u + h * v), mu, nu)
        fm = sol.kantorovich_value(phi.copy_with(phi.u - h * v), mu, nu)
        fd = (fp - fm) / (2 * h)
        gate = float((grad * v) @ g.cell_volumes)
        assert abs(fd - gate) <= 1e-6 * (1.0 + abs(fd))


# ---------------------------------------------------------------------------
# a priori estimates
# ---------------------------------------------------------------------------

def test_c0_bound_flat_circle(circle):
    # corner diffs of the doubled box, Q = 1: max |d|^2_Q / 2 = 2
    assert np.isclose(sol.c0_bound(circle), 2.0)


def test_c0_check(circle):
    g = geo.primal_grid(circle, 32)
    assert sol.check_c0(leg.zero_section(g))
    assert not sol.check_c0(leg.GridSection(g, 10.0 * g.frac[:, 0]))


def test_lipschitz_check(circle):
    g = geo.primal_grid(circle, 256)
    x = g.nodes[:, 0]
    phi = leg.GridSection(g, 0.1 * np.cos(2 * np.pi * x))
    assert sol.lipschitz_bound_check(phi)
    assert sol.lipschitz_bound(phi) >= 0.1 * 2 * np.pi


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------

def test_solve_uniform_1d_flat(circle):
    g = geo.primal_grid(circle, 64)
    mu = mea.GridDensity.uniform(g)
    nu = mea.GridDensity.uniform(geo.dual_grid(circle, 64))
    st_ = sol.solve_grid(mu, nu, sol.SolveOptions(tol=1e-6, max_iters=100))
    assert st_.converged
    assert float(np.max(st_.phi.u) - np.min(st_.phi.u)) <= 1e-6
    assert st_.estimates_ok


def test_solve_cosine_descends_and_matches_oracle(circle):
    g, mu, nu = cosine_setup(circle, 128)
    st_ = sol.solve_grid(mu, nu, sol.SolveOptions(tol=1e-5, max_iters=200))
    assert st_.converged
    # accepted iterates never increase F beyond the flat-functional slack
    F = [rec["F"] for rec in st_.history]
    for a, b in zip(F[:-1], F[1:]):
        assert b <= a + 1e-8 * (1.0 + abs(a))
    ref = oracles.rearrangement_oracle_circle(g.nodes[:, 0], mu.masses)
    u = st_.phi.u - np.mean(st_.phi.u)
    assert np.max(np.abs(u - ref)) <= 2e-4
    # optimality diagnostic: pushforward close to mu in W1
    push = mea.ma_measure(st_.phi, sol._oversampled_nu(nu, 8))
    assert mea.wasserstein1_grid(push, mu) <= 3.0 / 128


def test_solve_raises_when_budget_exhausted(circle):
    g, mu, nu = cosine_setup(circle, 64)
    with pytest.raises(NotConverged):
        sol.solve_grid(mu, nu, sol.SolveOptions(tol=1e-12, max_iters=2))
    st_ = sol.solve_grid(mu, nu, sol.SolveOptions(tol=1e-12, max_iters=2,
                                                  raise_on_fail=False))
    assert not st_.converged


def test_solve_rejects_degenerate_nu(circle):
    g = geo.primal_grid(circle, 32)
    mu = mea.GridDensity.uniform(g)
    masses = np.zeros(32)
    masses[0] = 1.0
    nu = mea.GridDensity.from_masses(geo.dual_grid(circle, 32), masses)
    with pytest.raises(NuDegenerate):
        sol.solve_grid(mu, nu, sol.SolveOptions(max_iters=5))


def test_solver_state_record(circle):
    g, mu, nu = cosine_setup(circle, 64)
    st_ = sol.solve_grid(mu, nu, sol.SolveOptions(tol=1e-5))
    assert st_.normalization == "MeanZeroAgainstMu"
    assert st_.iteration == len(st_.history) - 1 or st_.iteration >= 0
    assert st_.wall_time >= 0.0
    assert leg.is_grid_convex(st_.phi, tol=1e-9)


# ---------------------------------------------------------------------------
# semi-discrete solver
# ---------------------------------------------------------------------------

def test_semidiscrete_symmetric_pair(circle):
    atoms = mea.AtomicMeasure(circle, np.array([[0.25], [0.75]]),
                              np.array([0.5, 0.5]))
    nu = mea.GridDensity.uniform(geo.dual_grid(circle, 256))
    pa = sol.solve_semidiscrete(atoms, nu, sol.SolveOptions(tol=1e-10))
    assert pa.state.converged
    # symmetry: equal potentials and exactly balanced cells
    assert abs(pa.potentials[0] - pa.potentials[1]) <= 1e-10
    assert abs(mea.mass_of_cell(pa, 0, nu) - 0.5) <= 1e-9


def test_semidiscrete_weighted_pair_boundaries(circle):
    w = np.array([0.3, 0.7])
    atoms = mea.AtomicMeasure(circle, np.array([[0.2], [0.6]]), w)
    nu = mea.GridDensity.uniform(geo.dual_grid(circle, 512))
    pa = sol.solve_semidiscrete(atoms, nu, sol.SolveOptions(tol=1e-10))
    masses = [mea.mass_of_cell(pa, i, nu) for i in range(2)]
    xs, lam, bnds = oracles.semidiscrete_boundaries_circle([0.2, 0.6], w)
    from hessianma import tiling as til
    t = til.extract_tiling(pa, ([0.0], [1.0]))
    got = sorted({round(float(v), 6) for c in t.cells
                  for v in c.vertices.ravel() if 1e-9 < v < 1 - 1e-9})
    assert len(got) == len(bnds)
    for gb, rb in zip(got, np.sort(bnds)):
        assert abs(gb - rb) <= 1e-6
    # dual-grid quadrature quantizes cell masses at one node mass
    assert np.allclose(np.sort(masses), np.sort(lam), atol=1.5 / 512)


def test_semidiscrete_dual_history_monotone(torus2):
    atoms = mea.random_atoms(torus2, 5, seed=3)
    nu = mea.GridDensity.uniform(geo.dual_grid(torus2, (64, 64)))
    opts = sol.SolveOptions(tol=1e-3 / atoms.weights.min(), max_iters=60)
    pa = sol.solve_semidiscrete(atoms, nu, opts)
    assert pa.state.converged
    masses = mea.cell_masses(torus2, pa.atoms, pa.potentials, nu)
    assert np.max(np.abs(masses - atoms.weights)) <= 1e-3 + 2.5e-4
