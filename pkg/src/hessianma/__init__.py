"""Monge-Ampere equations on compact Hessian manifolds.

A variational toolkit for real Monge-Ampere equations on quotients
Omega/Pi: generalized Legendre duality, the affine Kantorovich
functional, grid and semi-discrete solvers, Einstein-Hessian equations
and quasi-periodic tilings from piecewise-affine solutions.
"""

from .einstein import (
    EinsteinProblem,
    ding_gradient,
    ding_value,
    entropy,
    exp_integral_convexity_gap,
    gibbs_density,
    mabuchi_value,
    solve_einstein,
)
from .errors import (
    ConfigError,
    EmptyCell,
    EntropyInfinite,
    HessianMAError,
    NotConverged,
    NuDegenerate,
    OverflowGuard,
    TruncationSaturated,
    UnsupportedDimension,
)
from .geometry import (
    AffineMap,
    AffineSection,
    Grid,
    HessianModel,
    act_on_dual_point,
    act_on_point,
    act_on_section,
    dual_grid,
    dual_model,
    log_barrier,
    primal_grid,
    reduce_dual,
    reduce_to_fundamental,
    torus,
    verify_model,
)
from .legendre import (
    DualGridSection,
    GridSection,
    convexify,
    cost_function,
    cost_matrix,
    gradient_map,
    gradient_map_grid,
    is_grid_convex,
    inverse_transform,
    legendre_transform,
    legendre_variation_check,
    pairing,
    zero_section,
)
from .measures import (
    AtomicMeasure,
    GridDensity,
    cell_masses,
    ma_measure,
    mass_of_cell,
    random_atoms,
    semidiscrete_labels,
    wasserstein1_grid,
)
from .solver import (
    KantorovichState,
    SolveOptions,
    c0_bound,
    check_c0,
    kantorovich_gradient,
    kantorovich_value,
    lipschitz_bound,
    lipschitz_bound_check,
    solve_grid,
    solve_semidiscrete,
)
from .tiling import (
    Cell,
    PiecewiseAffineSection,
    Tiling,
    extract_tiling,
    pa_approximate,
    pa_evaluate,
    quantize_density,
    tiling_to_json,
    tiling_to_svg,
)

__version__ = "0.1.0"
