"""Thin fluid layers with nonnegative thickness and signed climate sources.

Each implicit time step is solved as a nonlinear complementarity problem
on a finite-volume (cell) or finite-volume-element (node/dual-cell) mesh,
and every step is audited by a mass ledger whose balance identity closes
to rounding error.
"""

__version__ = "0.1.0"

from .mesh import (
    Mesh,
    InvalidGeometryError,
    build_interval_mesh,
    build_rect_mesh,
    edge_neighbors,
)
from .flux import (
    PLaplacianFlux,
    DoublyNonlinearFlux,
    AdvectiveFlux,
    NonlocalFlux,
    VelocityField,
    SourceModel,
    eval_plaplacian,
    eval_doubly_nonlinear,
    eval_advective,
    eval_nonlocal,
    power_transform_params,
    advective_timestep_bound,
    nonlocal_timestep_bound,
    check_standard_flux_assumptions,
)
from .solver import (
    ThicknessField,
    SolveReport,
    SolveFailure,
    assemble_edge_fluxes,
    assemble_residual,
    solve_ncp,
    verify_complementarity,
    check_interior_pde_residual,
    check_monotonicity,
)
from .timestepping import (
    StageProblem,
    SchemeSpec,
    theta_stage,
    dirk_stages,
    explicit_truncation_step,
    advance_one_step,
    SSTABLE2_ALPHA,
)
from .conservation import (
    DomainDecomposition,
    LedgerEntry,
    decompose,
    total_mass,
    climate_input,
    retreat_loss,
    boundary_leak,
    cell_slop,
    close_balance,
    retreat_bound,
)
from .inequalities import (
    check_pbig_inequality,
    check_psmall_inequality,
    check_holder_integrated,
    poincare_constant,
)
from .scenarios import Scenario, CATALOG, run_scenario, refinement_study
