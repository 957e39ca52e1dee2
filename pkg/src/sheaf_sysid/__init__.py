"""Nonlinear sheaf-Laplacian dynamics and recovery of edge interaction laws.

The package covers the forward problem (diffusion dynamics driven by edge
potentials over a Euclidean sheaf on a directed graph) and the inverse one
(recovering the edge law from node trajectories), together with the
cohomological and spectral diagnostics that decide when recovery is possible.
"""

from .dynamics import (
    SimConfig,
    Trajectory,
    edge_states,
    equilibrium_projection,
    integrate,
    laplacian_apply,
    load_trajectory_csv,
    save_trajectory_csv,
    simulate_ensemble,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    ParameterError,
    SheafSysIdError,
    StructuralError,
    UsageError,
)
from .experiments import (
    EvaluationSets,
    ExperimentConfig,
    ExperimentOutput,
    force_mse,
    make_cycle_sheaf,
    run_bounded_confidence,
    run_experiment,
    run_finite_basis,
    run_formation_transfer,
)
from .potentials import (
    Antagonistic,
    BasisForce,
    BoundedConfidence,
    ConstantEdgeForce,
    EdgePotential,
    GradientField,
    LinearBasisPotential,
    NodeField,
    Quadratic,
    RadialMonomialForce,
    ShiftedQuadratic,
    ZeroField,
    force_param_jacobian,
    monomial_basis,
    monomial_potential,
    potential_force,
    potential_value,
)
from .sheaf import (
    RANK_TOL,
    CoboundaryOperator,
    DirectedGraph,
    HarmonicSpace,
    SectionSpace,
    Sheaf,
    apply_delta,
    apply_delta_star,
    build_coboundary,
    c0_inner,
    c1_inner,
    delta_pseudoinverse_apply,
    global_section_basis,
    harmonic_basis,
    hodge_project,
    load_sheaf,
    save_sheaf,
    sheaf_from_dict,
    sheaf_to_dict,
)
from .sysid import (
    EstimationResult,
    IdentifiabilityReport,
    ResidualDataset,
    design_matrix,
    fit_linear,
    fit_threshold,
    gram_and_lambda_min,
    information_scalar,
    integrated_residual_objective,
    merge_datasets,
    residuals_exact,
    residuals_fd,
    threshold_objective,
)

__version__ = "0.1.0"
