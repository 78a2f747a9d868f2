"""Stochastic optimal dosing policies for combined immuno-chemotherapy.

Solves a variance-penalized dynamic-programming equation on a state/dose
grid by fixed-point value iteration with a Gaussian kernel value model and
cluster-compressed parameter uncertainty, then evaluates the resulting
feedback controllers in seeded closed-loop Monte Carlo.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CostParams,
    DoseSet,
    ModelParams,
    continuous_rhs,
    denormalize,
    euler_step,
    normalize,
    phi_matrix,
    psi_vector,
    stage_cost,
)
from .uncertainty import ClusterSet, UncertaintyModel, build_clusters, cluster_psi, sample_params  # noqa: F401
from .regressor import GridKernel, KernelModel, excursion_bound, fit  # noqa: F401
from .solver import (  # noqa: F401
    ConvergenceLog,
    QTable,
    SolveResult,
    SolverConfig,
    bellman_update,
    build_grid,
    contraction_diagnostic,
    s_hat_alpha,
    solve,
)
from .policy import EvalReport, FeedbackPolicy, evaluate_monte_carlo, simulate_closed_loop  # noqa: F401
from .config import RunConfig, from_dict, to_dict  # noqa: F401
