"""Interacting particle systems on graphs and their graphon SDE limits."""
from ._kernels import backend
from .dynamics import (
    BrownianDriver,
    CoefficientModel,
    ConstantSigma,
    InitialSampler,
    Kuramoto,
    LinearMean,
    MeanSigma,
    PathEnsemble,
    TimeGrid,
    ZeroDrift,
    brownian_increment,
    particle_moments,
    simulate_particle_system,
    validate_coefficients,
)
from .errors import ConfigError, NumericalAbort
from .graphon import (
    Constant,
    GridSpec,
    PowerLaw,
    Product,
    StepGraphon,
    UniformAttachment,
    UserGraphon,
    discretize,
    graph_to_graphon,
    grid_project,
    lp_distance,
    lp_norm,
)
from .graphs import (
    InteractionGraph,
    SparsitySchedule,
    deterministic_graph,
    graph_stats,
    sample_random_points,
    sample_w_random,
)
from .harness import (
    ExperimentConfig,
    emit_report,
    estimate_rate,
    run_convergence,
    run_stability,
    run_wlln,
)
from .limitsolver import (
    BlockLawTable,
    PicardState,
    coupled_limit_trajectories,
    coupling_error,
    measure_error,
    solve_graphon_sde,
)
from .measures import (
    DiscreteMeasure,
    dbl_estimate,
    dbl_exact,
    graphon_integral_measure,
    w1_sorted,
    weighted_empirical,
)

__version__ = "0.1.0"
