"""Discrete Malliavin-Stein calculus for Rademacher functionals."""

__version__ = "0.1.0"

from .kernel import (  # noqa: E402
    DiagonalMask,
    Kernel,
    MultiIndexTable,
    contract,
    contraction_norm,
    inner,
    norm2,
    norm4,
    restrict,
    star_relations_check,
    symmetrize,
    taqqu_check,
)
from .functional import (  # noqa: E402
    ChaosExpansion,
    EstimatedValue,
    ExpectationEngine,
    RademacherPoint,
    chaos_multiply,
    decompose,
    evaluate,
    expectation,
    flip,
    moment,
)
from .malliavin import (  # noqa: E402
    GradientField,
    divergence,
    gradient,
    gradient_pathwise,
    identity_checks,
    ou,
    ou_inverse,
)
from .stein import (  # noqa: E402
    AtomicDistribution,
    empirical_dK,
    exact_dK,
    normal_cdf,
    small_ball,
    small_ball_sup,
    stein_solution,
)
from .bounds import (  # noqa: E402
    BoundReport,
    CovarianceSpec,
    PreconditionError,
    chaos_q_bound,
    first_chaos_bound,
    fourth_moment_J2,
    malliavin_stein_terms,
    multivariate_bound,
    multivariate_contraction_bound,
    necessary_statistic,
    sum12_bound,
)
from .applications import (  # noqa: E402
    CombSpec,
    FcpSpec,
    MatrixSpec,
    TwoRunsSpec,
    comb_bound,
    comb_functional,
    comb_phi_psi,
    fcp_build,
    trace_experiment,
    trace_kernel,
    trace_remainder,
    trace_sample,
    two_runs_bound,
    two_runs_kernels,
    two_runs_variance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
