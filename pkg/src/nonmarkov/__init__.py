"""Solve memory-kernel quantum master equations and certify complete positivity."""
from .operator_core import (
    CpCertificate,
    SuperOperator,
    Verdict,
    adjoint,
    apply,
    certify,
    choi,
    devec,
    hs_inner,
    vec,
)
from .generators import (
    GkslSpec,
    KernelFamily,
    KernelSpec,
    LidarShabaniParams,
    gksl,
    kernel_at,
    lidar_shabani,
)
from .volterra import (
    SolverConfig,
    Trajectory,
    certify_trajectory,
    dual,
    normalize_evolution,
    series_solve,
    solve_master,
    solve_modified,
    solve_normalization,
    solve_semigroup_example,
)
from .analytic import expm_superop, f_closed_form, f_is_nonnegative, semigroup_solution
from .laplace_check import kernel_hat, laplace_of_trajectory, verify_resolvent

__version__ = "0.1.0"
