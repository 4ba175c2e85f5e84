"""Numerical toolkit for null control of coupled parabolic-elliptic systems."""

__version__ = "0.1.0"

from .coefficients import (  # noqa: F401
    GENERAL,
    HYP_B_CONST,
    HYP_C_CONST,
    CoefficientSet,
    NonlinearSpec,
    make_coefficients,
    make_nonlinear_spec,
)
from .mesh import (  # noqa: F401
    ControlRegion,
    DiscreteLaplacian,
    SpatialMesh,
    assemble_laplacian,
    build_control_region,
    build_mesh,
    check_spectral_condition,
)
from .stepping import (  # noqa: F401
    IN_ELLIPTIC,
    IN_PARABOLIC,
    ControlField,
    NewtonOptions,
    SolverError,
    Trajectory,
    energy_audit,
    make_sweeper,
    solve_adjoint_linear,
    solve_forward_linear,
    solve_forward_semilinear,
    time_nodes,
)

from .fixedpoint import FixedPointOptions, run_fixed_point  # noqa: F401
from .galerkin import solve_galerkin, wellposedness_suite  # noqa: F401
from .hum import (  # noqa: F401
    HumProblem,
    HumResult,
    penalty_sweep,
    solve_hum,
    verify_optimality_system,
)
from .relax import EpsProblem, eps_sweep, solve_hum_eps  # noqa: F401
from .weights import (  # noqa: F401
    WeightParams,
    build_alpha0,
    build_weight_fields,
    estimate_observability_quotient,
    eval_carleman_functionals,
    make_weight_params,
)
