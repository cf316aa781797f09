"""Parameter recovery for one-hidden-layer teacher networks.

Moment-based spectral initialization followed by gradient descent on
the squared loss, with the supporting moment estimators, activation
moment functionals, tensor decomposition, Hessian analysis, and an
experiment harness.
"""

from .activations import (
    ACTIVATIONS,
    ActivationSpec,
    MomentProfile,
    check_properties,
    gaussian_moments,
    get_activation,
    homogeneous_constants,
    rho,
)
from .hessian import HessianReport, empirical_hessian, spectrum_report
from .initialization import (
    InitConfig,
    InitResult,
    SubspaceBasis,
    initialize,
    initialize_population,
    power_method,
    rec_mag_sign,
)
from .model import (
    ConditionNumbers,
    SampleSet,
    TeacherNetwork,
    condition_numbers,
    generate_teacher,
    sample,
)
from .moments import (
    OrderSelection,
    empirical_moment,
    moment_matvec,
    population_moment,
    select_orders,
)
from .tensorlab import (
    CpFactors,
    contract,
    decompose_rank_k,
    operator_norm_estimate,
    sym_outer_id,
    sym_outer_mat,
)
from .train import (
    GdConfig,
    RecoveryReport,
    empirical_gradient,
    empirical_risk,
    learn,
    recovery_error,
)

__all__ = [
    "ACTIVATIONS",
    "ActivationSpec",
    "ConditionNumbers",
    "CpFactors",
    "GdConfig",
    "HessianReport",
    "InitConfig",
    "InitResult",
    "MomentProfile",
    "OrderSelection",
    "RecoveryReport",
    "SampleSet",
    "SubspaceBasis",
    "TeacherNetwork",
    "check_properties",
    "condition_numbers",
    "contract",
    "decompose_rank_k",
    "empirical_gradient",
    "empirical_hessian",
    "empirical_moment",
    "empirical_risk",
    "gaussian_moments",
    "generate_teacher",
    "get_activation",
    "homogeneous_constants",
    "initialize",
    "initialize_population",
    "learn",
    "moment_matvec",
    "operator_norm_estimate",
    "population_moment",
    "power_method",
    "rec_mag_sign",
    "recovery_error",
    "rho",
    "sample",
    "select_orders",
    "spectrum_report",
    "sym_outer_id",
    "sym_outer_mat",
]
