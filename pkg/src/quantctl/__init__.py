"""Lloyd-Max quantizer design and quantized feedback control of scalar linear plants."""

__version__ = "0.1.0"

from quantctl._backend import BACKEND
from quantctl.control import (
    SystemSpec,
    cost_decomposition,
    lqr_policy,
    prop4_bounds,
    riccati,
    run_trajectory,
)
from quantctl.density import (
    GriddedDensity,
    affine,
    check_log_concavity,
    convolve,
    from_gaussian,
    from_spec,
    from_uniform,
    truncate_normalize,
)
from quantctl.errors import (
    ConvergenceWarning,
    EmptyCellError,
    InfeasibleConstraintError,
    InvalidParameterError,
    QuantCtlError,
)
from quantctl.mrsq import MultiResolutionQuantizer, generalized_lloyd_max, mrsq_decode, mrsq_encode
from quantctl.quantizer import ScalarQuantizer, lloyd_max
from quantctl.silent import SilentQuantizer, min_cell_prob_quantizer
from quantctl.sim import (
    ErasureRate,
    ExperimentConfig,
    FixedRate,
    RateSchedule,
    bennett_distortion,
    bennett_point_density,
    run_lqr_exact,
    run_monte_carlo,
)

__all__ = [
    "BACKEND",
    "ConvergenceWarning",
    "EmptyCellError",
    "ErasureRate",
    "ExperimentConfig",
    "FixedRate",
    "GriddedDensity",
    "InfeasibleConstraintError",
    "InvalidParameterError",
    "MultiResolutionQuantizer",
    "QuantCtlError",
    "RateSchedule",
    "ScalarQuantizer",
    "SilentQuantizer",
    "SystemSpec",
    "affine",
    "bennett_distortion",
    "bennett_point_density",
    "check_log_concavity",
    "convolve",
    "cost_decomposition",
    "from_gaussian",
    "from_spec",
    "from_uniform",
    "generalized_lloyd_max",
    "lloyd_max",
    "lqr_policy",
    "min_cell_prob_quantizer",
    "mrsq_decode",
    "mrsq_encode",
    "prop4_bounds",
    "riccati",
    "run_lqr_exact",
    "run_monte_carlo",
    "run_trajectory",
    "truncate_normalize",
]
