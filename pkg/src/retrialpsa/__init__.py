"""Power-series analysis of a two-class retrial queue with weighted-fair orbits."""
from .errors import (DepthExceededError, ModelError, NanDerivativeError, NoConvergenceError,
                     NumericalError, RootOutsideDiskError, SingularSystemError,
                     Tau0ViolationError, UnstableModelError)
from .kernel import (KernelBundle, RootSolverConfig, eval_kernel, solve_y0,
                     y0_derivative_at_one)
from .metrics import (PadeApproximant, SeriesMetrics, functional_equation_residual,
                      mean_series, normalization_residual, pade_from_series, truncated_mean)
from .model import (BatchKind, BatchLaw, ModelSpec, ServiceKind, ServiceLaw, StabilityReport,
                    Variant, batch_pgf, busy_idle_probs, laap_busy_probability, load_model,
                    model_from_json, service_lst, stability)
from .oracle import CtmcSolution, build_generator, solve_ctmc, solve_stationary
from .psa import CoefficientEvaluator, PsaConfig, eval_pgf, eval_v, eval_v1, priority_pgf
from .sim import SimConfig, SimResult, simulate, sweep_simulate

__version__ = "0.1.0"

__all__ = [
    "BatchKind", "BatchLaw", "CoefficientEvaluator", "CtmcSolution", "DepthExceededError",
    "KernelBundle", "ModelError", "ModelSpec", "NanDerivativeError", "NoConvergenceError",
    "NumericalError", "PadeApproximant", "PsaConfig", "RootOutsideDiskError", "RootSolverConfig",
    "SeriesMetrics", "ServiceKind", "ServiceLaw", "SimConfig", "SimResult", "SingularSystemError",
    "StabilityReport", "Tau0ViolationError", "UnstableModelError", "Variant", "batch_pgf",
    "build_generator", "busy_idle_probs", "eval_kernel", "eval_pgf", "eval_v", "eval_v1",
    "functional_equation_residual", "laap_busy_probability", "load_model", "mean_series",
    "model_from_json", "normalization_residual", "pade_from_series", "priority_pgf",
    "service_lst", "simulate", "solve_ctmc", "solve_stationary", "solve_y0", "stability",
    "sweep_simulate", "truncated_mean", "y0_derivative_at_one",
]
