"""Selection and inference for correlated exposure mixtures.

Each exposure enters through a small centered polynomial basis and each
exposure pair through the tensor basis projected orthogonal to its parents,
so "exposure j matters" and "pair (a, b) interacts" are group statements. Two
engines pick groups at a target false discovery rate: a debiased group lasso
with chi-squared group tests (dbl) and grouped model-X knockoffs, either
refitting on the same rows (kfull) or on held-out rows (ksplit). Reports
carry everything needed for response curves and interaction surfaces with
pointwise intervals. Exposure indices are 1-based throughout the public API.
"""

from .basis import BasisTransform, ExpandedDesign, Group, RawData, build_design
from .debias import (DebiasedFit, NodewiseTheta, chi2_sf, debias,
                     fdr_threshold_dbl, nodewise_theta, select_dbl)
from .exceptions import (CollinearityError, ConditioningError, DataError,
                         DegenerateColumnError, ExtrapolationWarning,
                         MixselectError, NumericalError)
from .grouplasso import (CVResult, GroupLassoFit, cv_lambda, fit_cv,
                         fit_group_lasso, kkt_residuals, lambda_grid,
                         lambda_max)
from .inference import (MixturePrediction, interaction_surface, predict_f,
                        response_curve)
from .knockoff import (KnockoffResult, SplitPlan, gaussian_knockoffs,
                       knockoff_threshold, make_split_plan, run_kfull,
                       run_ksplit)
from .metrics import (FdpBound, ReplicateMetrics, TruthSpec, fdp, fdp_bound,
                      fdp_int, interaction_overlap, power, power_int,
                      replicate_metrics)
from .reports import SCHEMA_VERSION, SelectionReport
from .rng import substream
from .sim import (DEFAULT_P_GRID, METHODS, SCENARIOS, ExperimentResult,
                  ScenarioSpec, default_n_grid, generate, run_experiment,
                  run_method, scenario_truth)

__version__ = "0.1.0"

__all__ = [
    "BasisTransform", "ExpandedDesign", "Group", "RawData", "build_design",
    "DebiasedFit", "NodewiseTheta", "chi2_sf", "debias", "fdr_threshold_dbl",
    "nodewise_theta", "select_dbl",
    "CollinearityError", "ConditioningError", "DataError",
    "DegenerateColumnError", "ExtrapolationWarning", "MixselectError",
    "NumericalError",
    "CVResult", "GroupLassoFit", "cv_lambda", "fit_cv", "fit_group_lasso",
    "kkt_residuals", "lambda_grid", "lambda_max",
    "MixturePrediction", "interaction_surface", "predict_f", "response_curve",
    "KnockoffResult", "SplitPlan", "gaussian_knockoffs", "knockoff_threshold",
    "make_split_plan", "run_kfull", "run_ksplit",
    "FdpBound", "ReplicateMetrics", "TruthSpec", "fdp", "fdp_bound",
    "fdp_int", "interaction_overlap", "power", "power_int",
    "replicate_metrics",
    "SCHEMA_VERSION", "SelectionReport", "substream",
    "DEFAULT_P_GRID", "METHODS", "SCENARIOS", "ExperimentResult",
    "ScenarioSpec", "default_n_grid", "generate", "run_experiment",
    "run_method", "scenario_truth",
    "__version__",
]
