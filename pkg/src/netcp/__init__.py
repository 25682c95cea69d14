"""Online change-point detection for dynamic networks with missing edges."""

from .calibration import (
    PermutationReport,
    calibrate,
    estimate_profile,
    fit_ceps,
)
from .completion import (
    GraphonEstimate,
    MaskedSnapshot,
    SolverConfig,
    lambda_for_window,
    soft_impute_window,
)
from .detector import (
    AlarmInfo,
    DetectionOutcome,
    DetectorState,
    OfflineResult,
    candidate_grid,
    run_offline,
    threshold_eps,
    threshold_shape,
)
from .evaluation import MetricRow, MetricTable, RunRecord, run_experiment
from .profiles import CalibrationError, CalibrationProfile
from .simulation import (
    GeneratedStream,
    RdpgSpec,
    SbmSpec,
    ScenarioSpec,
    generate_stream,
    rdpg_graphon,
    sbm_graphon,
    scenario1_spec,
    scenario2_spec,
)

__version__ = "0.1.0"

__all__ = [
    "AlarmInfo",
    "CalibrationError",
    "CalibrationProfile",
    "DetectionOutcome",
    "DetectorState",
    "GeneratedStream",
    "GraphonEstimate",
    "MaskedSnapshot",
    "MetricRow",
    "MetricTable",
    "OfflineResult",
    "PermutationReport",
    "RdpgSpec",
    "RunRecord",
    "SbmSpec",
    "ScenarioSpec",
    "SolverConfig",
    "calibrate",
    "candidate_grid",
    "estimate_profile",
    "fit_ceps",
    "generate_stream",
    "lambda_for_window",
    "rdpg_graphon",
    "run_experiment",
    "run_offline",
    "sbm_graphon",
    "scenario1_spec",
    "scenario2_spec",
    "soft_impute_window",
    "threshold_eps",
    "threshold_shape",
]
