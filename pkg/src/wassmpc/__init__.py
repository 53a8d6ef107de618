"""Online learning MPC with Wasserstein distributionally robust offsets."""

from .config import ExperimentConfig, load_config, save_config
from .dro import (
    AmbiguityConfig,
    EmpiricalResidualSet,
    RobustOffset,
    WassersteinRadius,
    compute_offset,
    conservative_offset_bound,
    estimate_c,
    inflate_residuals_for_drift,
    wasserstein_radius,
    worst_case_violation_prob,
)
from .harness import RunLog, RunMetrics, compute_metrics, run_batch, run_episode

__version__ = "0.1.0"
