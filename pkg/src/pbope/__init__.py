"""Off-policy evaluation of deterministic rankers with position-bias propensities."""

__version__ = "0.1.0"

from .click_model import SimConfig, make_sim_config, simulate_log, simulate_session, true_policy_value
from .counterfactual import PositionAssignment, join_positions, lower_median, rescore_log, rescore_positions
from .domain import (
    ContextId,
    Impression,
    OpeResult,
    PositionBiasCurve,
    RankingPolicy,
    RelevanceTable,
    RewardSpec,
    Session,
    alpha_weight,
    session_truncation,
)
from .em import EmConfig, EmFit, fit_position_bias, log_likelihood
from .estimator import EstimatorConfig, ctr_moo, ctr_text_search, pb_ips
from .harness import DailyReport, ExperimentSpec, default_spec, emit_report, run_experiment
from .ingest import LogHeader, parse_sessions, write_sessions
