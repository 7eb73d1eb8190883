"""Synthetic A/B experiment: offline estimate from control logs vs online CTR of treatment.

Each day the relevance table is scaled by that day's drift factor. Control and
treatment logs are simulated from independent streams; the examination curve
comes from a separate pre-period log (or the simulator's truth) and is never
fit on an evaluated day.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .click_model import SimConfig, config_from_dict, make_sim_config, simulate_day, simulate_versioned_log
from .counterfactual import join_positions, rescore_log
from .domain import PositionBiasCurve, RankingPolicy, RewardSpec
from .em import EmConfig, fit_position_bias
from .estimator import EstimatorConfig, ctr_moo_with_se, ctr_text_search_with_se, pb_ips
from .ingest import LogHeader, parse_sessions, write_sessions
from .policies import build_policy, noisy_policy, swap_top_two

log = logging.getLogger(__name__)

MODES = ("moo", "text-search")
CSV_HEADER = ("day", "ope", "online_ctr", "offset", "n_control", "n_treatment")


def linear_drift(days: int, low: float = 0.75, high: float = 1.25) -> Tuple[float, ...]:
    if days == 1:
        return (low,)
    return tuple(float(x) for x in np.linspace(low, high, days))


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimConfig
    policy_control: RankingPolicy
    policy_treatment: RankingPolicy
    days: int = 11
    drift: Tuple[float, ...] = ()
    mode: str = "moo"
    reward: RewardSpec = RewardSpec.CLICKS
    seed: int = 0
    theta_source: Union[str, PositionBiasCurve] = "em"
    pre_period_days: int = 30
    pre_period_sessions_per_day: int = 5000
    pre_period_versions: int = 5
    em: EmConfig = EmConfig()
    denominator: str = "appearances"

    def __post_init__(self):
        if self.days < 2:
            raise ValueError("an experiment needs at least 2 days")
        if not self.drift:
            object.__setattr__(self, "drift", linear_drift(self.days))
        object.__setattr__(self, "drift", tuple(float(x) for x in self.drift))
        if len(self.drift) != self.days:
            raise ValueError(f"drift has {len(self.drift)} factors for {self.days} days")
        if any(not x > 0 for x in self.drift):
            raise ValueError("drift factors must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "reward", RewardSpec.parse(self.reward))
        if isinstance(self.theta_source, str) and self.theta_source not in ("em", "oracle"):
            raise ValueError("theta_source must be 'em', 'oracle' or a PositionBiasCurve")
        if self.mode == "text-search" and self.base.contexts[0].query is None:
            raise ValueError("text-search mode needs contexts with queries")


@dataclass(frozen=True)
class DailyReport:
    day: int
    ope: float
    online_ctr: float
    offset: float
    n_control: int
    n_treatment: int
    ope_std_error: float = 0.0
    ctr_std_error: float = 0.0
    coverage: float = 1.0
    dropped_sessions: int = 0

    def __post_init__(self):
        if self.n_control <= 0 or self.n_treatment <= 0:
            raise ValueError("daily reports need sessions on both arms")


def default_spec(mode: str = "moo", seed: int = 0, **overrides) -> ExperimentSpec:
    """Desk-scale analog of an 11-day A/B test with a swap-top-two treatment."""
    text = mode == "text-search"
    base = make_sim_config(
        num_contexts=100,
        num_items=10,
        list_length=10,
        gamma_range=(0.05, 0.6),
        sessions_per_day=10000,
        days=1,
        seed=seed,
        queries=20 if text else None,
    )
    control = noisy_policy(base.relevance, 0.3, seed + 11, name="control", by_query=text)
    kw = dict(
        base=base,
        policy_control=control,
        policy_treatment=swap_top_two(control, name="treatment"),
        mode=mode,
        seed=seed,
    )
    kw.update(overrides)
    return ExperimentSpec(**kw)


def simulate_pre_period(spec: ExperimentSpec):
    """Pre-period log for the EM fit.

    Spans the control ranker and four earlier versions, in equal blocks of days.
    """
    cfg = replace(
        spec.base,
        sessions_per_day=spec.pre_period_sessions_per_day,
        days=spec.pre_period_days,
        seed=_stream_seed(spec.seed, 2),
    )
    return simulate_versioned_log(
        cfg, spec.pre_period_versions, policy_seed=spec.seed * 1000 + 101, session_prefix="pre-",
        first_policy=spec.policy_control,
    )


def _stream_seed(seed: int, arm: int) -> int:
    # distinct 64-bit seeds per arm; arm 0 control, 1 treatment, 2 pre-period
    return (seed * 0x100000001B3 + arm * 0x9E3779B97F4A7C15) % (1 << 64)


def resolve_theta(spec: ExperimentSpec, workdir: Optional[Path] = None):
    """The curve used for OPE plus fit diagnostics."""
    if isinstance(spec.theta_source, PositionBiasCurve):
        return spec.theta_source, {"source": "provided"}
    if spec.theta_source == "oracle":
        return spec.base.theta_true.normalized(), {"source": "oracle"}
    pre = simulate_pre_period(spec)
    info: Dict[str, object] = {"source": "em", "pre_period_sessions": len(pre)}
    if workdir is not None:
        path = Path(workdir) / "pre_period.jsonl"
        write_sessions(path, pre, LogHeader(surface=spec.mode))
        pre, _ = parse_sessions(path)
        info["fit_input"] = str(path)
    fit = fit_position_bias(pre, spec.em, max_position=spec.base.list_length)
    info.update(
        iterations_run=fit.iterations_run,
        converged=fit.converged,
        final_log_likelihood=fit.final_log_likelihood,
    )
    return fit.theta, info


def run_day(spec: ExperimentSpec, day: int, theta: PositionBiasCurve, workdir: Optional[Path] = None) -> DailyReport:
    cfg = spec.base.with_relevance(spec.base.relevance.scaled(spec.drift[day]))
    c_cfg = replace(cfg, seed=_stream_seed(spec.seed, 0))
    t_cfg = replace(cfg, seed=_stream_seed(spec.seed, 1))
    control = simulate_day(spec.policy_control, c_cfg, day, "c-")
    treatment = simulate_day(spec.policy_treatment, t_cfg, day, "t-")
    if workdir is not None:
        write_sessions(Path(workdir) / f"control_day{day:02d}.jsonl", control, LogHeader(surface=spec.mode))
        write_sessions(Path(workdir) / f"treatment_day{day:02d}.jsonl", treatment, LogHeader(surface=spec.mode))

    if spec.mode == "moo":
        assignment = rescore_log(control, spec.policy_treatment)
        ctr, ctr_se = ctr_moo_with_se(treatment)
    else:
        assignment = join_positions(control, treatment)
        ctr, ctr_se = ctr_text_search_with_se(treatment)
    res = pb_ips(control, assignment, theta, EstimatorConfig(spec.reward, denominator=spec.denominator))
    return DailyReport(
        day=day,
        ope=res.value,
        online_ctr=ctr,
        offset=res.value - ctr,
        n_control=len(control),
        n_treatment=len(treatment),
        ope_std_error=res.std_error,
        ctr_std_error=ctr_se,
        coverage=assignment.coverage,
        dropped_sessions=int(res.diagnostics["dropped_sessions"]),
    )


def _pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    return float(np.corrcoef(x, y)[0, 1])


def summarize(reports: Sequence[DailyReport], spec: Optional[ExperimentSpec] = None) -> dict:
    ope = np.array([r.ope for r in reports])
    ctr = np.array([r.online_ctr for r in reports])
    off = ope - ctr
    corr = _pearson(ope, ctr)
    notes = []
    if corr is None:
        notes.append("correlation undefined: a series is constant")
    elif spec is not None and len(set(spec.drift)) == 1:
        corr = None
        notes.append("correlation undefined: drift schedule is constant, days differ by noise only")
    ddof = 1 if len(reports) > 1 else 0
    return {
        "days": len(reports),
        "pearson_correlation": corr,
        "mean_offset": float(off.mean()),
        "offset_std": float(off.std(ddof=ddof)),
        "ope_std": float(ope.std(ddof=ddof)),
        "ctr_std": float(ctr.std(ddof=ddof)),
        "notes": notes,
    }


def run_experiment(spec: ExperimentSpec, workdir=None) -> Tuple[List[DailyReport], dict]:
    """Simulate, estimate and compare every day; returns reports ordered by day and a summary.

    With ``workdir`` every log is written to its own file and the curve is fit
    from the pre-period file read back from disk.
    """
    wd = Path(workdir) if workdir is not None else None
    if wd is not None:
        wd.mkdir(parents=True, exist_ok=True)
    theta, theta_info = resolve_theta(spec, wd)

    workers = min(kernels.worker_count(), spec.days)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda d: run_day(spec, d, theta, wd), range(spec.days)))
    else:
        reports = [run_day(spec, d, theta, wd) for d in range(spec.days)]
    reports.sort(key=lambda r: r.day)

    summary = summarize(reports, spec)
    summary.update(
        mode=spec.mode,
        reward=spec.reward.value,
        seed=spec.seed,
        denominator=spec.denominator,
        drift=list(spec.drift),
        theta=list(theta.theta),
        theta_info=theta_info,
        daily=[asdict(r) for r in reports],
    )
    if wd is not None:
        eval_files = sorted(str(p) for p in wd.glob("*_day*.jsonl"))
        fit_input = theta_info.get("fit_input")
        assert fit_input is None or fit_input not in eval_files, "theta fit must not read an evaluated day"
        summary["eval_inputs"] = eval_files
    return reports, summary


def report_csv(reports: Sequence[DailyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(reports, key=lambda r: r.day):
        w.writerow([r.day, repr(r.ope), repr(r.online_ctr), repr(r.offset), r.n_control, r.n_treatment])
    return buf.getvalue()


def summary_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".summary.json")


def emit_report(reports: Sequence[DailyReport], summary: dict, path) -> Tuple[Path, Path]:
    """Write the day-by-day CSV and its JSON summary sidecar."""
    if not reports:
        raise ValueError("no daily reports to write")
    path = Path(path)
    path.write_text(report_csv(reports))
    side = summary_path(path)
    side.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return path, side


def spec_from_dict(d: dict, mode: Optional[str] = None, theta: Optional[str] = None) -> ExperimentSpec:
    """Build an experiment from its JSON description.

    Keys (all optional): ``mode``, ``seed``, ``days``, ``drift`` (list, or
    ``{"low": .., "high": ..}``), ``reward``, ``theta`` (``em``/``oracle`` or a
    list), ``sim`` (simulator config, see ``config_from_dict``), ``control`` and
    ``treatment`` (policy specs; treatment defaults to swap-top-two of control),
    ``pre_period`` (``days``, ``sessions_per_day``), ``em`` (EmConfig fields),
    ``denominator``.
    """
    mode = mode or d.get("mode", "moo")
    seed = int(d.get("seed", 0))
    days = int(d.get("days", 11))
    text = mode == "text-search"
    if "sim" in d:
        sim = dict(d["sim"])
        sim.setdefault("seed", seed)
        if text and "gamma" not in sim:
            sim.setdefault("queries", 20)
        base = config_from_dict(sim)
    else:
        base = default_spec(mode, seed).base
    control_spec = d.get("control", {"kind": "noisy", "noise": 0.3, "seed": seed + 11, "by_query": text})
    control = build_policy(control_spec, base.relevance)
    if "treatment" in d:
        treatment = build_policy(d["treatment"], base.relevance)
    else:
        treatment = swap_top_two(control, name="treatment")
    drift = d.get("drift", ())
    if isinstance(drift, dict):
        drift = linear_drift(days, float(drift.get("low", 0.75)), float(drift.get("high", 1.25)))
    theta_src = theta or d.get("theta", "em")
    if isinstance(theta_src, list):
        theta_src = PositionBiasCurve(tuple(theta_src))
    pre = d.get("pre_period", {})
    return ExperimentSpec(
        base=base,
        policy_control=control,
        policy_treatment=treatment,
        days=days,
        drift=tuple(drift),
        mode=mode,
        reward=RewardSpec.parse(d.get("reward", "clicks")),
        seed=seed,
        theta_source=theta_src,
        pre_period_days=int(pre.get("days", 30)),
        pre_period_sessions_per_day=int(pre.get("sessions_per_day", 5000)),
        pre_period_versions=int(pre.get("versions", 5)),
        em=EmConfig(**d.get("em", {})),
        denominator=d.get("denominator", "appearances"),
    )
