"""Position-bias IPS value of a target ranking and the two online CTR definitions.

For each logged session the clicked impressions at or above the deepest click
``K`` are reweighted by ``theta[p] / theta[k]``, where ``k`` is the logged
position and ``p`` the counterfactual one, and by the reward weight
``alpha(k)``. Sessions without clicks add zero but still count in the
denominator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .counterfactual import PositionAssignment
from .domain import OpeResult, PositionBiasCurve, RewardSpec, Session, alpha_vector

DENOMINATORS = ("sessions", "appearances")


class DataIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """
    ``denominator``: ``"sessions"`` divides by the number of evaluated sessions;
    ``"appearances"`` by the number of impressions in them, which puts the value
    on the per-appearance scale of :func:`ctr_moo` and :func:`ctr_text_search`.
    """

    reward: RewardSpec = RewardSpec.CLICKS
    clip_ratio: Optional[float] = None
    out_of_range_theta: str = "clamp"
    denominator: str = "sessions"
    theta_floor: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "reward", RewardSpec.parse(self.reward))
        if self.clip_ratio is not None and not self.clip_ratio > 1.0:
            raise ValueError(f"clip ratio must be > 1, got {self.clip_ratio}")
        if self.out_of_range_theta != "clamp":
            raise ValueError("only the 'clamp' rule is supported for positions past the curve")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"denominator must be one of {DENOMINATORS}")


def _flatten(sessions: Sequence[Session], assignment: PositionAssignment):
    n_imp = sum(len(s.impressions) for s in sessions)
    offsets = np.zeros(len(sessions) + 1, dtype=np.int64)
    k_pos = np.empty(n_imp, dtype=np.int64)
    p_pos = np.empty(n_imp, dtype=np.int64)
    clicked = np.empty(n_imp, dtype=np.uint8)
    get = assignment.positions.get
    i = 0
    for s_idx, s in enumerate(sessions):
        sid = s.session_id
        for imp in s.impressions:
            k_pos[i] = imp.position
            p_pos[i] = get((sid, imp.item), 0)
            clicked[i] = imp.clicked
            i += 1
        offsets[s_idx + 1] = i
    return offsets, k_pos, p_pos, clicked


def pb_ips(
    sessions: Sequence[Session],
    assignment: PositionAssignment,
    theta: PositionBiasCurve,
    config: EstimatorConfig = EstimatorConfig(),
) -> OpeResult:
    """Estimate the target policy's value from logged sessions.

    A clicked session is dropped (and counted in ``diagnostics``) when any of
    its impressions at or above ``K`` lacks an assigned position.
    """
    if not sessions:
        raise ValueError("cannot evaluate an empty log")
    th = theta.as_array()
    low = np.flatnonzero(th < config.theta_floor)
    if low.size:
        raise ValueError(
            f"theta[{low[0] + 1}]={th[low[0]]:.3g} is below the floor {config.theta_floor}; "
            "use a curve from fit-bias or a simulator sidecar"
        )
    offsets, k_pos, p_pos, clicked = _flatten(sessions, assignment)
    max_k = int(k_pos.max()) if k_pos.size else 1
    alpha = alpha_vector(config.reward, max(max_k, 1))
    clip = float(config.clip_ratio) if config.clip_ratio is not None else 0.0

    sums, dropped, n_clip, sw, sw2, n_terms = kernels.ips_sums(offsets, k_pos, p_pos, clicked, alpha, th, clip)
    kept = ~dropped
    n_sessions = int(np.count_nonzero(kept))
    if n_sessions == 0:
        raise ValueError("every session was dropped for missing counterfactual positions")
    if config.denominator == "sessions":
        m = np.ones(n_sessions)
    else:
        m = np.diff(offsets)[kept].astype(np.float64)
    n_total = float(m.sum())
    if n_total == 0:
        raise ValueError("evaluated sessions contain no impressions")
    s_kept = sums[kept]
    value = float(s_kept.sum() / n_total)
    if n_sessions > 1:
        resid = s_kept - value * m
        std_error = math.sqrt(float(np.sum(resid * resid)) / (n_sessions * (n_sessions - 1))) / float(m.mean())
    else:
        std_error = 0.0
    n = int(round(n_total))
    ess = n * (sw * sw) / (n_terms * sw2) if n_terms and sw2 > 0 else float(n)

    return OpeResult(
        value=value,
        n=n,
        std_error=std_error,
        effective_sample_size=min(float(n), ess),
        clipped_terms=int(n_clip),
        diagnostics={
            "denominator": config.denominator,
            "sessions_total": len(sessions),
            "sessions_evaluated": n_sessions,
            "dropped_sessions": int(np.count_nonzero(dropped)),
            "clicked_terms": int(n_terms),
            "coverage": assignment.coverage,
            "reward": config.reward.value,
            "clip_ratio": config.clip_ratio,
            "backend": kernels.BACKEND,
        },
    )


def ctr_moo(sessions: Sequence[Session]) -> float:
    """Total clicks over total impression appearances."""
    return ctr_moo_with_se(sessions)[0]


def ctr_moo_with_se(sessions: Sequence[Session]) -> Tuple[float, float]:
    if not sessions:
        raise ValueError("CTR of an empty log")
    c = np.array([s.n_clicks for s in sessions], dtype=np.float64)
    m = np.array([len(s.impressions) for s in sessions], dtype=np.float64)
    if m.sum() == 0:
        raise DataIntegrityError("log has no impressions")
    value = float(c.sum() / m.sum())
    n = c.size
    if n < 2:
        return value, 0.0
    resid = c - value * m
    return value, math.sqrt(float(np.sum(resid * resid)) / (n * (n - 1))) / float(m.mean())


def ctr_text_search(sessions: Sequence[Session]) -> float:
    """Mean over sessions of clicks / views."""
    return ctr_text_search_with_se(sessions)[0]


def ctr_text_search_with_se(sessions: Sequence[Session]) -> Tuple[float, float]:
    if not sessions:
        raise ValueError("CTR of an empty log")
    ratios = np.empty(len(sessions))
    for i, s in enumerate(sessions):
        c = s.n_clicks
        if s.views <= 0:
            if c > 0:
                raise DataIntegrityError(f"session {s.session_id}: {c} clicks with views={s.views}")
            ratios[i] = 0.0
        else:
            ratios[i] = c / s.views
    value = float(ratios.mean())
    se = float(ratios.std(ddof=1) / math.sqrt(ratios.size)) if ratios.size > 1 else 0.0
    return value, se
