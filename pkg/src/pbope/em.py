"""Position-bias estimation by expectation maximization.

Clicks follow ``click = examined AND relevant`` with ``P(examined) = theta[k]``
depending on position only and ``P(relevant) = gamma`` on the (context, item)
pair only. Impressions are aggregated into (pair, position) cells holding click
and skip counts; one EM iteration is a single pass over the cells.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .domain import ContextId, ItemId, PositionBiasCurve, RelevanceTable, Session

log = logging.getLogger(__name__)

CLAMP_HI = 1.0 - 1e-12


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6
    theta_floor: float = 1e-3
    min_pair_impressions: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.theta_floor < 1.0:
            raise ValueError("theta_floor must be in (0, 1)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.min_pair_impressions < 0:
            raise ValueError("min_pair_impressions must be >= 0")


@dataclass(frozen=True)
class EmFit:
    theta: PositionBiasCurve
    gamma: RelevanceTable
    iterations_run: int
    final_log_likelihood: float
    converged: bool
    log_likelihood_trace: Tuple[float, ...] = field(default=(), repr=False)
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta": list(self.theta.theta),
            "diagnostics": {
                "iterations_run": self.iterations_run,
                "converged": self.converged,
                "final_log_likelihood": self.final_log_likelihood,
                **self.diagnostics,
            },
        }


@dataclass
class ClickCells:
    """Sufficient statistics of a log for the examination model."""

    pair_keys: List[Tuple[ContextId, ItemId]]
    pair_index: np.ndarray  # per cell, into the parameter vector
    position: np.ndarray  # per cell, 0-based
    clicks: np.ndarray
    skips: np.ndarray
    n_params: int
    pooled: Optional[int]  # parameter index shared by sparse pairs
    pair_param: np.ndarray  # per pair key, its parameter index
    impressions_per_position: np.ndarray


def aggregate(sessions: Sequence[Session], max_position: int, min_pair_impressions: int = 0) -> ClickCells:
    keys: Dict[Tuple[ContextId, ItemId], int] = {}
    pair, pos, clk = [], [], []
    for s in sessions:
        ctx = s.context
        for imp in s.impressions:
            if imp.position > max_position:
                raise ValueError(f"session {s.session_id}: position {imp.position} exceeds max_position {max_position}")
            j = keys.setdefault((ctx, imp.item), len(keys))
            pair.append(j)
            pos.append(imp.position - 1)
            clk.append(imp.clicked)
    pair = np.asarray(pair, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    clk = np.asarray(clk, dtype=bool)
    n_pairs = len(keys)

    per_pair = np.bincount(pair, minlength=n_pairs)
    sparse = per_pair < min_pair_impressions
    pair_param = np.empty(n_pairs, dtype=np.int64)
    dense_idx = np.flatnonzero(~sparse)
    pair_param[dense_idx] = np.arange(dense_idx.size)
    pooled = None
    n_params = int(dense_idx.size)
    if sparse.any():
        pooled = n_params
        pair_param[sparse] = pooled
        n_params += 1

    param = pair_param[pair] if pair.size else pair
    cell = param * max_position + pos
    n_cells = n_params * max_position
    clicks = np.bincount(cell, weights=clk, minlength=n_cells)
    total = np.bincount(cell, minlength=n_cells).astype(np.float64)
    occupied = np.flatnonzero(total > 0)
    return ClickCells(
        pair_keys=list(keys),
        pair_index=occupied // max_position,
        position=occupied % max_position,
        clicks=clicks[occupied],
        skips=total[occupied] - clicks[occupied],
        n_params=n_params,
        pooled=pooled,
        pair_param=pair_param,
        impressions_per_position=np.bincount(pos, minlength=max_position),
    )


def _initial_gamma(cells: ClickCells) -> np.ndarray:
    c = np.bincount(cells.pair_index, weights=cells.clicks, minlength=cells.n_params)
    n = np.bincount(cells.pair_index, weights=cells.clicks + cells.skips, minlength=cells.n_params)
    ctr = np.divide(c, n, out=np.zeros_like(c), where=n > 0)
    return np.clip(ctr, 0.01, 0.99)


def fit_position_bias(
    sessions: Sequence[Session],
    config: EmConfig = EmConfig(),
    max_position: Optional[int] = None,
) -> EmFit:
    """Fit examination probabilities per position; result has ``theta[1] == 1``.

    The log-likelihood is recorded before every update and once at the final
    parameters; normalization is applied after convergence and does not change
    the likelihood.
    """
    if not sessions:
        raise ValueError("cannot fit position bias on an empty log")
    if max_position is None:
        max_position = max((len(s.impressions) for s in sessions), default=0)
    if max_position < 1:
        raise ValueError("log contains no impressions")
    cells = aggregate(sessions, max_position, config.min_pair_impressions)

    theta = 1.0 / np.arange(1, max_position + 1, dtype=np.float64)
    gamma = _initial_gamma(cells)
    trace: List[float] = []
    clamped_total = 0
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        new_theta, new_gamma, ll, clamped = kernels.em_sweep(
            cells.pair_index, cells.position, cells.clicks, cells.skips, theta, gamma
        )
        trace.append(ll)
        clamped_total += clamped
        change = max(
            float(np.max(np.abs(new_theta - theta))) if theta.size else 0.0,
            float(np.max(np.abs(new_gamma - gamma))) if gamma.size else 0.0,
        )
        theta, gamma = new_theta, new_gamma
        if change < config.tolerance:
            converged = True
            break
    final_ll, clamped = kernels.cell_log_likelihood(
        cells.pair_index, cells.position, cells.clicks, cells.skips, theta, gamma
    )
    trace.append(final_ll)
    clamped_total += clamped
    if not converged:
        log.warning("EM stopped after %d iterations without reaching tolerance %g", it, config.tolerance)

    empty_positions = [k + 1 for k in np.flatnonzero(cells.impressions_per_position == 0)]
    scale = theta[0] if cells.impressions_per_position[0] > 0 and theta[0] > 0 else 1.0
    theta_n = theta / scale
    gamma_n = np.clip(gamma * scale, 0.0, 1.0)
    above_one = [k + 1 for k in np.flatnonzero(theta_n > 1.0)]
    theta_n = np.clip(theta_n, config.theta_floor, 1.0)
    theta_n[0] = 1.0
    for k in empty_positions:
        theta_n[k - 1] = config.theta_floor
    floored = [k + 1 for k in np.flatnonzero(theta_n <= config.theta_floor)]

    values = {key: float(gamma_n[cells.pair_param[j]]) for j, key in enumerate(cells.pair_keys)}
    default = float(gamma_n[cells.pooled]) if cells.pooled is not None else 0.0
    return EmFit(
        theta=PositionBiasCurve(tuple(theta_n.tolist())),
        gamma=RelevanceTable(values, default),
        iterations_run=it,
        final_log_likelihood=final_ll,
        converged=converged,
        log_likelihood_trace=tuple(trace),
        diagnostics={
            "empty_positions": empty_positions,
            "floored_positions": floored,
            "clipped_above_one": above_one,
            "clamped_probabilities": clamped_total,
            "pooled_pairs": int(np.count_nonzero(cells.pair_param == cells.pooled)) if cells.pooled is not None else 0,
            "pairs": len(cells.pair_keys),
            "impressions": int(cells.impressions_per_position.sum()),
            "backend": kernels.BACKEND,
        },
    )


def log_likelihood(
    sessions: Sequence[Session],
    theta: PositionBiasCurve,
    gamma: RelevanceTable,
    diagnostics: Optional[dict] = None,
) -> float:
    """Bernoulli log-likelihood of every impression's click under (theta, gamma).

    Probabilities are clamped to ``1 - 1e-12``; the number of clamped
    non-clicks is added to ``diagnostics["clamped"]`` when a dict is given.
    """
    total = 0.0
    clamped = 0
    for s in sessions:
        for imp in s.impressions:
            q = theta.at(imp.position) * gamma.get(s.context, imp.item)
            if q > CLAMP_HI:
                if not imp.clicked:
                    clamped += 1
                q = CLAMP_HI
            total += np.log(q) if imp.clicked else np.log1p(-q)
    if diagnostics is not None:
        diagnostics["clamped"] = diagnostics.get("clamped", 0) + clamped
    return float(total)
