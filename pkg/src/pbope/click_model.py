"""Ground-truth examination-model simulator.

A click at position k happens with probability ``theta[k] * gamma(context, item)``,
independently across positions. Every session draws from its own counter-based
stream keyed by ``(seed, day, session index)``, so any session can be
reproduced in isolation and days can be simulated in any order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import (
    ContextId,
    Impression,
    ItemId,
    PositionBiasCurve,
    RankingPolicy,
    RelevanceTable,
    RewardSpec,
    Session,
    alpha_vector,
)
from .kernels import RNG_NAME, counter_uniforms


class SimConfigError(ValueError):
    pass


# Day index used for configuration draws, far from any simulated day.
_CONFIG_STREAM = 2**63 - 1


@dataclass(frozen=True)
class SimConfig:
    num_items: int
    list_length: int
    theta_true: PositionBiasCurve
    relevance: RelevanceTable
    contexts: Tuple[ContextId, ...]
    sessions_per_day: int
    days: int
    seed: int
    context_weights: Optional[Tuple[float, ...]] = None
    items: Tuple[ItemId, ...] = field(default=())

    def __post_init__(self):
        if not self.items:
            object.__setattr__(self, "items", tuple(f"i{j:04d}" for j in range(self.num_items)))
        if len(self.items) != self.num_items:
            raise SimConfigError("items must have num_items entries")
        if self.list_length < 1 or self.list_length > self.num_items:
            raise SimConfigError(f"list_length must be in 1..num_items, got {self.list_length}")
        if self.list_length > len(self.theta_true):
            raise SimConfigError(
                f"list_length {self.list_length} exceeds theta_true length {len(self.theta_true)}"
            )
        if self.sessions_per_day <= 0:
            raise SimConfigError("sessions_per_day must be > 0")
        if self.days <= 0:
            raise SimConfigError("days must be > 0")
        if not self.contexts:
            raise SimConfigError("at least one context is required")
        if self.context_weights is not None:
            w = tuple(float(x) for x in self.context_weights)
            if len(w) != len(self.contexts) or any(x < 0 for x in w) or sum(w) <= 0:
                raise SimConfigError("context_weights must be non-negative, one per context")
            object.__setattr__(self, "context_weights", w)

    @property
    def surface(self) -> str:
        return "text-search" if self.contexts[0].query is not None else "moo"

    def weights(self) -> np.ndarray:
        if self.context_weights is None:
            return np.full(len(self.contexts), 1.0 / len(self.contexts))
        w = np.asarray(self.context_weights, dtype=np.float64)
        return w / w.sum()

    def candidates(self, context: ContextId) -> Tuple[ItemId, ...]:
        return self.items

    def with_relevance(self, relevance: RelevanceTable) -> "SimConfig":
        return replace(self, relevance=relevance)


def make_sim_config(
    num_contexts: int = 50,
    num_items: int = 10,
    list_length: int = 10,
    theta_true: Optional[Sequence[float]] = None,
    gamma_range: Tuple[float, float] = (0.05, 0.6),
    sessions_per_day: int = 1000,
    days: int = 1,
    seed: int = 0,
    queries: Optional[int] = None,
    context_weights: Optional[Sequence[float]] = None,
) -> SimConfig:
    """Random but seed-determined configuration.

    With ``queries`` set, contexts are ``num_contexts`` users spread evenly
    over that many queries (a text-search surface); relevance is drawn per
    (query, item) and shifted slightly per user.
    """
    if theta_true is None:
        theta_true = [1.0 / k for k in range(1, list_length + 1)]
    lo, hi = gamma_range
    items = tuple(f"i{j:04d}" for j in range(num_items))
    if queries:
        contexts = tuple(ContextId(f"u{c:04d}", f"q{c % queries:03d}") for c in range(num_contexts))
    else:
        contexts = tuple(ContextId(f"u{c:04d}") for c in range(num_contexts))
    u = counter_uniforms(seed, _CONFIG_STREAM, np.arange(num_contexts * num_items, dtype=np.uint64), 2)
    values = {}
    for c, ctx in enumerate(contexts):
        for j, item in enumerate(items):
            if queries:
                q = c % queries
                base = counter_uniforms(seed, _CONFIG_STREAM - 1, np.array([q * num_items + j], dtype=np.uint64), 1)[0, 0]
                g = lo + (hi - lo) * base + 0.1 * (hi - lo) * (u[c * num_items + j, 1] - 0.5)
            else:
                g = lo + (hi - lo) * u[c * num_items + j, 0]
            values[(ctx, item)] = float(min(1.0, max(0.0, g)))
    return SimConfig(
        num_items=num_items,
        list_length=list_length,
        theta_true=PositionBiasCurve(tuple(theta_true)),
        relevance=RelevanceTable(values, 0.0),
        contexts=contexts,
        sessions_per_day=sessions_per_day,
        days=days,
        seed=seed,
        context_weights=tuple(context_weights) if context_weights is not None else None,
        items=items,
    )


def _session_id(prefix: str, day: int, index: int) -> str:
    return f"{prefix}d{day}-s{index}"


def _clicks(ranked: Sequence[ItemId], context: ContextId, config: SimConfig, u: np.ndarray) -> np.ndarray:
    theta = config.theta_true.as_array()[: config.list_length]
    gamma = np.array([config.relevance.get(context, i) for i in ranked], dtype=np.float64)
    return u < theta * gamma


def simulate_session(
    policy: RankingPolicy,
    context: ContextId,
    config: SimConfig,
    rng_state: Tuple[int, int],
    session_prefix: str = "",
) -> Session:
    """Simulate one session for ``context``.

    ``rng_state`` is ``(day, session index)``; together with ``config.seed`` it
    fully determines the clicks.
    """
    if context not in set(config.contexts):
        raise SimConfigError(f"unknown context {context}")
    day, index = rng_state
    L = config.list_length
    ranked = policy.rank(context, config.candidates(context))[:L]
    u = counter_uniforms(config.seed, day, np.array([index], dtype=np.uint64), L + 1)[0, 1:]
    clicked = _clicks(ranked, context, config, u)
    return Session(
        _session_id(session_prefix, day, index),
        day,
        context,
        tuple(Impression(item, k + 1, bool(c)) for k, (item, c) in enumerate(zip(ranked, clicked))),
        L,
    )


def simulate_day(
    policy: RankingPolicy,
    config: SimConfig,
    day: int,
    session_prefix: str = "",
    rankings: Optional[Dict[ContextId, Tuple[ItemId, ...]]] = None,
) -> List[Session]:
    """All ``sessions_per_day`` sessions of one day.

    Slot 0 of each session's stream picks the context; slots 1..L drive the
    clicks exactly as :func:`simulate_session` does.
    """
    L = config.list_length
    S = config.sessions_per_day
    u = counter_uniforms(config.seed, day, np.arange(S, dtype=np.uint64), L + 1)
    cum = np.cumsum(config.weights())
    ctx_idx = np.minimum(np.searchsorted(cum, u[:, 0] * cum[-1], side="right"), len(cum) - 1)

    if rankings is None:
        rankings = {}
    theta = config.theta_true.as_array()[:L]
    probs = np.zeros((len(config.contexts), L))
    for c in np.unique(ctx_idx):
        ctx = config.contexts[c]
        if ctx not in rankings:
            rankings[ctx] = policy.rank(ctx, config.candidates(ctx))[:L]
        gamma = np.array([config.relevance.get(ctx, i) for i in rankings[ctx]])
        probs[c] = theta * gamma
    clicks = u[:, 1:] < probs[ctx_idx]
    masks = (clicks.astype(np.int64) << np.arange(L, dtype=np.int64)).sum(axis=1) if L <= 62 else None

    # impression tuples are immutable, so sessions sharing a click pattern share them
    cache: Dict[Tuple[int, int], Tuple[Impression, ...]] = {}
    out = []
    ids = [_session_id(session_prefix, day, s) for s in range(S)]
    ctx_list = ctx_idx.tolist()
    mask_list = masks.tolist() if masks is not None else None
    for s in range(S):
        c = ctx_list[s]
        ctx = config.contexts[c]
        key = (c, mask_list[s]) if mask_list is not None else None
        imps = cache.get(key) if key is not None else None
        if imps is None:
            ranked = rankings[ctx]
            row = clicks[s].tolist()
            imps = tuple(Impression(ranked[k], k + 1, row[k]) for k in range(L))
            if key is not None:
                cache[key] = imps
        out.append(Session.unchecked(ids[s], day, ctx, imps, L))
    return out


def simulate_log(
    policy: RankingPolicy,
    config: SimConfig,
    session_prefix: str = "",
    first_day: int = 0,
) -> List[Session]:
    """``sessions_per_day * days`` sessions; days numbered from ``first_day``."""
    rankings: Dict[ContextId, Tuple[ItemId, ...]] = {}
    out: List[Session] = []
    for d in range(first_day, first_day + config.days):
        out.extend(simulate_day(policy, config, d, session_prefix, rankings))
    return out


def simulate_versioned_log(
    config: SimConfig,
    versions: int,
    noise: float = 1.0,
    policy_seed: Optional[int] = None,
    session_prefix: str = "",
    first_policy: Optional[RankingPolicy] = None,
) -> List[Session]:
    """A log whose days are split across several deterministic ranker versions.

    Each version ranks by relevance plus its own fixed noise, as successive
    retrains of a production model would. A single deterministic ranker shows
    every (context, item) pair at one position only, which leaves examination
    and relevance unidentifiable; mixing versions moves pairs across positions.
    ``first_policy``, when given, is used as version 0.
    """
    from .policies import noisy_policy

    if versions < 1:
        raise SimConfigError("versions must be >= 1")
    base_seed = config.seed + 101 if policy_seed is None else policy_seed
    by_query = config.surface == "text-search"
    per = max(1, config.days // versions)
    sub = replace(config, days=per)
    out: List[Session] = []
    for v in range(versions):
        if v == 0 and first_policy is not None:
            pol = first_policy
        else:
            pol = noisy_policy(config.relevance, noise, base_seed + v, name=f"version{v}", by_query=by_query)
        out.extend(simulate_log(pol, sub, session_prefix, first_day=v * per))
    return out


def true_policy_value(policy: RankingPolicy, config: SimConfig, reward: RewardSpec = RewardSpec.CLICKS) -> float:
    """Exact expected per-session reward of ``policy`` under the configured model."""
    L = config.list_length
    theta = config.theta_true.as_array()[:L]
    alpha = alpha_vector(reward, L)
    total = 0.0
    for w, ctx in zip(config.weights(), config.contexts):
        ranked = policy.rank(ctx, config.candidates(ctx))[:L]
        gamma = np.array([config.relevance.get(ctx, i) for i in ranked])
        total += w * float(np.sum(alpha[: len(ranked)] * theta[: len(ranked)] * gamma))
    return total


def expected_click_rate(policy: RankingPolicy, config: SimConfig) -> float:
    """Exact expected clicks per displayed impression."""
    return true_policy_value(policy, config, RewardSpec.CLICKS) / config.list_length


# -- serialization -----------------------------------------------------------

def config_to_dict(config: SimConfig) -> dict:
    return {
        "seed": config.seed,
        "rng": RNG_NAME,
        "num_items": config.num_items,
        "list_length": config.list_length,
        "sessions_per_day": config.sessions_per_day,
        "days": config.days,
        "theta_true": list(config.theta_true.theta),
        "items": list(config.items),
        "contexts": [{"user_id": c.user_id, "query": c.query} for c in config.contexts],
        "context_weights": list(config.context_weights) if config.context_weights else None,
        "default_gamma": config.relevance.default,
        "gamma": [
            {"user_id": c.user_id, "query": c.query, "item": i, "gamma": g}
            for (c, i), g in sorted(config.relevance.values.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
        ],
    }


def config_from_dict(d: Mapping) -> SimConfig:
    """Inverse of :func:`config_to_dict`, also accepting generator parameters.

    A dict without an explicit ``gamma`` list is passed to
    :func:`make_sim_config` (keys ``num_contexts``, ``num_items``,
    ``list_length``, ``theta_true``, ``gamma_range``, ``sessions_per_day``,
    ``days``, ``seed``, ``queries``, ``context_weights``).
    """
    if "gamma" not in d:
        keys = (
            "num_contexts", "num_items", "list_length", "theta_true", "gamma_range",
            "sessions_per_day", "days", "seed", "queries", "context_weights",
        )
        kwargs = {k: d[k] for k in keys if k in d and d[k] is not None}
        if "gamma_range" in kwargs:
            kwargs["gamma_range"] = tuple(kwargs["gamma_range"])
        return make_sim_config(**kwargs)
    contexts = tuple(ContextId(c["user_id"], c.get("query")) for c in d["contexts"])
    values = {
        (ContextId(g["user_id"], g.get("query")), g["item"]): float(g["gamma"]) for g in d["gamma"]
    }
    return SimConfig(
        num_items=int(d["num_items"]),
        list_length=int(d["list_length"]),
        theta_true=PositionBiasCurve(tuple(d["theta_true"])),
        relevance=RelevanceTable(values, float(d.get("default_gamma", 0.0))),
        contexts=contexts,
        sessions_per_day=int(d["sessions_per_day"]),
        days=int(d["days"]),
        seed=int(d["seed"]),
        context_weights=tuple(d["context_weights"]) if d.get("context_weights") else None,
        items=tuple(d.get("items", ())),
    )


def write_sidecar(config: SimConfig, path) -> None:
    """Ground truth (theta, gamma table, seed) next to a simulated log."""
    Path(path).write_text(json.dumps(config_to_dict(config), indent=1) + "\n")


def read_sidecar(path) -> SimConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
