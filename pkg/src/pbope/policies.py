"""Synthetic deterministic ranking policies.

Stand-ins for production rankers: each maps (context, candidates) to scores
and never consults an RNG at ranking time, so the induced order is fixed.
"""
from __future__ import annotations

import hashlib
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import ContextId, ItemId, RankingPolicy, RelevanceTable
from .kernels import counter_uniforms


def stable_hash(*parts: str) -> int:
    """64-bit hash of strings that is stable across processes."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def relevance_policy(relevance: RelevanceTable, name: str = "relevance") -> RankingPolicy:
    """Rank by true relevance."""

    def scorer(context, items):
        return [relevance.get(context, i) for i in items]

    return RankingPolicy(scorer, name)


def noisy_policy(
    relevance: RelevanceTable,
    noise: float,
    seed: int,
    name: str = "noisy",
    by_query: bool = False,
) -> RankingPolicy:
    """Relevance plus a fixed pseudo-random perturbation per (context, item).

    With ``by_query`` the perturbation ignores the user id, so every user
    issuing the same query sees the same noise.
    """

    def scorer(context, items):
        key = context.query if by_query and context.query is not None else str(context)
        idx = np.array([stable_hash(key, i) for i in items], dtype=np.uint64)
        u = counter_uniforms(seed, 0, idx, 1)[:, 0]
        return [relevance.get(context, i) + noise * (x - 0.5) for i, x in zip(items, u)]

    return RankingPolicy(scorer, name)


def _rank_scores(order: Sequence[ItemId], items: Sequence[ItemId]):
    score = {it: float(len(order) - r) for r, it in enumerate(order)}
    return [score[i] for i in items]


def swap_top_two(base: RankingPolicy, name: Optional[str] = None) -> RankingPolicy:
    """The base ranking with positions 1 and 2 exchanged."""

    def scorer(context, items):
        order = list(base.rank(context, items))
        if len(order) >= 2:
            order[0], order[1] = order[1], order[0]
        return _rank_scores(order, items)

    return RankingPolicy(scorer, name or f"swap_top_two({base.name})")


def reverse(base: RankingPolicy, name: Optional[str] = None) -> RankingPolicy:
    def scorer(context, items):
        return _rank_scores(list(reversed(base.rank(context, items))), items)

    return RankingPolicy(scorer, name or f"reverse({base.name})")


def lexicographic_policy(name: str = "lexicographic") -> RankingPolicy:
    """All scores equal, so the tie-break alone orders items ascending by id."""
    return RankingPolicy(lambda context, items: [0.0] * len(items), name)


ScoreKey = Tuple[str, Optional[str], ItemId]


class UnscorableItem(KeyError):
    pass


def table_policy(scores: Mapping[ScoreKey, float], name: str = "table") -> RankingPolicy:
    """Policy backed by an explicit (user_id, query, item) -> score table."""

    def scorer(context, items):
        out = []
        for i in items:
            key = (context.user_id, context.query, i)
            if key not in scores:
                raise UnscorableItem(f"policy {name!r} has no score for item {i!r} in context {context}")
            out.append(scores[key])
        return out

    return RankingPolicy(scorer, name)


def score_table(policy: RankingPolicy, candidates: Mapping[ContextId, Sequence[ItemId]]) -> Dict[ScoreKey, float]:
    """Materialize a policy's scores over every context's candidate set."""
    out = {}
    for ctx, items in candidates.items():
        for item, s in policy.scores(ctx, list(items)).items():
            out[(ctx.user_id, ctx.query, item)] = s
    return out


def build_policy(spec, relevance: RelevanceTable) -> RankingPolicy:
    """Construct a policy from a JSON-style description.

    ``spec`` is a kind name or a dict with a ``kind`` key. Kinds:
    ``relevance``, ``noisy`` (``noise``, ``seed``, ``by_query``),
    ``lexicographic``, and the wrappers ``swap_top_two`` / ``reverse``
    which take a ``base`` spec (default ``relevance``).
    """
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "relevance")
    if kind == "relevance":
        return relevance_policy(relevance)
    if kind == "noisy":
        return noisy_policy(
            relevance,
            float(spec.get("noise", 0.2)),
            int(spec.get("seed", 0)),
            by_query=bool(spec.get("by_query", False)),
        )
    if kind == "lexicographic":
        return lexicographic_policy()
    if kind in ("swap_top_two", "reverse"):
        base = build_policy(spec.get("base", "relevance"), relevance)
        return swap_top_two(base) if kind == "swap_top_two" else reverse(base)
    raise ValueError(f"unknown policy kind {kind!r}")
