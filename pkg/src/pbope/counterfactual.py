"""Counterfactual positions of logged impressions under a target policy."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .domain import ItemId, RankingPolicy, Session

log = logging.getLogger(__name__)


class UnscorableItemError(ValueError):
    pass


@dataclass(frozen=True)
class PositionAssignment:
    """(session_id, item) -> counterfactual 1-based position."""

    positions: Dict[Tuple[str, ItemId], int]
    coverage: float = 1.0
    diagnostics: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")

    def get(self, session_id: str, item: ItemId, default=None):
        return self.positions.get((session_id, item), default)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def identity(cls, sessions: Sequence[Session]) -> "PositionAssignment":
        """p = k for every impression."""
        return cls({(s.session_id, i.item): i.position for s in sessions for i in s.impressions}, 1.0)

    @classmethod
    def merge(cls, parts: Sequence["PositionAssignment"]) -> "PositionAssignment":
        positions: Dict[Tuple[str, ItemId], int] = {}
        total = 0.0
        for a in parts:
            positions.update(a.positions)
            total += a.diagnostics.get("impressions", len(a.positions))
        cov = len(positions) / total if total else 0.0
        return cls(positions, min(1.0, cov), {"impressions": int(total)})


def rescore_positions(session: Session, policy: RankingPolicy) -> PositionAssignment:
    """Re-rank the logged list with ``policy``; candidates are exactly the shown items."""
    items = [imp.item for imp in session.impressions]
    try:
        ranked = policy.rank(session.context, items)
    except KeyError as e:
        raise UnscorableItemError(f"session {session.session_id}: {e.args[0] if e.args else e}") from None
    return PositionAssignment(
        {(session.session_id, item): p for p, item in enumerate(ranked, 1)},
        1.0,
        {"impressions": len(items)},
    )


def rescore_log(sessions: Sequence[Session], policy: RankingPolicy) -> PositionAssignment:
    """:func:`rescore_positions` over a log.

    Sessions sharing a context and logged list are ranked once.
    """
    cache: Dict[tuple, Tuple[ItemId, ...]] = {}
    positions: Dict[Tuple[str, ItemId], int] = {}
    n = 0
    for s in sessions:
        items = tuple(imp.item for imp in s.impressions)
        key = (s.context, items)
        ranked = cache.get(key)
        if ranked is None:
            try:
                ranked = cache[key] = policy.rank(s.context, items)
            except KeyError as e:
                raise UnscorableItemError(f"session {s.session_id}: {e.args[0] if e.args else e}") from None
        for p, item in enumerate(ranked, 1):
            positions[(s.session_id, item)] = p
        n += len(items)
    return PositionAssignment(positions, 1.0 if n else 0.0, {"impressions": n})


def lower_median(values: Sequence[int]) -> int:
    """Median of a non-empty multiset; for even sizes the smaller middle element."""
    if not values:
        raise ValueError("median of empty multiset")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def join_positions(control: Sequence[Session], treatment: Sequence[Session]) -> PositionAssignment:
    """Map each control impression to where treatment showed that item for that query.

    The treatment positions of a (query, item) pair are reduced with
    :func:`lower_median`. Control impressions whose pair never appears in
    treatment stay unassigned and lower ``coverage``.
    """
    index: Dict[Tuple[str, ItemId], List[int]] = defaultdict(list)
    for s in treatment:
        if s.context.query is None:
            raise ValueError(f"treatment session {s.session_id} has no query; join needs text-search logs")
        for imp in s.impressions:
            index[(s.context.query, imp.item)].append(imp.position)
    medians = {key: lower_median(v) for key, v in index.items()}

    positions: Dict[Tuple[str, ItemId], int] = {}
    total = 0
    for s in control:
        if s.context.query is None:
            raise ValueError(f"control session {s.session_id} has no query; join needs text-search logs")
        for imp in s.impressions:
            total += 1
            p = medians.get((s.context.query, imp.item))
            if p is not None:
                positions[(s.session_id, imp.item)] = p
    coverage = len(positions) / total if total else 0.0
    diagnostics = {"impressions": total, "assigned": len(positions), "treatment_pairs": len(medians)}
    if not positions:
        log.warning("join produced no assignments: control and treatment share no (query, item) pairs")
        diagnostics["warning"] = "empty intersection"
    return PositionAssignment(positions, coverage, diagnostics)
