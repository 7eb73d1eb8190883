"""Core value types shared across the package.

All types are immutable after construction. Positions are 1-based.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

ItemId = str


class ValidationError(ValueError):
    """A value violates one of the domain invariants."""


@dataclass(frozen=True, order=True)
class ContextId:
    """User id plus, for text-search logs, the query string."""

    user_id: str
    query: Optional[str] = None

    def __post_init__(self):
        if not self.user_id:
            raise ValidationError("context user_id must be non-empty")

    def __str__(self):
        return self.user_id if self.query is None else f"{self.user_id}|{self.query}"


class Impression(NamedTuple):
    item: ItemId
    position: int
    clicked: bool


@dataclass(frozen=True)
class Session:
    session_id: str
    day: int
    context: ContextId
    impressions: Tuple[Impression, ...]
    views: int

    def __post_init__(self):
        if not isinstance(self.impressions, tuple):
            object.__setattr__(self, "impressions", tuple(self.impressions))
        validate_session(self)

    @classmethod
    def unchecked(cls, session_id, day, context, impressions, views) -> "Session":
        """Construct without validation; for producers that build valid sessions by construction."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "session_id", session_id)
        object.__setattr__(obj, "day", day)
        object.__setattr__(obj, "context", context)
        object.__setattr__(obj, "impressions", impressions)
        object.__setattr__(obj, "views", views)
        return obj

    @property
    def list_length(self) -> int:
        return len(self.impressions)

    @property
    def n_clicks(self) -> int:
        return sum(1 for imp in self.impressions if imp.clicked)


def validate_session(s: Session) -> None:
    """Raise ValidationError naming the first violated invariant."""
    if not s.session_id:
        raise ValidationError("session_id must be non-empty")
    if s.day < 0:
        raise ValidationError(f"day must be >= 0, got {s.day}")
    seen_items = set()
    prev = 0
    for imp in s.impressions:
        if not imp.item:
            raise ValidationError("item id must be non-empty")
        if imp.item in seen_items:
            raise ValidationError(f"duplicate item {imp.item!r} in impression list")
        seen_items.add(imp.item)
        if imp.position == prev:
            raise ValidationError(f"duplicate position {imp.position}")
        if imp.position != prev + 1:
            raise ValidationError(
                f"positions must be sorted and contiguous from 1; expected {prev + 1}, got {imp.position}"
            )
        prev = imp.position
    k = session_truncation(s)
    if k is not None and s.views < k:
        raise ValidationError(f"views={s.views} < max clicked position {k}")
    if s.views < 0:
        raise ValidationError("views must be >= 0")


def session_truncation(session: Session) -> Optional[int]:
    """Deepest clicked position, or None for a click-free session."""
    k = None
    for imp in session.impressions:
        if imp.clicked and (k is None or imp.position > k):
            k = imp.position
    return k


@dataclass(frozen=True)
class PositionBiasCurve:
    """Examination probability per display position, ``theta[0]`` is position 1.

    Any positive curve is accepted (the estimator uses ratios only);
    :meth:`normalized` produces the ``theta[1] == 1`` convention.
    """

    theta: Tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.theta)
        if not t:
            raise ValidationError("theta must cover at least one position")
        for k, x in enumerate(t, 1):
            if not (x > 0.0) or x > 1.0 or math.isnan(x):
                raise ValidationError(f"theta[{k}]={x} outside (0, 1]")
        object.__setattr__(self, "theta", t)

    @property
    def max_position(self) -> int:
        return len(self.theta)

    def __len__(self):
        return len(self.theta)

    def at(self, k: int) -> float:
        """Examination probability at 1-based position ``k``; clamps past the end."""
        if k < 1:
            raise ValueError(f"position must be >= 1, got {k}")
        return self.theta[min(k, len(self.theta)) - 1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=np.float64)

    @property
    def is_normalized(self) -> bool:
        return self.theta[0] == 1.0

    def normalized(self) -> "PositionBiasCurve":
        t0 = self.theta[0]
        return PositionBiasCurve(tuple(min(1.0, x / t0) for x in self.theta))

    def scaled(self, c: float) -> "PositionBiasCurve":
        return PositionBiasCurve(tuple(x * c for x in self.theta))

    @classmethod
    def power_law(cls, positions: int, eta: float = 1.0) -> "PositionBiasCurve":
        return cls(tuple(1.0 / k ** eta for k in range(1, positions + 1)))


PairKey = Tuple[ContextId, ItemId]


@dataclass(frozen=True)
class RelevanceTable:
    """Relevance probability per (context, item) pair."""

    values: Mapping[PairKey, float]
    default: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.default <= 1.0:
            raise ValidationError(f"default relevance {self.default} outside [0, 1]")
        for key, v in self.values.items():
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"relevance {v} for {key} outside [0, 1]")

    def get(self, context: ContextId, item: ItemId) -> float:
        return self.values.get((context, item), self.default)

    def scaled(self, factor: float) -> "RelevanceTable":
        """Multiply every relevance by ``factor``, clipping into [0, 1]."""
        if factor <= 0:
            raise ValidationError("relevance scale factor must be > 0")
        return RelevanceTable(
            {k: min(1.0, v * factor) for k, v in self.values.items()},
            min(1.0, self.default * factor),
        )

    def __len__(self):
        return len(self.values)


Scorer = Callable[[ContextId, Sequence[ItemId]], Sequence[float]]


@dataclass(frozen=True)
class RankingPolicy:
    """Deterministic ranker: scores sorted descending, ties by ascending item id."""

    scorer: Scorer
    name: str = "policy"

    def scores(self, context: ContextId, items: Sequence[ItemId]) -> Dict[ItemId, float]:
        s = self.scorer(context, items)
        if len(s) != len(items):
            raise ValueError(f"policy {self.name!r} returned {len(s)} scores for {len(items)} items")
        return dict(zip(items, (float(x) for x in s)))

    def rank(self, context: ContextId, items: Iterable[ItemId]) -> Tuple[ItemId, ...]:
        items = list(items)
        scores = self.scores(context, items)
        return tuple(sorted(items, key=lambda i: (-scores[i], i)))


class RewardSpec(enum.Enum):
    CLICKS = "clicks"
    DCG = "dcg"
    PRECISION = "precision"

    @classmethod
    def parse(cls, value) -> "RewardSpec":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def alpha_weight(spec: RewardSpec, k: int) -> float:
    """Position weight applied to a click reward at position ``k``."""
    if k < 1:
        raise ValueError(f"position must be >= 1, got {k}")
    if spec is RewardSpec.CLICKS:
        return 1.0
    if spec is RewardSpec.DCG:
        return 1.0 / math.log2(k + 1)
    return 1.0 / k


def alpha_vector(spec: RewardSpec, max_position: int) -> np.ndarray:
    """``alpha_weight`` for positions 1..max_position as an array (index 0 = position 1)."""
    return np.array([alpha_weight(spec, k) for k in range(1, max_position + 1)], dtype=np.float64)


@dataclass(frozen=True)
class OpeResult:
    value: float
    n: int
    std_error: float
    effective_sample_size: float
    clipped_terms: int = 0
    diagnostics: Dict[str, object] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "n": self.n,
            "std_error": self.std_error,
            "effective_sample_size": self.effective_sample_size,
            "clipped_terms": self.clipped_terms,
            "diagnostics": dict(self.diagnostics),
        }
