"""Session log reading and writing.

One JSON object per line. An optional leading ``#`` comment line carries the
log header::

    # {"schema_version": 1, "surface": "moo", "generator": {"seed": 7, "rng": "..."}}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Optional, Tuple

from .domain import ContextId, Impression, Session, ValidationError

SCHEMA_VERSION = 1
SURFACES = ("moo", "text-search")


class LogFormatError(ValueError):
    """A log file failed validation; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class LogHeader:
    schema_version: int = SCHEMA_VERSION
    surface: str = "moo"
    generator: Optional[dict] = field(default=None, compare=False)

    def to_line(self) -> str:
        d = {"schema_version": self.schema_version, "surface": self.surface}
        if self.generator:
            d["generator"] = self.generator
        return "# " + json.dumps(d, sort_keys=True) + "\n"


def session_to_dict(s: Session) -> dict:
    d = {"session_id": s.session_id, "day": s.day, "user_id": s.context.user_id}
    if s.context.query is not None:
        d["query"] = s.context.query
    d["views"] = s.views
    d["impressions"] = [{"item": i.item, "position": i.position, "clicked": i.clicked} for i in s.impressions]
    return d


def session_to_line(s: Session) -> str:
    return json.dumps(session_to_dict(s), separators=(",", ":")) + "\n"


def _require(d: dict, key: str, typ):
    if key not in d:
        raise ValidationError(f"missing field {key!r}")
    v = d[key]
    # bool is an int subclass; reject it where an int is required
    if typ is int and isinstance(v, bool) or not isinstance(v, typ):
        raise ValidationError(f"field {key!r} must be {typ.__name__}")
    return v


def session_from_dict(d: dict) -> Session:
    if not isinstance(d, dict):
        raise ValidationError("session must be a JSON object")
    query = d.get("query")
    if query is not None and not isinstance(query, str):
        raise ValidationError("field 'query' must be str")
    imps = []
    for raw in _require(d, "impressions", list):
        if not isinstance(raw, dict):
            raise ValidationError("impression must be an object")
        imps.append(
            Impression(_require(raw, "item", str), _require(raw, "position", int), _require(raw, "clicked", bool))
        )
    return Session(
        _require(d, "session_id", str),
        _require(d, "day", int),
        ContextId(_require(d, "user_id", str), query),
        tuple(imps),
        _require(d, "views", int),
    )


def _parse_header(line: str, lineno: int) -> LogHeader:
    try:
        d = json.loads(line.lstrip("#").strip())
    except json.JSONDecodeError as e:
        raise LogFormatError(f"malformed header: {e}", lineno) from None
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise LogFormatError(f"unknown schema version {version!r}", lineno)
    surface = d.get("surface", "moo")
    if surface not in SURFACES:
        raise LogFormatError(f"unknown surface {surface!r}", lineno)
    return LogHeader(version, surface, d.get("generator"))


def iter_sessions(fh: IO[str]) -> Iterator[Tuple[Optional[LogHeader], Session]]:
    """Stream sessions from an open file, validating each line as it is read.

    Yields ``(header, session)``; ``header`` is the parsed comment header or
    None when the file has none.
    """
    header = None
    surface = None
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if lineno == 1:
                header = _parse_header(line, lineno)
                surface = header.surface
            continue
        try:
            s = session_from_dict(json.loads(line))
        except json.JSONDecodeError as e:
            raise LogFormatError(f"malformed JSON: {e.msg}", lineno) from None
        except ValidationError as e:
            raise LogFormatError(str(e), lineno) from None
        this_surface = "text-search" if s.context.query is not None else "moo"
        if surface is None:
            surface = this_surface
        elif this_surface != surface:
            raise LogFormatError(
                f"query field must be present iff the log is text-search (log surface is {surface})", lineno
            )
        yield header, s


def read_sessions(fh: IO[str]) -> Tuple[List[Session], LogHeader]:
    sessions = []
    header = None
    for header, s in iter_sessions(fh):
        sessions.append(s)
    if not sessions:
        raise LogFormatError("no sessions")
    if header is None:
        header = LogHeader(SCHEMA_VERSION, "text-search" if sessions[0].context.query is not None else "moo")
    return sessions, header


def parse_sessions(path) -> Tuple[List[Session], LogHeader]:
    """Read and validate a whole log; fails on the first bad line."""
    with open(path, encoding="utf-8") as fh:
        return read_sessions(fh)


def write_sessions(path, sessions: Iterable[Session], header: Optional[LogHeader] = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(header.to_line())
        for s in sessions:
            fh.write(session_to_line(s))
            n += 1
    return n


# -- assignment and score files ---------------------------------------------

def write_assignment(path, assignment) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (sid, item), p in assignment.positions.items():
            fh.write(json.dumps({"session_id": sid, "item": item, "p": p}, separators=(",", ":")) + "\n")


def read_assignment(path):
    from .counterfactual import PositionAssignment

    positions = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                d = json.loads(line)
                sid, item, p = d["session_id"], d["item"], d["p"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise LogFormatError(f"bad assignment record: {e}", lineno) from None
            if not isinstance(p, int) or isinstance(p, bool) or p < 1:
                raise LogFormatError(f"position p must be an integer >= 1, got {p!r}", lineno)
            positions[(sid, item)] = p
    return PositionAssignment(positions)


def write_scores(path, table) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (user, query, item), score in sorted(table.items(), key=lambda kv: (kv[0][0], kv[0][1] or "", kv[0][2])):
            d = {"user_id": user}
            if query is not None:
                d["query"] = query
            d["item"] = item
            d["score"] = score
            fh.write(json.dumps(d, separators=(",", ":")) + "\n")


def read_scores(path) -> dict:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                d = json.loads(line)
                table[(d["user_id"], d.get("query"), d["item"])] = float(d["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise LogFormatError(f"bad score record: {e}", lineno) from None
    return table


def read_theta(path):
    """Load a curve from a ``fit-bias`` output or a simulator sidecar."""
    from .domain import PositionBiasCurve

    d = json.loads(Path(path).read_text())
    theta = d.get("theta", d.get("theta_true"))
    if theta is None:
        raise LogFormatError(f"{path}: no 'theta' or 'theta_true' field")
    return PositionBiasCurve(tuple(theta))
