import pytest
from hypothesis import strategies as st

from pbope.domain import ContextId, Impression, Session

ACCEPTANCE_LINES = []


def make_session(clicks, sid="s0", day=0, user="u0", query=None, views=None, items=None):
    """Session from a list of click flags, positions 1..L, items i0..i{L-1} unless given."""
    items = items or [f"i{k}" for k in range(len(clicks))]
    imps = tuple(Impression(items[k], k + 1, bool(c)) for k, c in enumerate(clicks))
    return Session(sid, day, ContextId(user, query), imps, len(clicks) if views is None else views)


@st.composite
def sessions_strategy(draw, max_sessions=20, max_len=8, query=False):
    n = draw(st.integers(1, max_sessions))
    out = []
    for s in range(n):
        L = draw(st.integers(0, max_len))
        clicks = draw(st.lists(st.booleans(), min_size=L, max_size=L))
        perm = draw(st.permutations(list(range(max_len + 2))))
        items = [f"it{j}" for j in perm[:L]]
        q = draw(st.sampled_from(["pizza", "sushi", "thai"])) if query else None
        user = draw(st.sampled_from(["alice", "bob", "carol"]))
        out.append(make_session(clicks, sid=f"s{s}", day=draw(st.integers(0, 30)), user=user, query=q,
                                views=L + draw(st.integers(0, 3)), items=items))
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(tag, ok, detail):
        line = f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record
