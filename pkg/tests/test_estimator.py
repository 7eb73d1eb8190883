import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbope.click_model import make_sim_config, simulate_log
from pbope.counterfactual import PositionAssignment, rescore_log
from pbope.domain import PositionBiasCurve, RewardSpec, alpha_weight, session_truncation
from pbope.estimator import (
    DataIntegrityError,
    EstimatorConfig,
    ctr_moo,
    ctr_text_search,
    pb_ips,
)
from pbope.policies import noisy_policy, swap_top_two

from conftest import make_session, sessions_strategy

curves = st.lists(st.floats(0.05, 1.0), min_size=1, max_size=10).map(lambda t: PositionBiasCurve(tuple(t)))


def _reference_ips(sessions, assignment, theta, reward=RewardSpec.CLICKS, clip=None):
    """Direct transcription of the per-session double sum, one term at a time."""
    total = 0.0
    for s in sessions:
        K = session_truncation(s)
        if K is None:
            continue
        for imp in s.impressions:
            if imp.position <= K and imp.clicked:
                p = assignment.get(s.session_id, imp.item)
                w = theta.at(p) / theta.at(imp.position)
                if clip is not None:
                    w = min(w, clip)
                total += w * alpha_weight(reward, imp.position)
    return total / len(sessions)


def test_identity_gives_logged_mean():
    sessions = [make_session([1, 0, 1], sid="a"), make_session([0, 0, 0], sid="b"), make_session([0, 1], sid="c")]
    res = pb_ips(sessions, PositionAssignment.identity(sessions), PositionBiasCurve((1.0, 0.5, 0.25)))
    assert res.value == pytest.approx(3 / 3, abs=1e-12)
    assert res.n == 3
    assert res.effective_sample_size == pytest.approx(3.0)
    assert res.clipped_terms == 0


def test_two_term_hand_computation():
    s = make_session([1, 0, 1, 0], items=["a", "b", "c", "d"])
    asg = PositionAssignment({("s0", "a"): 2, ("s0", "b"): 3, ("s0", "c"): 1, ("s0", "d"): 4})
    res = pb_ips([s], asg, PositionBiasCurve((1, 0.5, 0.25, 0.125)))
    assert res.value == pytest.approx(4.5, abs=1e-12)


def test_clicked_session_with_missing_assignment_dropped():
    s1 = make_session([0, 1, 0], sid="a", items=["x", "y", "z"])
    s2 = make_session([1, 0, 0], sid="b", items=["x", "y", "z"])
    # "z" sits below K for both sessions; only "x" missing at K>=1 drops session a
    asg = PositionAssignment({("a", "y"): 1, ("b", "x"): 1, ("b", "y"): 2})
    res = pb_ips([s1, s2], asg, PositionBiasCurve((1, 0.5, 0.25)))
    assert res.diagnostics["dropped_sessions"] == 1
    assert res.n == 1 and res.value == 1.0


def test_theta_below_floor_rejected():
    s = make_session([1])
    with pytest.raises(ValueError, match="below the floor"):
        pb_ips([s], PositionAssignment.identity([s]), PositionBiasCurve((1.0, 1e-5)))


def test_empty_log_rejected():
    with pytest.raises(ValueError):
        pb_ips([], PositionAssignment({}), PositionBiasCurve((1.0,)))


def test_positions_past_curve_clamp_to_last():
    s = make_session([1, 0, 0, 0, 0])
    asg = PositionAssignment({("s0", "i0"): 5, **{("s0", f"i{k}"): k for k in range(1, 5)}})
    res = pb_ips([s], asg, PositionBiasCurve((1.0, 0.5)))
    assert res.value == pytest.approx(0.5)


def test_clip_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(clip_ratio=1.0)
    with pytest.raises(ValueError):
        EstimatorConfig(denominator="clicks")


@settings(max_examples=100)
@given(sessions_strategy(), curves, st.randoms(), st.sampled_from(list(RewardSpec)))
def test_matches_reference_double_sum(sessions, theta, rnd, reward):
    asg = {}
    for s in sessions:
        perm = list(range(1, len(s.impressions) + 1))
        rnd.shuffle(perm)
        asg.update({(s.session_id, imp.item): p for imp, p in zip(s.impressions, perm)})
    asg = PositionAssignment(asg)
    res = pb_ips(sessions, asg, theta, EstimatorConfig(reward))
    assert res.value == pytest.approx(_reference_ips(sessions, asg, theta, reward), rel=1e-12, abs=1e-12)
    assert res.std_error >= 0 and res.effective_sample_size <= res.n + 1e-9


@settings(max_examples=100)
@given(sessions_strategy(), curves)
def test_identity_invariance(sessions, theta):
    res = pb_ips(sessions, PositionAssignment.identity(sessions), theta)
    plain = sum(s.n_clicks for s in sessions) / len(sessions)
    assert abs(res.value - plain) <= 1e-12


@settings(max_examples=100)
@given(sessions_strategy(), curves, st.sampled_from([0.1, 0.5, 0.9]), st.randoms())
def test_scale_invariance(sessions, theta, c, rnd):
    asg = {}
    for s in sessions:
        for imp in s.impressions:
            asg[(s.session_id, imp.item)] = rnd.randint(1, 12)
    asg = PositionAssignment(asg)
    a = pb_ips(sessions, asg, theta).value
    b = pb_ips(sessions, asg, theta.scaled(c)).value
    assert abs(a - b) <= 1e-12


@settings(max_examples=100)
@given(sessions_strategy(), curves, st.randoms())
def test_truncation_ignores_tail(sessions, theta, rnd):
    from pbope.domain import Impression, Session

    asg = {}
    altered = []
    for s in sessions:
        for imp in s.impressions:
            asg[(s.session_id, imp.item)] = rnd.randint(1, 10)
        K = session_truncation(s) or 0
        # replace items below K with fresh ids, different assignments and extra length
        tail = [Impression(f"new{s.session_id}-{j}", K + 1 + j, False) for j in range(rnd.randint(0, 4))]
        for imp in tail:
            asg[(s.session_id, imp.item)] = rnd.randint(1, 10)
        imps = tuple(i for i in s.impressions if i.position <= K) + tuple(tail)
        altered.append(Session(s.session_id, s.day, s.context, imps, max(s.views, len(imps))))
    asg = PositionAssignment(asg)
    assert pb_ips(sessions, asg, theta).value == pb_ips(altered, asg, theta).value


@settings(max_examples=100)
@given(sessions_strategy(), curves, st.floats(1.01, 5.0), st.randoms())
def test_clipping_monotone(sessions, theta, M, rnd):
    asg = PositionAssignment(
        {(s.session_id, imp.item): rnd.randint(1, 10) for s in sessions for imp in s.impressions}
    )
    plain = pb_ips(sessions, asg, theta)
    clipped = pb_ips(sessions, asg, theta, EstimatorConfig(clip_ratio=M))
    ref = _reference_ips(sessions, asg, theta, clip=M)
    assert clipped.value == pytest.approx(ref, rel=1e-12, abs=1e-12)
    if clipped.clipped_terms:
        assert clipped.value < plain.value
    else:
        assert clipped.value == plain.value
    assert plain.clipped_terms == 0


def test_appearance_denominator():
    sessions = [make_session([1, 0, 0, 0], sid="a"), make_session([0, 1], sid="b")]
    res = pb_ips(sessions, PositionAssignment.identity(sessions), PositionBiasCurve((1.0,)),
                 EstimatorConfig(denominator="appearances"))
    assert res.n == 6 and res.value == pytest.approx(2 / 6)
    assert res.value == pytest.approx(ctr_moo(sessions))


def test_std_error_matches_sample_formula():
    sessions = [make_session(c, sid=f"s{i}") for i, c in enumerate([[1, 1], [0, 0], [1, 0], [0, 1], [1, 1]])]
    res = pb_ips(sessions, PositionAssignment.identity(sessions), PositionBiasCurve((1.0, 0.5)))
    per = np.array([2, 0, 1, 1, 2], dtype=float)
    assert res.std_error == pytest.approx(per.std(ddof=1) / math.sqrt(5))


def test_ctr_examples():
    assert ctr_moo([make_session([1, 1] + [0] * 8)]) == pytest.approx(0.2)
    assert ctr_moo([make_session([0] * 5), make_session([0] * 3)]) == 0.0
    assert ctr_text_search([make_session([1, 1, 1] + [0] * 7)]) == pytest.approx(0.3)
    two = [make_session([1] + [0] * 4, sid="a"), make_session([1, 1, 1] + [0] * 7, sid="b")]
    assert ctr_text_search(two) == pytest.approx(0.25)


def test_ctr_text_search_views_integrity():
    from pbope.domain import ContextId, Impression, Session

    broken = Session.unchecked("x", 0, ContextId("u"), (Impression("a", 1, True),), 0)
    with pytest.raises(DataIntegrityError):
        ctr_text_search([broken])


def test_ctr_against_analytic_expectation():
    cfg = make_sim_config(num_contexts=20, num_items=8, list_length=6, sessions_per_day=50_000, seed=13)
    pol = noisy_policy(cfg.relevance, 0.3, 2)
    log = simulate_log(pol, cfg)
    from pbope.click_model import true_policy_value

    expected = true_policy_value(pol, cfg) / cfg.list_length
    per = np.array([s.n_clicks / s.views for s in log])
    sigma = per.std(ddof=1) / math.sqrt(per.size)
    # views == list length, so both definitions share the same expectation
    assert abs(ctr_moo(log) - expected) < 3 * sigma
    assert abs(ctr_text_search(log) - expected) < 3 * sigma


def test_swap_top_two_single_seed_within_three_se():
    cfg = make_sim_config(num_contexts=50, num_items=10, list_length=10, sessions_per_day=50_000, seed=3)
    control = noisy_policy(cfg.relevance, 0.3, 17)
    target = swap_top_two(control)
    log = simulate_log(control, cfg)
    res = pb_ips(log, rescore_log(log, target), cfg.theta_true)
    from pbope.click_model import true_policy_value

    assert abs(res.value - true_policy_value(target, cfg)) < 3 * res.std_error
