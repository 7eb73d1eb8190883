import math
import time
from dataclasses import replace

import numpy as np
import pytest

from pbope.click_model import make_sim_config, simulate_versioned_log
from pbope.domain import ContextId, Impression, PositionBiasCurve, RelevanceTable, Session
from pbope.em import EmConfig, aggregate, fit_position_bias, log_likelihood

from conftest import make_session


def _uniform_gamma_config(theta, gamma, sessions, seed, contexts=100, items=None):
    items = items or len(theta)
    cfg = make_sim_config(num_contexts=contexts, num_items=items, list_length=len(theta),
                          theta_true=theta, sessions_per_day=sessions // 8, days=8, seed=seed)
    rel = RelevanceTable({k: gamma for k in cfg.relevance.values})
    return cfg.with_relevance(rel)


def test_flat_examination_recovered():
    cfg = _uniform_gamma_config([1.0, 1.0, 1.0], 0.3, 100_000, seed=1)
    # noise decides the ranking because relevance is constant
    log = simulate_versioned_log(cfg, versions=8, noise=1.0)
    fit = fit_position_bias(log)
    assert np.max(np.abs(np.array(fit.theta.theta) - 1.0)) <= 0.05


def test_never_clicked_position_not_above_observed():
    # items alternate between positions 1 and 2; position 2 never gets a click
    sessions = []
    for n in range(400):
        a, b = ("x", "y") if n % 2 == 0 else ("y", "x")
        sessions.append(Session(f"s{n}", 0, ContextId("u"),
                                (Impression(a, 1, n % 4 < 2), Impression(b, 2, False)), 2))
    fit = fit_position_bias(sessions, EmConfig(min_pair_impressions=0))
    assert fit.theta.theta[1] <= fit.theta.theta[0]
    assert fit.theta.theta[1] == pytest.approx(EmConfig().theta_floor)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        fit_position_bias([])


def test_position_without_impressions_is_floored_and_flagged():
    sessions = [make_session([1, 0], sid=f"s{i}", items=["a", "b"] if i % 2 else ["b", "a"]) for i in range(50)]
    fit = fit_position_bias(sessions, max_position=4)
    assert fit.diagnostics["empty_positions"] == [3, 4]
    assert fit.theta.theta[2] == fit.theta.theta[3] == EmConfig().theta_floor


def test_log_likelihood_examples():
    s = make_session([1], items=["a"])
    theta = PositionBiasCurve((1.0,))
    gamma = RelevanceTable({(s.context, "a"): 0.5})
    assert log_likelihood([s], theta, gamma) == pytest.approx(math.log(0.5))
    assert log_likelihood([], theta, gamma) == 0.0


def test_log_likelihood_clamps_certain_non_click():
    s = make_session([0], items=["a"])
    diag = {}
    ll = log_likelihood([s], PositionBiasCurve((1.0,)), RelevanceTable({(s.context, "a"): 1.0}), diag)
    assert diag["clamped"] == 1
    assert ll == pytest.approx(math.log(1e-12), rel=1e-3)


@pytest.fixture(scope="module")
def power_law_fit():
    cfg = make_sim_config(num_contexts=100, num_items=10, list_length=10, sessions_per_day=5000, days=8, seed=21)
    log = simulate_versioned_log(cfg, versions=8)
    return log, fit_position_bias(log)


def test_likelihood_trace_non_decreasing(power_law_fit):
    _, fit = power_law_fit
    trace = np.array(fit.log_likelihood_trace)
    assert trace.size >= 2
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:]))


def test_fit_invariants(power_law_fit):
    log, fit = power_law_fit
    theta = np.array(fit.theta.theta)
    assert theta[0] == 1.0
    assert np.all((theta >= EmConfig().theta_floor) & (theta <= 1.0))
    assert fit.iterations_run <= EmConfig().max_iterations
    assert fit.converged
    assert np.max(np.abs(theta - 1 / np.arange(1, 11))) < 0.05


def test_final_likelihood_matches_direct_evaluation(power_law_fit):
    log, fit = power_law_fit
    # normalization rescales theta and gamma jointly, so the likelihood is unchanged
    direct = log_likelihood(log, fit.theta, fit.gamma)
    assert direct == pytest.approx(fit.final_log_likelihood, rel=1e-6)


def test_scale_identifiability():
    """theta*c with gamma/c gives identical click probabilities, so the same normalized fit."""
    base = make_sim_config(num_contexts=60, num_items=6, list_length=6, sessions_per_day=4000, days=6,
                           seed=5, gamma_range=(0.05, 0.45), theta_true=[1, 0.8, 0.6, 0.45, 0.3, 0.2])
    c = 0.5
    scaled = replace(
        base,
        theta_true=base.theta_true.scaled(c),
        relevance=RelevanceTable({k: v / c for k, v in base.relevance.values.items()}),
    )
    a = fit_position_bias(simulate_versioned_log(base, versions=6))
    b = fit_position_bias(simulate_versioned_log(scaled, versions=6))
    assert np.max(np.abs(np.array(a.theta.theta) - np.array(b.theta.theta))) <= 0.02


def test_sparse_pairs_are_pooled():
    sessions = [make_session([i % 3 == 0, 0], sid=f"s{i}", user=f"user{i}") for i in range(30)]
    cells = aggregate(sessions, 2, min_pair_impressions=10)
    assert cells.pooled is not None and cells.n_params == 1
    fit = fit_position_bias(sessions, EmConfig(min_pair_impressions=10))
    assert fit.diagnostics["pooled_pairs"] == 60
    assert fit.gamma.default == fit.gamma.get(sessions[0].context, "i0")


def test_em_config_validation():
    for bad in (dict(max_iterations=0), dict(theta_floor=0.0), dict(theta_floor=1.0), dict(tolerance=0.0)):
        with pytest.raises(ValueError):
            EmConfig(**bad)


def test_to_dict_shape(power_law_fit):
    _, fit = power_law_fit
    d = fit.to_dict()
    assert set(d) == {"theta", "diagnostics"} and len(d["theta"]) == 10
    assert d["diagnostics"]["converged"] is True
