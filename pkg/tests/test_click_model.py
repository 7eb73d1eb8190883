import itertools
import json

import numpy as np
import pytest

from pbope.click_model import (
    SimConfig,
    SimConfigError,
    config_from_dict,
    config_to_dict,
    make_sim_config,
    read_sidecar,
    simulate_day,
    simulate_log,
    simulate_session,
    true_policy_value,
    write_sidecar,
)
from pbope.domain import ContextId, PositionBiasCurve, RankingPolicy, RelevanceTable, RewardSpec, alpha_weight
from pbope.ingest import session_to_line
from pbope.policies import lexicographic_policy, noisy_policy, relevance_policy, swap_top_two


def _fixed_config(theta, gammas, sessions_per_day=10, days=1, seed=0, contexts=("u0",)):
    ctxs = tuple(ContextId(c) for c in contexts)
    items = tuple(f"i{j}" for j in range(len(gammas)))
    rel = RelevanceTable({(c, i): g for c in ctxs for i, g in zip(items, gammas)})
    return SimConfig(
        num_items=len(items), list_length=len(theta), theta_true=PositionBiasCurve(tuple(theta)),
        relevance=rel, contexts=ctxs, sessions_per_day=sessions_per_day, days=days, seed=seed, items=items,
    )


def test_no_examination_means_no_clicks():
    # theta must be > 0, so use the smallest positive value: clicks need u < 5e-324
    cfg = _fixed_config([5e-324] * 4, [1.0] * 4, sessions_per_day=500)
    assert sum(s.n_clicks for s in simulate_log(lexicographic_policy(), cfg)) == 0


def test_certain_click_everywhere():
    cfg = _fixed_config([1.0] * 5, [1.0] * 5, sessions_per_day=50)
    for s in simulate_log(lexicographic_policy(), cfg):
        assert all(imp.clicked for imp in s.impressions)
        assert s.views == 5


def test_click_rate_at_position_two_converges():
    cfg = _fixed_config([1.0, 0.5], [1.0, 1.0], sessions_per_day=100_000)
    log = simulate_log(lexicographic_policy(), cfg)
    rate = np.mean([s.impressions[1].clicked for s in log])
    assert abs(rate - 0.5) < 0.01


def test_per_position_rates_within_three_sigma():
    theta = [1.0, 0.6, 0.3]
    gammas = [0.8, 0.5, 0.9]
    cfg = _fixed_config(theta, gammas, sessions_per_day=100_000, seed=4)
    log = simulate_log(lexicographic_policy(), cfg)
    for k in range(3):
        p = theta[k] * gammas[k]
        rate = np.mean([s.impressions[k].clicked for s in log])
        assert abs(rate - p) < 3 * np.sqrt(p * (1 - p) / len(log))


def test_log_shape_and_days():
    cfg = make_sim_config(num_contexts=4, sessions_per_day=3, days=2)
    log = simulate_log(relevance_policy(cfg.relevance), cfg)
    assert len(log) == 6
    assert {s.day for s in log} == {0, 1}
    assert len({s.session_id for s in log}) == 6


def test_same_seed_same_bytes_different_seed_differs():
    cfg = make_sim_config(num_contexts=5, sessions_per_day=200, days=2, seed=9)
    pol = relevance_policy(cfg.relevance)
    a = "".join(map(session_to_line, simulate_log(pol, cfg)))
    b = "".join(map(session_to_line, simulate_log(pol, cfg)))
    assert a == b
    other = make_sim_config(num_contexts=5, sessions_per_day=200, days=2, seed=9)
    from dataclasses import replace

    c = "".join(map(session_to_line, simulate_log(pol, replace(other, seed=10))))
    assert c != a


def test_session_matches_its_slot_in_the_log():
    cfg = make_sim_config(num_contexts=6, sessions_per_day=40, days=1, seed=2)
    pol = noisy_policy(cfg.relevance, 0.5, 1)
    day = simulate_day(pol, cfg, 3)
    for idx in (0, 17, 39):
        s = simulate_session(pol, day[idx].context, cfg, (3, idx))
        assert s == day[idx]


def test_unknown_context_is_config_error():
    cfg = make_sim_config(num_contexts=2)
    with pytest.raises(SimConfigError):
        simulate_session(relevance_policy(cfg.relevance), ContextId("nobody"), cfg, (0, 0))


def test_config_validation():
    with pytest.raises(SimConfigError):
        make_sim_config(list_length=12, num_items=10)
    with pytest.raises(SimConfigError):
        make_sim_config(sessions_per_day=0)


def test_true_value_examples():
    assert true_policy_value(lexicographic_policy(), _fixed_config([1, 0.5], [0.0, 0.0])) == 0.0
    cfg = _fixed_config([1.0, 0.5], [1.0, 0.4])
    assert true_policy_value(lexicographic_policy(), cfg) == pytest.approx(1.2, abs=1e-15)


def _enumerated_value(policy, config, reward):
    """Expectation by summing reward * probability over every click pattern."""
    L = config.list_length
    theta = config.theta_true.theta[:L]
    total = 0.0
    for w, ctx in zip(config.weights(), config.contexts):
        ranked = policy.rank(ctx, config.candidates(ctx))[:L]
        p = [theta[k] * config.relevance.get(ctx, ranked[k]) for k in range(L)]
        ev = 0.0
        for pattern in itertools.product((0, 1), repeat=L):
            prob = np.prod([p[k] if c else 1 - p[k] for k, c in enumerate(pattern)])
            ev += prob * sum(alpha_weight(reward, k + 1) for k, c in enumerate(pattern) if c)
        total += w * ev
    return total


@pytest.mark.parametrize("reward", list(RewardSpec))
def test_true_value_matches_enumeration(reward):
    cfg = make_sim_config(num_contexts=4, num_items=6, list_length=5, seed=3,
                          theta_true=[1, 0.7, 0.5, 0.3, 0.2], context_weights=[1, 2, 3, 4])
    pol = noisy_policy(cfg.relevance, 0.4, 8)
    assert true_policy_value(pol, cfg, reward) == pytest.approx(_enumerated_value(pol, cfg, reward), rel=1e-12)


def test_true_value_matches_monte_carlo():
    cfg = make_sim_config(num_contexts=3, num_items=4, list_length=3, seed=5, sessions_per_day=1_000_000,
                          theta_true=[1.0, 0.6, 0.35], context_weights=[0.5, 0.3, 0.2])
    pol = relevance_policy(cfg.relevance)
    log = simulate_log(pol, cfg)
    r = np.array([s.n_clicks for s in log], dtype=float)
    se = r.std(ddof=1) / np.sqrt(r.size)
    assert abs(r.mean() - true_policy_value(pol, cfg)) < 3 * se


def test_true_value_invariant_under_item_relabeling():
    cfg = _fixed_config([1.0, 0.5, 0.25], [0.9, 0.2, 0.5, 0.7])
    ctx = cfg.contexts[0]
    rename = {"i0": "z9", "i1": "a1", "i2": "m5", "i3": "b0"}
    rel2 = RelevanceTable({(ctx, rename[i]): cfg.relevance.get(ctx, i) for i in cfg.items})
    from dataclasses import replace

    cfg2 = replace(cfg, relevance=rel2, items=tuple(rename[i] for i in cfg.items))
    assert true_policy_value(relevance_policy(cfg.relevance), cfg) == pytest.approx(
        true_policy_value(relevance_policy(rel2), cfg2), abs=1e-15
    )


def test_swap_top_two_value_hand_computed():
    cfg = _fixed_config([1.0, 0.5], [0.8, 0.2])
    pol = swap_top_two(relevance_policy(cfg.relevance))
    assert true_policy_value(pol, cfg) == pytest.approx(1.0 * 0.2 + 0.5 * 0.8)


def test_sidecar_round_trip(tmp_path):
    cfg = make_sim_config(num_contexts=3, num_items=5, list_length=4, seed=77, queries=2)
    path = tmp_path / "truth.json"
    write_sidecar(cfg, path)
    d = json.loads(path.read_text())
    assert d["seed"] == 77 and "rng" in d and len(d["theta_true"]) == 4
    assert read_sidecar(path) == cfg


def test_config_from_generator_params():
    cfg = config_from_dict({"num_contexts": 3, "num_items": 5, "list_length": 4, "seed": 1})
    assert len(cfg.contexts) == 3 and cfg.list_length == 4
    assert config_from_dict(config_to_dict(cfg)) == cfg
