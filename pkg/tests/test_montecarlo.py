import math

import numpy as np
import pytest

from gridgame.defender import DefenseCandidate
from gridgame.montecarlo import (
    TrialLedger, attack_frequencies, evaluate_monte_carlo, extract_feeder_rule, robust_rank, summarize,
    total_variation,
)
from gridgame.netmodel import Attack
from gridgame.vuln import AttackDistribution, attack_distribution

ASSETS = [Attack(1, (1, 2)), Attack(2, (2, 3)), Attack(3, (3, 4))]


def by_branch(d, attack):
    return np.array([float(attack.branch_id), 2.0 * attack.branch_id, 0.1 * attack.branch_id])


def ledger(mu, sigma):
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    return TrialLedger(np.zeros(2, int), np.zeros((2, 3)), mu, sigma, sigma, mu, 0.1)


def test_hand_example():
    s = summarize([0.0, 0.0, 1.0, 1.0])
    sd = math.sqrt(1 / 3)
    assert abs(s["mu"][0] - 0.5) < 1e-12
    assert abs(s["sigma"][0] - sd) < 1e-12
    assert abs(s["ci95"][0] - 1.96 * sd / 2) < 1e-12
    assert s["sigma"][0] == pytest.approx(0.5774, abs=1e-4)
    assert s["ci95"][0] == pytest.approx(0.5659, abs=1e-4)


def test_cvar_worst_tail():
    x = np.arange(1.0, 11.0)
    assert summarize(x, 0.1)["cvar"][0] == 10.0
    assert summarize(x, 0.25)["cvar"][0] == pytest.approx((10 + 9 + 8) / 3)  # ceil(2.5) = 3


def test_needs_two_samples():
    with pytest.raises(ValueError):
        summarize([1.0])
    with pytest.raises(ValueError):
        evaluate_monte_carlo(None, AttackDistribution.one_hot(ASSETS, 0), 1, 0, by_branch)


def test_one_hot_is_degenerate():
    led = evaluate_monte_carlo(None, AttackDistribution.one_hot(ASSETS, 2), 50, 0, by_branch)
    assert np.all(led.sigma_hat == 0) and np.all(led.ci95 == 0)
    assert np.array_equal(led.mu_hat, by_branch(None, ASSETS[2]))


def test_same_seed_same_ledger():
    dist = attack_distribution(np.array([0.2, 0.5, 0.9]), 0.5, 2, ASSETS)
    a = evaluate_monte_carlo(None, dist, 300, 7, by_branch)
    b = evaluate_monte_carlo(None, dist, 300, 7, by_branch)
    assert np.array_equal(a.attacks, b.attacks) and np.array_equal(a.samples, b.samples)
    assert a.to_dict() == b.to_dict()


def test_ci_shrinks_like_inverse_root_n():
    dist = attack_distribution(np.array([0.2, 0.5, 0.9]), 0.5, 2, ASSETS)
    small = evaluate_monte_carlo(None, dist, 500, 11, by_branch)
    large = evaluate_monte_carlo(None, dist, 2000, 11, by_branch)
    ratio = large.ci95[0] / small.ci95[0]
    assert abs(ratio - 0.5) <= 0.25 * 0.5


def test_frequencies_converge_on_bundled_distribution(net69):
    assets = net69.attackable_assets()
    rng = np.random.default_rng(0)
    dist = attack_distribution(rng.random(len(assets)), 0.5, 5, assets)
    idx = dist.sample(np.random.default_rng(42), 10_000)
    assert total_variation(attack_frequencies(idx, len(assets)), dist.prob) < 0.05


def test_rank_gamma_zero_is_mean_order():
    leds = [ledger([3, 1, 1], [9, 9, 9]), ledger([1, 1, 1], [0, 0, 0]), ledger([2, 5, 5], [1, 1, 1])]
    w = (0.6, 0.1, 0.3)
    order = robust_rank(range(3), leds, w, 0.0, 3)
    means = [float(np.dot(w, led.mu_hat)) for led in leds]
    assert order == sorted(range(3), key=means.__getitem__)


def test_rank_prefers_lower_spread():
    leds = [ledger([1, 1, 1], [2, 2, 2]), ledger([1, 1, 1], [1, 1, 1])]
    assert robust_rank(range(2), leds, (0.6, 0.1, 0.3), 1.0, 1) == [1]


def test_rank_example():
    leds = [ledger([10, 0, 0], [0, 0, 0]), ledger([9, 0, 0], [4, 0, 0])]
    assert robust_rank(range(2), leds, (1, 0, 0), 0.5, 2) == [0, 1]
    assert [led.robust_score for led in leds] == [10.0, 11.0]


def test_rank_f1_only_matches_mu1_order():
    rng = np.random.default_rng(3)
    leds = [ledger(rng.random(3), rng.random(3)) for _ in range(10)]
    order = robust_rank(range(10), leds, (1, 0, 0), 0.0, 10)
    assert order == list(np.argsort([led.mu_hat[0] for led in leds], kind="stable"))


def test_rank_errors():
    leds = [ledger([1, 1, 1], [0, 0, 0])]
    with pytest.raises(ValueError):
        robust_rank(range(1), leds, (0.5, 0.5, 0.5), 0.0, 1)
    with pytest.raises(ValueError):
        robust_rank(range(1), leds, (1, 0, 0), -1.0, 1)
    with pytest.raises(ValueError):
        robust_rank(range(1), leds, (1, 0, 0), 0.0, 2)


def _top(net, sigmas, dist, n=40):
    top = [DefenseCandidate(net.base_dispatch, np.array(s)) for s in sigmas]
    leds = [evaluate_monte_carlo(d, dist, n, 42, lambda d, a: np.zeros(3)) for d in top]
    return top, leds


def _dist(net):
    assets = net.attackable_assets()
    return attack_distribution(np.linspace(0, 1, len(assets)), 0.5, 5, assets)


def test_unanimous_tie_heads_rule(net69):
    dist = _dist(net69)
    top, leds = _top(net69, [[0, 0, 1, 0, 0], [0, 0, 1, 0, 1], [0, 0, 1, 0, 0]], dist)
    rec = extract_feeder_rule(top, leds, net69, dist)
    assert rec.rule[0]["tie_id"] == net69.tie_switches[2].id
    assert rec.rule[0]["c_s"] == 1.0
    assert rec.rule[1]["c_s"] == pytest.approx(1 / 3)
    assert all(0.0 <= row["c_s"] <= 1.0 for row in rec.tie_usage)
    assert sum(row["attacks"] for row in rec.stressed_feeders) == len(top) * 40


def test_no_reconfiguration_marker(net69):
    dist = _dist(net69)
    top, leds = _top(net69, [[0] * 5, [0] * 5], dist)
    rec = extract_feeder_rule(top, leds, net69, dist)
    assert rec.rule == [] and rec.no_reconfiguration
    assert rec.to_dict()["no_reconfiguration_used"] is True


def test_equal_usage_ordered_by_feeder_pressure(net69):
    dist = _dist(net69)
    top, leds = _top(net69, [[1, 1, 1, 1, 1]], dist)
    rec = extract_feeder_rule(top, leds, net69, dist)
    pressure = [row["feeder_attacks"] for row in rec.rule]
    assert pressure == sorted(pressure, reverse=True)
    for a, b in zip(rec.rule, rec.rule[1:]):
        if a["feeder_attacks"] == b["feeder_attacks"]:
            assert a["tie_id"] < b["tie_id"]


def test_empty_top_rejected(net69):
    with pytest.raises(ValueError):
        extract_feeder_rule([], [], net69, _dist(net69))
