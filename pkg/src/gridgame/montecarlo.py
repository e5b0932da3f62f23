"""Monte Carlo trials of candidate defenses, robust ranking and the tie-usage operating rule."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .netmodel import Network
from .vuln import AttackDistribution

Z95 = 1.96
METRICS = ("f1", "f2", "f3")


def summarize(samples, alpha: float = 0.1) -> dict:
    """Mean, sample std (n-1), 95% CI half-width and CVaR of the worst ceil(alpha*n) samples, per column."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    const = np.ptp(x, axis=0) == 0
    # constant columns are reported exactly; summation rounding would leave ~1e-16 spread
    mu = np.where(const, x[0], x.mean(axis=0))
    sd = np.where(const, 0.0, x.std(axis=0, ddof=1))
    tail = max(1, math.ceil(alpha * n))
    worst = -np.sort(-x, axis=0)[:tail]
    return {"mu": mu, "sigma": sd, "ci95": Z95 * sd / math.sqrt(n), "cvar": worst.mean(axis=0)}


@dataclass
class TrialLedger:
    attacks: np.ndarray  # sampled asset indices, one per trial
    samples: np.ndarray  # trials x 3 objective values
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    ci95: np.ndarray
    cvar: np.ndarray
    alpha: float
    robust_score: float | None = None

    @property
    def n(self) -> int:
        return len(self.attacks)

    def feeder_counts(self, dist: AttackDistribution, net: Network) -> Counter:
        return Counter(net.feeder_of[dist.assets[i].end_buses[1]] for i in self.attacks)

    def to_dict(self) -> dict:
        out = {"n": self.n, "alpha": self.alpha, "robust_score": self.robust_score}
        for key in ("mu_hat", "sigma_hat", "ci95", "cvar"):
            out[key] = dict(zip(METRICS, map(float, getattr(self, key))))
        return out


def evaluate_monte_carlo(d, dist: AttackDistribution, n: int, seed, evaluator: Callable,
                         alpha: float = 0.1) -> TrialLedger:
    """Draw ``n`` i.i.d. attacks from ``dist`` and record the objective vector of ``d`` under each."""
    if n < 2:
        raise ValueError("Monte Carlo needs n >= 2 trials")
    idx = dist.sample(np.random.default_rng(seed), n)
    cache = {}
    rows = []
    for i in idx:
        if i not in cache:
            cache[i] = np.asarray(evaluator(d, dist.assets[i]), dtype=float)
        rows.append(cache[i])
    samples = np.array(rows)
    s = summarize(samples, alpha)
    return TrialLedger(idx, samples, s["mu"], s["sigma"], s["ci95"], s["cvar"], alpha)


def attack_frequencies(idx, n_assets: int) -> np.ndarray:
    return np.bincount(np.asarray(idx, dtype=int), minlength=n_assets) / len(idx)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def robust_score(ledger: TrialLedger, w, gamma: float) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ ledger.mu_hat + gamma * (w @ ledger.sigma_hat))


def robust_rank(front: Sequence, ledgers: Sequence[TrialLedger], w, gamma: float, m: int) -> list[int]:
    """Indices of the ``m`` defenses with the lowest mean-plus-spread score (stable on ties)."""
    members = list(getattr(front, "members", front))
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("w must be non-negative and sum to 1")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if len(ledgers) != len(members):
        raise ValueError("one ledger per front member is required")
    if not 1 <= m <= len(members):
        raise ValueError("m must lie in [1, |front|]")
    for led in ledgers:
        led.robust_score = robust_score(led, w, gamma)
    return sorted(range(len(members)), key=lambda i: ledgers[i].robust_score)[:m]


@dataclass
class Recommendation:
    top_defenses: list[dict]
    rule: list[dict]
    stressed_feeders: list[dict]
    tie_usage: list[dict] = field(default_factory=list)

    @property
    def no_reconfiguration(self) -> bool:
        return not self.rule

    def to_dict(self) -> dict:
        return {
            "top_defenses": self.top_defenses,
            "rule": self.rule,
            "no_reconfiguration_used": self.no_reconfiguration,
            "stressed_feeders": self.stressed_feeders,
            "tie_usage": self.tie_usage,
        }


def extract_feeder_rule(top: Sequence, ledgers: Sequence[TrialLedger], net: Network,
                        dist: AttackDistribution) -> Recommendation:
    """Tie usage frequencies over the top defenses and the feeder-aware closing order.

    ``top`` and ``ledgers`` are aligned: one ledger of trials per top defense.
    """
    if not top:
        raise ValueError("need at least one top defense")
    ties = net.tie_switches
    trials = sum(led.n for led in ledgers)
    usage = np.zeros(len(ties))
    feeder_hits: Counter = Counter()
    for d, led in zip(top, ledgers):
        usage += np.asarray(d.sigma, dtype=float) * led.n  # sigma is constant across a defense's trials
        feeder_hits.update(led.feeder_counts(dist, net))
    c = usage / trials

    def bridged(t) -> set:
        return {net.feeder_of[t.from_bus], net.feeder_of[t.to_bus]}

    def pressure(t) -> int:
        return sum(feeder_hits.get(f, 0) for f in bridged(t))

    used = [s for s in range(len(ties)) if c[s] > 0]
    used.sort(key=lambda s: (-c[s], -pressure(ties[s]), ties[s].id))
    rule = [{"tie_id": ties[s].id, "tie": f"{ties[s].from_bus}-{ties[s].to_bus}", "c_s": float(c[s]),
             "feeders": sorted(bridged(ties[s])), "feeder_attacks": pressure(ties[s])} for s in used]
    usage_rows = [{"tie_id": t.id, "tie": f"{t.from_bus}-{t.to_bus}", "c_s": float(c[s])}
                  for s, t in enumerate(ties)]
    stressed = [{"feeder": int(f), "attacks": int(k)}
                for f, k in sorted(feeder_hits.items(), key=lambda kv: (-kv[1], kv[0]))]
    tops = []
    for rank, (d, led) in enumerate(zip(top, ledgers), start=1):
        row = {"rank": rank, **(d.to_dict(net) if hasattr(d, "to_dict") else {}), "stats": led.to_dict()}
        tops.append(row)
    return Recommendation(tops, rule, stressed, usage_rows)
