"""Stackelberg leader selection over a Pareto front and the attacker's best response."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .defender import RISK_NEUTRAL, aggregate_objectives
from .vuln import AttackDistribution

EXPECTED = "expected"
SECURITY = "security"


@dataclass(frozen=True)
class LeaderConfig:
    mode: str = EXPECTED
    w: tuple[float, float, float] = (0.6, 0.1, 0.3)
    eta: float = 10.0
    zeta: float = 0.01
    samples: int | None = None  # None: exact expectation over the support of pi
    seed: int = 42

    def __post_init__(self):
        if self.mode not in (EXPECTED, SECURITY):
            raise ValueError(f"unknown leader mode {self.mode!r}")
        w = np.asarray(self.w, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("w must be three non-negative weights summing to 1")
        if self.eta < 0 or self.zeta < 0:
            raise ValueError("eta and zeta must be non-negative")

    def security_cost(self, f) -> float:
        f1, f2, f3 = np.asarray(f, dtype=float)
        return float(f1 + self.eta * f3 + self.zeta * f2)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "w": list(self.w), "eta": self.eta, "zeta": self.zeta,
                "samples": self.samples, "seed": self.seed}


Evaluate = Callable  # (candidate, attack) -> objective 3-vector


def leader_payoff(d, dist: AttackDistribution, cfg: LeaderConfig, evaluator: Evaluate) -> float:
    """Expected weighted cost or worst-case security cost over the top-K attacks."""
    if cfg.mode == EXPECTED:
        fbar = aggregate_objectives(d, dist, RISK_NEUTRAL, cfg.samples, cfg.seed, evaluator)
        return float(np.dot(cfg.w, fbar))
    if not dist.top_k:
        raise ValueError("security mode needs a populated top-K set")
    return max(cfg.security_cost(evaluator(d, dist.assets[i])) for i in dist.top_k)


def attack_damage(d, attack, cfg: LeaderConfig, evaluator: Evaluate) -> float:
    """Defender cost the follower tries to inflict: wᵀF in expected mode, the security cost otherwise."""
    f = evaluator(d, attack)
    if cfg.mode == EXPECTED:
        return float(np.dot(cfg.w, np.asarray(f, dtype=float)))
    return cfg.security_cost(f)


def follower_payoff(d, attack, cfg: LeaderConfig, evaluator: Evaluate) -> float:
    """U_A with the defender-cost sign convention: minus the inflicted damage."""
    return -attack_damage(d, attack, cfg, evaluator)


def best_response(d, dist: AttackDistribution, cfg: LeaderConfig, evaluator: Evaluate) -> tuple[int, float]:
    """Index into ``dist.assets`` of the most damaging attack (first on ties) and its damage."""
    support = range(len(dist.assets)) if cfg.mode == EXPECTED else dist.top_k
    best, worst = -1, -np.inf
    for i in support:
        dmg = attack_damage(d, dist.assets[i], cfg, evaluator)
        if dmg > worst:
            best, worst = i, dmg
    return best, worst


@dataclass
class StackelbergResult:
    index: int
    d_star: object
    attack_index: int
    a_star: object
    phi: float
    follower_utility: float
    payoffs: list[float]
    config: LeaderConfig

    def to_dict(self, net=None) -> dict:
        return {
            "candidate_index": self.index,
            "defense": self.d_star.to_dict(net) if hasattr(self.d_star, "to_dict") else None,
            "attack": getattr(self.a_star, "label", str(self.a_star)),
            "attack_branch_id": getattr(self.a_star, "branch_id", None),
            "phi": self.phi,
            "follower_utility": self.follower_utility,
            "payoffs": self.payoffs,
            "leader": self.config.to_dict(),
        }


def select_strategy(front: Sequence, dist: AttackDistribution, cfg: LeaderConfig | None = None,
                    evaluator: Evaluate | None = None) -> StackelbergResult:
    """Leader commits to argmin of its payoff over the front; follower best-responds by enumeration.

    The follower picks the attack that inflicts the largest defender cost; the
    reported ``follower_utility`` is minus that cost.
    """
    cfg = cfg or LeaderConfig()
    members = list(getattr(front, "members", front))
    if not members:
        raise ValueError("cannot select a strategy from an empty front")
    if evaluator is None:
        raise ValueError("an evaluator is required")
    payoffs = [leader_payoff(d, dist, cfg, evaluator) for d in members]
    k = int(np.argmin(payoffs))  # first index among ties
    j, damage = best_response(members[k], dist, cfg, evaluator)
    return StackelbergResult(k, members[k], j, dist.assets[j], payoffs[k], -damage, payoffs, cfg)
