"""Asset risks and the temperature-softmax attack distribution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .netmodel import Attack, Network


@dataclass
class AttackDistribution:
    assets: list[Attack]
    risk: np.ndarray
    prob: np.ndarray
    tau: float
    top_k: list[int]
    mass_k: float

    def ranked(self) -> list[int]:
        """Asset indices by descending probability, ties by ascending branch id."""
        return sorted(range(len(self.assets)), key=lambda i: (-self.prob[i], self.assets[i].branch_id))

    def top_attacks(self) -> list[Attack]:
        return [self.assets[i] for i in self.top_k]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` i.i.d. asset indices drawn from the distribution (inverse-CDF on uniforms)."""
        cdf = np.cumsum(self.prob)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(n), side="right")

    def restricted(self, k: int) -> "AttackDistribution":
        """Same distribution with a different top-K size."""
        top, mass = top_k_mass(self, k)
        return AttackDistribution(self.assets, self.risk, self.prob, self.tau, top, mass)

    def to_records(self, net: Network | None = None) -> list[dict]:
        rmin, rmax = float(self.risk.min()), float(self.risk.max())
        span = rmax - rmin
        out = []
        for rank, i in enumerate(self.ranked(), start=1):
            a = self.assets[i]
            rec = {
                "rank": rank,
                "branch_id": a.branch_id,
                "from_bus": a.end_buses[0],
                "to_bus": a.end_buses[1],
                "risk": float(self.risk[i]),
                "prob": float(self.prob[i]),
                "score_0_100": 100.0 * (float(self.risk[i]) - rmin) / span if span > 0 else 100.0,
                "top_k": i in self.top_k,
            }
            if net is not None:
                rec["feeder"] = net.feeder_of[a.end_buses[1]]
            out.append(rec)
        return out

    @classmethod
    def one_hot(cls, assets: Sequence[Attack], index: int) -> "AttackDistribution":
        prob = np.zeros(len(assets))
        prob[index] = 1.0
        return cls(list(assets), prob.copy(), prob, 1.0, [index], 1.0)


def asset_risk(rho: np.ndarray, assets: Sequence[Attack], index: dict[int, int] | None = None) -> np.ndarray:
    """Mean of the two end-bus scores. ``index`` maps bus id to row of ``rho`` (identity if omitted)."""
    rho = np.asarray(rho, dtype=float)
    pos = (lambda b: index[b]) if index is not None else (lambda b: b)
    return np.array([0.5 * (rho[pos(a.end_buses[0])] + rho[pos(a.end_buses[1])]) for a in assets])


def softmax(risk: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("temperature must be positive")
    risk = np.asarray(risk, dtype=float)
    e = np.exp((risk - risk.max()) / tau)
    return e / e.sum()


def top_k_mass(dist: AttackDistribution, k: int) -> tuple[list[int], float]:
    n = len(dist.prob)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside 1..{n}")
    top = dist.ranked()[:k]
    return top, float(dist.prob[top].sum())


def attack_distribution(risk: np.ndarray, tau: float, k: int,
                        assets: Sequence[Attack] | None = None) -> AttackDistribution:
    risk = np.asarray(risk, dtype=float)
    if assets is None:
        assets = [Attack(i, (i, i)) for i in range(risk.size)]
    if len(assets) != risk.size:
        raise ValueError("one risk value per asset is required")
    prob = softmax(risk, tau)
    dist = AttackDistribution(list(assets), risk, prob, float(tau), [], 0.0)
    dist.top_k, dist.mass_k = top_k_mass(dist, k)
    return dist
