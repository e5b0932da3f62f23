"""NSGA-II defender search over DER setpoints and tie-switch states."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .admm import AdmmConfig, Partition, make_partition, project_feasibility
from .netmodel import Attack, Network
from .powerflow import ObjectiveVector, evaluate_scenario
from .vuln import AttackDistribution

log = logging.getLogger(__name__)

RISK_NEUTRAL = "risk-neutral"
RISK_AVERSE = "risk-averse"


@dataclass
class DefenseCandidate:
    u: np.ndarray  # kW per DER
    sigma: np.ndarray  # 0/1 per tie switch
    feasible: bool = False
    objectives: np.ndarray | None = None
    rank: int | None = None
    crowding: float = 0.0

    def key(self) -> tuple[bytes, bytes]:
        return (np.asarray(self.u, dtype=float).tobytes(), np.asarray(self.sigma, dtype=np.int8).tobytes())

    def to_dict(self, net: Network | None = None) -> dict:
        out = {
            "u": [float(x) for x in self.u],
            "sigma": [int(s) for s in self.sigma],
            "feasible": bool(self.feasible),
            "objectives": None if self.objectives is None else [float(x) for x in self.objectives],
        }
        if net is not None:
            out["closed_ties"] = [
                f"{t.from_bus}-{t.to_bus}" for t, s in zip(net.tie_switches, self.sigma) if s
            ]
        return out


def null_defense(net: Network) -> DefenseCandidate:
    """Base dispatch with every tie open: doing nothing."""
    return DefenseCandidate(net.base_dispatch.copy(), np.zeros(len(net.tie_switches), dtype=int))


class Evaluator:
    """Memoised objective evaluation for one network; results are pure functions of the inputs."""

    def __init__(self, net: Network):
        self.net = net
        self._cache: dict = {}
        self.calls = 0

    def __call__(self, d, attack: Attack | None) -> ObjectiveVector:
        key = (*DefenseCandidate.key(d), None if attack is None else attack.branch_id)
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            hit = evaluate_scenario(self.net, d.u, d.sigma, attack)[0]
            self._cache[key] = hit
        return hit


# ---------------------------------------------------------------------------
# risk aggregation

def support(dist: AttackDistribution, mode: str, samples: int | None, seed) -> list[tuple[Attack, float]]:
    """Attacks (with weights) that enter the aggregate objective."""
    if mode == RISK_AVERSE:
        return [(dist.assets[i], 1.0) for i in dist.top_k]
    if mode != RISK_NEUTRAL:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if samples is None:
        return [(a, float(p)) for a, p in zip(dist.assets, dist.prob) if p > 0]
    if samples < 1:
        raise ValueError("risk-neutral aggregation needs samples >= 1")
    idx = dist.sample(np.random.default_rng(seed), samples)
    ids, counts = np.unique(idx, return_counts=True)
    return [(dist.assets[i], c / samples) for i, c in zip(ids, counts)]


def aggregate_objectives(d, dist: AttackDistribution, mode: str = RISK_AVERSE, samples: int | None = 16,
                         seed=0, evaluator: Evaluator | None = None, net: Network | None = None) -> np.ndarray:
    """Risk-neutral Monte Carlo mean (exact expectation when ``samples`` is None) or top-K max."""
    ev = evaluator or Evaluator(net)
    sup = support(dist, mode, samples, seed)
    vals = np.array([np.asarray(ev(d, a), dtype=float) for a, _ in sup])
    if mode == RISK_AVERSE:
        return vals.max(axis=0)
    w = np.array([p for _, p in sup])
    return (w[:, None] * vals).sum(axis=0) / w.sum()


# ---------------------------------------------------------------------------
# sorting and diversity

def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(pop: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fast non-dominated sorting; returns fronts as lists of indices into ``pop``."""
    f = np.asarray(pop, dtype=float)
    if f.size == 0:
        return []
    if f.ndim != 2:
        raise ValueError("objective vectors must share one length")
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite objective in population")
    n = f.shape[0]
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(front: Sequence[Sequence[float]]) -> np.ndarray:
    f = np.asarray(front, dtype=float)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("crowding distance needs a non-empty front")
    n, m = f.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(m):
        order = np.argsort(f[:, k], kind="stable")
        dist[order[0]] = dist[order[-1]] = np.inf
        span = f[order[-1], k] - f[order[0], k]
        if not np.isfinite(span) or span <= 0:
            continue
        gaps = (f[order[2:], k] - f[order[:-2], k]) / span
        dist[order[1:-1]] += gaps
    return dist


# ---------------------------------------------------------------------------
# variation

@dataclass
class VariationConfig:
    p_crossover: float = 0.9
    eta_c: float = 15.0
    eta_m: float = 20.0
    p_mutation: float | None = None  # per gene; default 1/n
    p_bitflip: float | None = None  # per bit; default 1/|S|


def sbx(x1, x2, lo, hi, eta, rng, p_gene=0.5):
    """Bounded simulated binary crossover (Deb & Agrawal) applied gene-wise."""
    c1, c2 = x1.copy(), x2.copy()
    for i in range(x1.size):
        if rng.random() > p_gene or abs(x1[i] - x2[i]) < 1e-14 or hi[i] <= lo[i]:
            continue
        y1, y2 = min(x1[i], x2[i]), max(x1[i], x2[i])
        span = y2 - y1
        r = rng.random()
        out = []
        for beta in (1.0 + 2.0 * (y1 - lo[i]) / span, 1.0 + 2.0 * (hi[i] - y2) / span):
            alpha = 2.0 - beta ** -(eta + 1.0)
            if r <= 1.0 / alpha:
                bq = (r * alpha) ** (1.0 / (eta + 1.0))
            else:
                bq = (1.0 / (2.0 - r * alpha)) ** (1.0 / (eta + 1.0))
            out.append(bq)
        a = 0.5 * ((y1 + y2) - out[0] * span)
        b = 0.5 * ((y1 + y2) + out[1] * span)
        a, b = np.clip(a, lo[i], hi[i]), np.clip(b, lo[i], hi[i])
        if x1[i] <= x2[i]:
            c1[i], c2[i] = a, b
        else:
            c1[i], c2[i] = b, a
    return c1, c2


def polynomial_mutation(x, lo, hi, eta, p_gene, rng):
    y = x.copy()
    for i in range(x.size):
        if rng.random() >= p_gene or hi[i] <= lo[i]:
            continue
        span = hi[i] - lo[i]
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        r = rng.random()
        power = 1.0 / (eta + 1.0)
        if r < 0.5:
            val = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1) ** (eta + 1.0)
            dq = val ** power - 1.0
        else:
            val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val ** power
        y[i] = np.clip(y[i] + dq * span, lo[i], hi[i])
    return y


def variation(parents: tuple[DefenseCandidate, DefenseCandidate], rng: np.random.Generator,
              lo: np.ndarray, hi: np.ndarray, cfg: VariationConfig | None = None):
    """SBX + polynomial mutation on ``u``; uniform crossover + bit flips on ``sigma``."""
    cfg = cfg or VariationConfig()
    p1, p2 = parents
    u1, u2 = np.asarray(p1.u, float).copy(), np.asarray(p2.u, float).copy()
    s1, s2 = np.asarray(p1.sigma, int).copy(), np.asarray(p2.sigma, int).copy()
    if rng.random() < cfg.p_crossover:
        u1, u2 = sbx(u1, u2, lo, hi, cfg.eta_c, rng)
        swap = rng.random(s1.size) < 0.5
        s1, s2 = np.where(swap, s2, s1), np.where(swap, s1, s2)
    pm = cfg.p_mutation if cfg.p_mutation is not None else 1.0 / max(u1.size, 1)
    pb = cfg.p_bitflip if cfg.p_bitflip is not None else 1.0 / max(s1.size, 1)
    children = []
    for u, s in ((u1, s1), (u2, s2)):
        u = polynomial_mutation(u, lo, hi, cfg.eta_m, pm, rng)
        flip = rng.random(s.size) < pb
        s = np.where(flip, 1 - s, s)
        children.append(DefenseCandidate(np.clip(u, lo, hi), s.astype(int)))
    return children[0], children[1]


def tournament(pop: Sequence[DefenseCandidate], rng: np.random.Generator) -> DefenseCandidate:
    i, j = rng.integers(len(pop), size=2)
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a


# ---------------------------------------------------------------------------
# main loop

@dataclass
class NsgaConfig:
    pop_size: int = 50
    generations: int = 50
    mode: str = RISK_AVERSE
    samples: int = 16
    seed: int = 42
    variation: VariationConfig = field(default_factory=VariationConfig)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    include_null: bool = True
    init_retries: int = 20  # fresh draws per slot when an initial candidate is infeasible
    project: bool = True


@dataclass
class ParetoFront:
    members: list[DefenseCandidate]
    history: list[dict] = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([m.objectives for m in self.members])

    def __len__(self) -> int:
        return len(self.members)


def assign_rank_and_crowding(pop: list[DefenseCandidate]) -> list[list[int]]:
    finite = [i for i, d in enumerate(pop) if d.objectives is not None and np.all(np.isfinite(d.objectives))]
    rest = [i for i in range(len(pop)) if i not in set(finite)]
    fronts = [[finite[k] for k in fr] for fr in non_dominated_sort([pop[i].objectives for i in finite])]
    if rest:
        fronts.append(rest)
    for r, fr in enumerate(fronts):
        objs = np.array([
            pop[i].objectives if pop[i].objectives is not None else np.full(3, np.inf) for i in fr
        ])
        cd = crowding_distance(objs) if np.all(np.isfinite(objs)) else np.zeros(len(fr))
        for i, c in zip(fr, cd):
            pop[i].rank = r
            pop[i].crowding = float(c)
    return fronts


def _survivors(pop: list[DefenseCandidate], n: int) -> list[DefenseCandidate]:
    fronts = assign_rank_and_crowding(pop)
    keep: list[int] = []
    for fr in fronts:
        if len(keep) + len(fr) <= n:
            keep.extend(fr)
        else:
            order = sorted(fr, key=lambda i: -pop[i].crowding)
            keep.extend(order[: n - len(keep)])
            break
    out = [pop[i] for i in keep]
    assign_rank_and_crowding(out)
    return out


class DefenderProblem:
    """Projection plus aggregated evaluation of candidates against an attack distribution.

    ``run_nsga2`` only needs ``bounds``, ``random_candidate(rng)`` and
    ``evaluate(d, generation, index)``; any object with those members can stand in.
    """

    def __init__(self, net: Network, dist: AttackDistribution, cfg: NsgaConfig,
                 evaluator: Evaluator | None = None):
        self.net, self.dist, self.cfg = net, dist, cfg
        self.ev = evaluator or Evaluator(net)
        self.bounds = net.der_bounds
        try:
            self.partition: Partition | None = make_partition(net)
        except ValueError:
            self.partition = None

    def seed_for(self, generation: int, index: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.cfg.seed, generation, index])

    def random_candidate(self, rng: np.random.Generator) -> DefenseCandidate:
        lo, hi = self.bounds
        return DefenseCandidate(rng.uniform(lo, hi), rng.integers(0, 2, size=len(self.net.tie_switches)))

    def evaluate(self, d: DefenseCandidate, generation: int, index: int) -> DefenseCandidate:
        seed = self.seed_for(generation, index)
        attacks = [a for a, _ in support(self.dist, self.cfg.mode, self.cfg.samples, seed)]
        if self.cfg.project:
            d = project_feasibility(d, self.net, attacks, self.cfg.admm, self.partition)
        else:
            d = replace(d, feasible=True)
        if d.feasible:
            obj = aggregate_objectives(d, self.dist, self.cfg.mode, self.cfg.samples, seed, self.ev)
        else:
            obj = np.full(3, np.inf)
        return replace(d, objectives=obj)


def run_nsga2(net: Network | None, dist: AttackDistribution | None, config: NsgaConfig | None = None,
              initial: Sequence[DefenseCandidate] | None = None, evaluator: Evaluator | None = None,
              problem=None) -> ParetoFront:
    """Elitist NSGA-II with ADMM projection of every candidate; returns the feasible first front.

    ``initial`` seeds the first population (topped up with random candidates);
    without it the do-nothing defense is seeded when ``config.include_null``.
    """
    cfg = config or NsgaConfig()
    rng = np.random.default_rng(cfg.seed)
    prob = problem or DefenderProblem(net, dist, cfg, evaluator)
    lo, hi = prob.bounds
    n = cfg.pop_size

    seeds = list(initial or [])
    if cfg.include_null and not initial and net is not None:
        seeds.insert(0, null_defense(net))
    pop: list[DefenseCandidate] = []
    for slot in range(n):
        cand = seeds[slot] if slot < len(seeds) else prob.random_candidate(rng)
        d = prob.evaluate(cand, 0, slot)
        tries = 0
        while not d.feasible and tries < cfg.init_retries:
            tries += 1
            d = prob.evaluate(prob.random_candidate(rng), 0, slot)
        pop.append(d)
    if not any(d.feasible for d in pop):
        raise RuntimeError("no feasible defense found in the initial population")
    assign_rank_and_crowding(pop)
    history = [_stats(pop, 0)]

    for t in range(1, cfg.generations + 1):
        offspring: list[DefenseCandidate] = []
        while len(offspring) < n:
            pa, pb = tournament(pop, rng), tournament(pop, rng)
            offspring.extend(variation((pa, pb), rng, lo, hi, cfg.variation))
        offspring = [prob.evaluate(c, t, i) for i, c in enumerate(offspring[:n])]
        pop = _survivors(pop + offspring, n)
        history.append(_stats(pop, t))
        log.debug("generation %d: best f1 %.3f", t, history[-1]["best_f1"])

    front = [d for d in pop if d.rank == 0 and d.feasible]
    seen, members = set(), []
    for d in front:
        if d.key() not in seen:
            seen.add(d.key())
            members.append(d)
    return ParetoFront(members, history)


def _stats(pop: list[DefenseCandidate], t: int) -> dict:
    objs = np.array([d.objectives for d in pop if d.feasible])
    return {
        "generation": t,
        "size": len(pop),
        "feasible": int(sum(d.feasible for d in pop)),
        "best_f1": float(objs[:, 0].min()) if objs.size else float("inf"),
    }
