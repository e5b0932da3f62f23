"""Region-partitioned ADMM feasibility projection of defense candidates.

Regions are feeder zones. Each region owns the DERs on its buses and predicts
the voltages of the boundary buses it touches; consensus is taken over those
boundary voltages, expressed in band units ``(|V| - 1) / 0.05``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .netmodel import Attack, Network, apply_scenario
from .powerflow import PowerFlowSolution, solve_with_fallback, voltage_sensitivity

BAND = 0.05
V_FLOOR = 0.92


class PartitionError(ValueError):
    pass


@dataclass
class Partition:
    feeders: list[int]
    regions: list[list[int]]  # bus ids per region, boundary buses included
    boundary: list[int]
    selectors: list[np.ndarray]  # per region: positions in the boundary vector

    @property
    def size(self) -> int:
        return len(self.regions)

    def selector_matrix(self, p: int) -> np.ndarray:
        a = np.zeros((self.selectors[p].size, len(self.boundary)))
        a[np.arange(self.selectors[p].size), self.selectors[p]] = 1.0
        return a


def make_partition(net: Network) -> Partition:
    """One region per feeder id; boundary buses are the ends of inter-feeder branches and ties."""
    feeder = net.feeder_of
    feeders = sorted(set(feeder.values()))
    links = [(br.from_bus, br.to_bus) for br in net.branches if br.closed]
    links += [(t.from_bus, t.to_bus) for t in net.tie_switches]
    members = {f: {b for b, g in feeder.items() if g == f} for f in feeders}
    boundary: set[int] = set()
    for u, v in links:
        if feeder[u] != feeder[v]:
            boundary.update((u, v))
            members[feeder[u]].add(v)
            members[feeder[v]].add(u)
    if len(feeders) > 1:
        for f in feeders:
            if not members[f] & boundary:
                raise PartitionError(f"feeder {f} has no path to any boundary bus")
    bnd = sorted(boundary)
    pos = {b: i for i, b in enumerate(bnd)}
    regions = [sorted(members[f]) for f in feeders]
    selectors = [np.array([pos[b] for b in r if b in pos], dtype=int) for r in regions]
    return Partition(feeders, regions, bnd, selectors)


# ---------------------------------------------------------------------------
# generic consensus ADMM

@dataclass
class AdmmState:
    ax: list[np.ndarray]  # A_p x_p per region
    z: np.ndarray
    lam: list[np.ndarray]  # scaled duals
    rho_pen: float
    k: int = 0
    local: list = field(default_factory=list)  # region payloads (e.g. DER setpoints)
    primal: float = np.inf
    dual: float = np.inf

    @classmethod
    def start(cls, selectors: Sequence[np.ndarray], dim: int, rho_pen: float,
              z0: np.ndarray | None = None) -> "AdmmState":
        if rho_pen <= 0:
            raise ValueError("ADMM penalty must be positive")
        z = np.zeros(dim) if z0 is None else np.asarray(z0, dtype=float).copy()
        return cls([z[s].copy() for s in selectors], z, [np.zeros(s.size) for s in selectors],
                   float(rho_pen), local=[None] * len(selectors))


LocalSolver = Callable[[int, np.ndarray, float], tuple[np.ndarray, object]]


def admm_iterate(state: AdmmState, selectors: Sequence[np.ndarray], solve_local: LocalSolver) -> AdmmState:
    """One local / consensus / dual sweep.

    ``solve_local(p, target, rho)`` minimises ``l_p(x) + rho/2 ||A_p x - target||^2``
    and returns ``(A_p x_p, payload)`` where ``target = z_p - lambda_p``.
    """
    ax, local = [], []
    for p, sel in enumerate(selectors):
        axp, payload = solve_local(p, state.z[sel] - state.lam[p], state.rho_pen)
        ax.append(np.asarray(axp, dtype=float))
        local.append(payload)
    z = np.zeros_like(state.z)
    count = np.zeros_like(state.z)
    for sel, axp in zip(selectors, ax):
        np.add.at(z, sel, axp)
        np.add.at(count, sel, 1.0)
    z = np.where(count > 0, z / np.maximum(count, 1.0), state.z)
    lam = [l + axp - z[sel] for l, axp, sel in zip(state.lam, ax, selectors)]
    primal = float(np.sqrt(sum(np.sum((axp - z[sel]) ** 2) for axp, sel in zip(ax, selectors))))
    dual = state.rho_pen * float(np.sqrt(sum(np.sum((z[sel] - state.z[sel]) ** 2) for sel in selectors)))
    return AdmmState(ax, z, lam, state.rho_pen, state.k + 1, local, primal, dual)


def run_admm(state: AdmmState, selectors, solve_local: LocalSolver, k_max: int = 50,
             tol: float = 1e-4, trace: list | None = None) -> AdmmState:
    for _ in range(k_max):
        state = admm_iterate(state, selectors, solve_local)
        if trace is not None:
            trace.append((state.k, state.primal, state.dual))
        if state.primal < tol and state.dual < tol:
            break
    return state


# ---------------------------------------------------------------------------
# grid projection

@dataclass
class AdmmConfig:
    rho_pen: float = 0.5
    k_max: int = 50
    tol: float = 1e-4
    v_floor: float = V_FLOOR
    v_weight: float = 10.0  # boundary-voltage regularisation toward 1.0 p.u.
    floor_weight: float = 100.0  # penalty on predicted floor violations inside a region
    floor_margin: float = 0.005
    require_full_service: bool = False
    repair: bool = True

    def __post_init__(self):
        if not 0.1 <= self.rho_pen <= 1.0:
            raise ValueError("rho_pen must lie in [0.1, 1.0]")


class RegionProblem:
    """Local subproblems of one candidate under one attack, linearised at ``u_ref``."""

    def __init__(self, net: Network, scen: Network, partition: Partition, u_ref: np.ndarray,
                 sol: PowerFlowSolution, cfg: AdmmConfig):
        self.net, self.scen, self.part, self.cfg = net, scen, partition, cfg
        self.lo, self.hi = net.der_bounds
        self.u_ref = np.asarray(u_ref, dtype=float)
        self.sol = sol
        self.sens = voltage_sensitivity(scen, sol)
        self.v_ref = np.nan_to_num(sol.v_mag, nan=1.0)
        region_of_feeder = {f: p for p, f in enumerate(partition.feeders)}
        self.ders = [[] for _ in partition.regions]
        for g, der in enumerate(net.ders):
            self.ders[region_of_feeder[net.feeder_of[der.bus]]].append(g)
        self.ders = [np.array(d, dtype=int) for d in self.ders]
        self.rows = [np.array([net.index[b] for b in r], dtype=int) for r in partition.regions]
        self.bnd_rows = np.array([net.index[b] for b in partition.boundary], dtype=int)
        live = sol.energized
        self.rows = [r[live[r]] for r in self.rows]
        full = sum(g.cost_c2 * g.p_max ** 2 + g.cost_c1 * g.p_max + g.cost_c0 for g in net.ders)
        self.cost_scale = 1.0 / full if full > 0 else 0.0

    def boundary_now(self) -> np.ndarray:
        return (self.v_ref[self.bnd_rows] - 1.0) / BAND

    def solve_local(self, p: int, target: np.ndarray, rho: float):
        sel = self.part.selectors[p]
        g = self.ders[p]
        bnd = self.bnd_rows[sel]
        if g.size == 0:
            return (self.v_ref[bnd] - 1.0) / BAND, (g, self.u_ref[g])
        lo, hi = self.lo[g], self.hi[g]
        ders = [self.net.ders[i] for i in g]
        c2 = np.array([d.cost_c2 for d in ders]) * self.cost_scale
        c1 = np.array([d.cost_c1 for d in ders]) * self.cost_scale
        s_b = self.sens[np.ix_(bnd, g)] / BAND
        s_r = self.sens[np.ix_(self.rows[p], g)] / BAND
        y_b0 = (self.v_ref[bnd] - 1.0) / BAND
        y_r0 = (self.v_ref[self.rows[p]] - (self.cfg.v_floor + self.cfg.floor_margin)) / BAND
        u0 = self.u_ref[g]
        kv, kf = self.cfg.v_weight, self.cfg.floor_weight

        def grad(u):
            du = u - u0
            yb = y_b0 + s_b @ du
            yr = y_r0 + s_r @ du
            gr = 2 * c2 * u + c1
            gr = gr + kv * s_b.T @ yb + rho * s_b.T @ (yb - target)
            gr = gr + kf * s_r.T @ np.minimum(yr, 0.0)
            return gr

        lip = 2 * c2.max(initial=0.0) + (kv + rho) * np.linalg.norm(s_b, 2) ** 2 \
            + kf * np.linalg.norm(s_r, 2) ** 2
        step = 1.0 / max(lip, 1e-12)
        u = u0.copy()
        for _ in range(500):
            nu = np.clip(u - step * grad(u), lo, hi)
            if np.max(np.abs(nu - u)) < 1e-9:
                u = nu
                break
            u = nu
        return y_b0 + s_b @ (u - u0), (g, u)


def verify(net: Network, u, sigma, attack: Attack | None, cfg: AdmmConfig):
    """Full power-flow check of the inequality constraints; returns ``(ok, min_v, sol, scen)``."""
    scen = apply_scenario(net, attack, sigma)
    lo, hi = net.der_bounds
    sol = solve_with_fallback(scen, u)
    ok = sol.converged and bool(np.all(u >= lo - 1e-9) and np.all(u <= hi + 1e-9))
    min_v = sol.min_voltage
    if ok:
        ok = bool(np.isfinite(min_v) and min_v > cfg.v_floor)
    if ok and cfg.require_full_service:
        ok = bool(net.p_load[~sol.energized].sum() <= 0)
    return ok, min_v, sol, scen


def _repair(net, u, sigma, attack, partition, cfg, trace) -> np.ndarray:
    """Consensus ADMM over regions, re-linearising the network at every iterate."""
    ok, _, sol, scen = verify(net, u, sigma, attack, cfg)
    if not sol.converged:
        return u
    problem = RegionProblem(net, scen, partition, u, sol, cfg)
    state = AdmmState.start(partition.selectors, len(partition.boundary), cfg.rho_pen,
                            z0=problem.boundary_now())
    u = u.copy()
    for _ in range(cfg.k_max):
        state = admm_iterate(state, partition.selectors, problem.solve_local)
        for g, ug in state.local:
            u[g] = ug
        trace.append((state.k, state.primal, state.dual))
        if state.primal < cfg.tol and state.dual < cfg.tol:
            break
        ok, _, sol, scen = verify(net, u, sigma, attack, cfg)
        if not sol.converged:
            break
        problem = RegionProblem(net, scen, partition, u, sol, cfg)
    return u


def project_feasibility(candidate, net: Network, attack: Attack | Sequence[Attack] | None,
                        cfg: AdmmConfig | None = None, partition: Partition | None = None,
                        info: dict | None = None):
    """Clamp ``candidate.u`` to its box, repair it by ADMM when the floor is violated, verify.

    ``attack`` may be a single attack, ``None`` or a sequence; with a sequence the
    candidate has to pass verification under every attack. A candidate that
    already verifies is returned with its setpoints untouched. ``info`` (if given)
    receives the minimum verified voltage, a repair flag and the residual trace.
    """
    cfg = cfg or AdmmConfig()
    attacks = list(attack) if isinstance(attack, (list, tuple)) else [attack]
    lo, hi = net.der_bounds
    u = np.clip(np.asarray(candidate.u, dtype=float), lo, hi)
    sigma = np.asarray(candidate.sigma, dtype=int)
    part = partition
    trace: list = []
    repaired = False
    for a in attacks:
        ok, *_ = verify(net, u, sigma, a, cfg)
        if ok or not cfg.repair:
            continue
        if part is None:
            part = make_partition(net)
        if part.size < 2:
            continue
        u = _repair(net, u, sigma, a, part, cfg, trace)
        repaired = True
    feasible, min_v = True, np.inf
    for a in attacks:
        ok, mv, *_ = verify(net, u, sigma, a, cfg)
        feasible &= ok
        min_v = min(min_v, mv) if np.isfinite(mv) else min_v
    if info is not None:
        info.update(min_voltage=float(min_v), repaired=repaired, trace=trace)
    return replace(candidate, u=u, feasible=bool(feasible))
