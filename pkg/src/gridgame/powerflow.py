"""Newton-Raphson AC power flow and the three defender objectives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .netmodel import Attack, Der, Network, apply_scenario, energized_mask

TOLERANCE = 1e-6
MAX_ITER = 50
CURTAIL_ROUNDS = 10
V_LOW, V_HIGH = 0.95, 1.05
V_COLLAPSE = 0.3  # any |V| below this is treated as divergence


@dataclass
class PowerFlowSolution:
    """Bus voltages in bus order; unenergized buses hold NaN and ``energized`` is False."""

    v_mag: np.ndarray
    v_ang: np.ndarray
    energized: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    curtailed: np.ndarray = field(default=None)  # kW curtailed per bus by the fallback
    fallback_rounds: int = 0

    def __post_init__(self):
        if self.curtailed is None:
            self.curtailed = np.zeros_like(self.v_mag)

    @property
    def min_voltage(self) -> float:
        v = self.v_mag[self.energized]
        return float(v.min()) if v.size else float("nan")

    def voltage_of(self, net: Network, bus: int) -> float:
        return float(self.v_mag[net.index[bus]])


class ObjectiveVector(NamedTuple):
    f1: float  # kW shed
    f2: float  # generation cost
    f3: float  # p.u. band violation

    def as_array(self) -> np.ndarray:
        return np.array([self.f1, self.f2, self.f3], dtype=float)


# ---------------------------------------------------------------------------
# network matrices

def build_ybus(n: int, edges: Sequence[tuple[int, int, float, float]]) -> np.ndarray:
    """Dense bus admittance matrix from (i, j, r, x) tuples over local indices."""
    y = np.zeros((n, n), dtype=complex)
    for i, j, r, x in edges:
        ys = 1.0 / complex(r, x)
        y[i, i] += ys
        y[j, j] += ys
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def der_injection(net: Network, dispatch: np.ndarray) -> np.ndarray:
    """Per-bus DER active injection in kW."""
    p = np.zeros(len(net.buses))
    for g, u in zip(net.ders, dispatch):
        p[net.index[g.bus]] += u
    return p


def enforce_q_limits(q_gen: np.ndarray, q_min: np.ndarray, q_max: np.ndarray) -> np.ndarray:
    """Clip reactive generation to its limits; returns the buses that hit a limit.

    Every DER in the bundled cases runs at unity power factor with zero-width
    reactive limits, so nothing is ever switched and the solver stays PQ-only.
    """
    return np.flatnonzero((q_gen < q_min - 1e-12) | (q_gen > q_max + 1e-12))


# ---------------------------------------------------------------------------
# Newton-Raphson

def newton_raphson(ybus, s_spec, slack, v0=None, tol=TOLERANCE, max_iter=MAX_ITER):
    """Polar Newton-Raphson with one slack bus and all other buses PQ.

    ``s_spec`` is the specified complex injection (p.u.). Returns
    ``(V, converged, iterations, max_mismatch)`` where ``iterations`` counts
    mismatch evaluations.
    """
    n = ybus.shape[0]
    v = np.ones(n, dtype=complex) if v0 is None else np.asarray(v0, dtype=complex).copy()
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    npq = pq.size
    if npq == 0:
        return v, True, 1, 0.0
    it = 0
    mis_max = np.inf
    while it < max_iter:
        it += 1
        ibus = ybus @ v
        mis = v * np.conj(ibus) - s_spec
        f = np.concatenate([mis.real[pq], mis.imag[pq]])
        mis_max = float(np.max(np.abs(f)))
        if not np.isfinite(mis_max):
            return v, False, it, mis_max
        if mis_max < tol:
            return v, True, it, mis_max
        vm = np.abs(v)
        dvm = np.diag(v / vm)
        dva = np.diag(v)
        ds_dvm = dva @ np.conj(ybus @ dvm) + np.diag(np.conj(ibus)) @ dvm
        ds_dva = 1j * dva @ np.conj(np.diag(ibus) - ybus @ dva)
        jac = np.block([
            [ds_dva.real[np.ix_(pq, pq)], ds_dvm.real[np.ix_(pq, pq)]],
            [ds_dva.imag[np.ix_(pq, pq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return v, False, it, mis_max
        va = np.angle(v)
        va[pq] += dx[:npq]
        vm[pq] += dx[npq:]
        if np.any(vm[pq] < V_COLLAPSE) or not np.all(np.isfinite(vm)):
            return v, False, it, mis_max
        v = vm * np.exp(1j * va)
    ibus = ybus @ v
    mis = v * np.conj(ibus) - s_spec
    mis_max = float(np.max(np.abs(np.concatenate([mis.real[pq], mis.imag[pq]]))))
    return v, mis_max < tol, it, mis_max


def _solve(net: Network, dispatch: np.ndarray, p_load: np.ndarray, q_load: np.ndarray,
           tol: float, max_iter: int) -> PowerFlowSolution:
    nb = len(net.buses)
    mask = energized_mask(net)
    local = np.flatnonzero(mask)
    pos = {int(g): k for k, g in enumerate(local)}
    edges = []
    for i, j, r, x in net.closed_edges():
        a, b = net.index[i], net.index[j]
        if a in pos and b in pos:
            edges.append((pos[a], pos[b], r, x))
    ybus = build_ybus(local.size, edges)
    scale = 1.0 / (net.base_power_mva * 1000.0)
    p_inj = (der_injection(net, dispatch) - p_load) * scale
    q_inj = -q_load * scale
    s_spec = (p_inj + 1j * q_inj)[local]
    slack = pos[net.index[net.slack_bus]]
    v, ok, it, mis = newton_raphson(ybus, s_spec, slack, tol=tol, max_iter=max_iter)
    v_mag = np.full(nb, np.nan)
    v_ang = np.full(nb, np.nan)
    if ok:
        v_mag[local] = np.abs(v)
        v_ang[local] = np.angle(v)
    return PowerFlowSolution(v_mag, v_ang, mask, ok, it, mis)


def solve_power_flow(net: Network, dispatch: Sequence[float] | None = None, *,
                     tol: float = TOLERANCE, max_iter: int = MAX_ITER) -> PowerFlowSolution:
    """Solve the energized component of ``net`` for the given DER dispatch (kW).

    A diverged solve returns ``converged=False`` and NaN voltages.
    """
    u = net.base_dispatch if dispatch is None else np.asarray(dispatch, dtype=float)
    lo, hi = net.der_bounds
    if u.shape != lo.shape:
        raise ValueError(f"dispatch has {u.size} entries, network has {lo.size} DERs")
    if np.any(u < lo - 1e-9) or np.any(u > hi + 1e-9):
        raise ValueError("dispatch outside DER bounds")
    return _solve(net, u, net.p_load, net.q_load, tol, max_iter)


def solve_with_fallback(net: Network, dispatch: Sequence[float] | None = None, *,
                        rounds: int = CURTAIL_ROUNDS, tol: float = TOLERANCE,
                        max_iter: int = MAX_ITER) -> PowerFlowSolution:
    """Solve, curtailing the largest energized non-critical load after each divergence.

    Critical loads are curtailed only once no energized non-critical load is left.
    """
    u = net.base_dispatch if dispatch is None else np.asarray(dispatch, dtype=float)
    sol = solve_power_flow(net, u, tol=tol, max_iter=max_iter)
    if sol.converged:
        return sol
    p = net.p_load.copy()
    q = net.q_load.copy()
    curtailed = np.zeros_like(p)
    critical = np.array([b in net.critical_buses for b in net.bus_ids])
    for k in range(1, rounds + 1):
        live = sol.energized & (p > 0)
        pool = live & ~critical
        if not pool.any():
            pool = live
        if not pool.any():
            break
        cand = np.flatnonzero(pool)
        victim = cand[np.argmax(p[cand])]  # argmax keeps the lowest index on ties
        curtailed[victim] += p[victim]
        p[victim] = 0.0
        q[victim] = 0.0
        sol = _solve(net, u, p, q, tol, max_iter)
        sol.fallback_rounds = k
        sol.curtailed = curtailed.copy()
        if sol.converged:
            return sol
    sol.curtailed = curtailed
    return sol


# ---------------------------------------------------------------------------
# objectives

def load_shed_f1(net: Network, sol: PowerFlowSolution) -> float:
    """Unserved demand in kW: dark buses, curtailed load, and everything if still diverged."""
    p = net.p_load
    shed = float(p[~sol.energized].sum()) + float(sol.curtailed.sum())
    if not sol.converged:
        shed += float((p[sol.energized] - sol.curtailed[sol.energized]).sum())
    return shed


def generation_cost_f2(dispatch: Sequence[float], ders: Sequence[Der]) -> float:
    return float(sum(g.cost_c2 * u * u + g.cost_c1 * u + g.cost_c0 for g, u in zip(ders, dispatch)))


def voltage_penalty_f3(sol: PowerFlowSolution) -> float:
    v = sol.v_mag[sol.energized]
    v = v[np.isfinite(v)]
    return float(np.sum(np.maximum(0.0, v - V_HIGH) + np.maximum(0.0, V_LOW - v)))


def evaluate_scenario(net: Network, u, sigma, attack: Attack | None = None):
    """Return ``(ObjectiveVector, solution, scenario network)`` for one defense/attack pair."""
    scen = apply_scenario(net, attack, sigma)
    u = np.asarray(u, dtype=float)
    sol = solve_with_fallback(scen, u)
    obj = ObjectiveVector(
        load_shed_f1(scen, sol),
        generation_cost_f2(u, net.ders),
        voltage_penalty_f3(sol) if sol.converged else 0.0,
    )
    return obj, sol, scen


def evaluate_objectives(net: Network, d, a: Attack | None = None) -> ObjectiveVector:
    """Objectives of defense ``d`` (anything with ``u`` and ``sigma``) under attack ``a``."""
    return evaluate_scenario(net, d.u, d.sigma, a)[0]


def power_residual(net: Network, sol: PowerFlowSolution, dispatch) -> np.ndarray:
    """Nodal complex power mismatch (p.u.) at energized non-slack buses of a converged solve."""
    mask = sol.energized
    local = np.flatnonzero(mask)
    pos = {int(g): k for k, g in enumerate(local)}
    edges = [
        (pos[net.index[i]], pos[net.index[j]], r, x)
        for i, j, r, x in net.closed_edges()
        if net.index[i] in pos and net.index[j] in pos
    ]
    y = build_ybus(local.size, edges)
    v = (sol.v_mag * np.exp(1j * sol.v_ang))[local]
    s_calc = v * np.conj(y @ v)
    scale = 1.0 / (net.base_power_mva * 1000.0)
    p_load = net.p_load - sol.curtailed
    q_load = np.where(sol.curtailed > 0, 0.0, net.q_load)
    s_spec = ((der_injection(net, dispatch) - p_load) * scale - 1j * q_load * scale)[local]
    keep = np.array([g != net.index[net.slack_bus] for g in local])
    return (s_calc - s_spec)[keep]


def voltage_sensitivity(net: Network, sol: PowerFlowSolution) -> np.ndarray:
    """d|V_b| / du_g in p.u. per kW at a converged solution (zero rows for dark buses).

    Obtained from the inverse of the polar Jacobian at the operating point; each
    DER's injection enters as active power at its bus.
    """
    nb = len(net.buses)
    sens = np.zeros((nb, len(net.ders)))
    if not sol.converged:
        return sens
    local = np.flatnonzero(sol.energized)
    pos = {int(g): k for k, g in enumerate(local)}
    edges = [
        (pos[net.index[i]], pos[net.index[j]], r, x)
        for i, j, r, x in net.closed_edges()
        if net.index[i] in pos and net.index[j] in pos
    ]
    y = build_ybus(local.size, edges)
    v = (sol.v_mag * np.exp(1j * sol.v_ang))[local]
    slack = pos[net.index[net.slack_bus]]
    pq = np.array([k for k in range(local.size) if k != slack], dtype=int)
    if pq.size == 0:
        return sens
    ibus = y @ v
    dvm = np.diag(v / np.abs(v))
    dva = np.diag(v)
    ds_dvm = dva @ np.conj(y @ dvm) + np.diag(np.conj(ibus)) @ dvm
    ds_dva = 1j * dva @ np.conj(np.diag(ibus) - y @ dva)
    jac = np.block([
        [ds_dva.real[np.ix_(pq, pq)], ds_dvm.real[np.ix_(pq, pq)]],
        [ds_dva.imag[np.ix_(pq, pq)], ds_dvm.imag[np.ix_(pq, pq)]],
    ])
    npq = pq.size
    rhs = np.zeros((2 * npq, len(net.ders)))
    row = {int(k): r for r, k in enumerate(pq)}
    scale = 1.0 / (net.base_power_mva * 1000.0)
    for c, g in enumerate(net.ders):
        k = pos.get(net.index[g.bus])
        if k is not None and k in row:
            rhs[row[k], c] = scale
    dx = np.linalg.solve(jac, rhs)
    sens[local[pq]] = dx[npq:]
    return sens
