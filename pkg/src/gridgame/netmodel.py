"""Radial distribution network model: case ingestion, validation and topology edits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class CaseError(ValueError):
    """Raised when a case file cannot be parsed or violates a network invariant."""


class ScenarioError(ValueError):
    """Raised when an attack or switch vector is inconsistent with the network."""


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float  # kW
    q_load: float  # kVAr
    feeder: int = 1


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float  # p.u.
    x: float  # p.u.
    status: str = "closed"
    attackable: bool = True

    @property
    def closed(self) -> bool:
        return self.status == "closed"


@dataclass(frozen=True)
class Der:
    id: int
    bus: int
    p_min: float  # kW
    p_max: float  # kW
    cost_c2: float = 0.0
    cost_c1: float = 0.0
    cost_c0: float = 0.0
    p_base: float | None = None  # base-case setpoint, defaults to p_min

    @property
    def base_setpoint(self) -> float:
        return self.p_min if self.p_base is None else self.p_base


@dataclass(frozen=True)
class TieSwitch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    normally_open: bool = True
    closed: bool = False


@dataclass(frozen=True)
class Attack:
    branch_id: int
    end_buses: tuple[int, int]

    @property
    def label(self) -> str:
        return f"{self.end_buses[0]}-{self.end_buses[1]}"


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    ders: tuple[Der, ...]
    critical_buses: frozenset[int]
    tie_switches: tuple[TieSwitch, ...]
    slack_bus: int
    base_voltage_kv: float = 12.66
    base_power_mva: float = 10.0
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    @cached_property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @cached_property
    def index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def p_load(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses], dtype=float)

    @cached_property
    def q_load(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses], dtype=float)

    @property
    def total_load(self) -> float:
        return float(self.p_load.sum())

    @cached_property
    def feeder_of(self) -> dict[int, int]:
        return {b.id: b.feeder for b in self.buses}

    @cached_property
    def base_dispatch(self) -> np.ndarray:
        return np.array([g.base_setpoint for g in self.ders], dtype=float)

    @cached_property
    def der_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([g.p_min for g in self.ders], dtype=float)
        hi = np.array([g.p_max for g in self.ders], dtype=float)
        return lo, hi

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def closed_edges(self) -> list[tuple[int, int, float, float]]:
        """(from, to, r, x) for every closed branch and closed tie."""
        edges = [(br.from_bus, br.to_bus, br.r, br.x) for br in self.branches if br.closed]
        edges += [(t.from_bus, t.to_bus, t.r, t.x) for t in self.tie_switches if t.closed]
        return edges

    def attackable_assets(self) -> list[Attack]:
        """Every attackable, closed branch as an :class:`Attack`, ordered by branch id."""
        return [
            Attack(br.id, (br.from_bus, br.to_bus))
            for br in sorted(self.branches, key=lambda b: b.id)
            if br.attackable and br.closed
        ]

    def attack_on(self, u: int, v: int) -> Attack:
        for br in self.branches:
            if {br.from_bus, br.to_bus} == {u, v}:
                return Attack(br.id, (br.from_bus, br.to_bus))
        raise ScenarioError(f"no branch between buses {u} and {v}")

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "base_kv": self.base_voltage_kv,
            "base_mva": self.base_power_mva,
            "slack": self.slack_bus,
            "buses": [vars(b).copy() for b in self.buses],
            "branches": [vars(b).copy() for b in self.branches],
            "ties": [
                {k: v for k, v in vars(t).items() if k != "closed"} for t in self.tie_switches
            ],
            "ders": [{k: v for k, v in vars(g).items() if v is not None} for g in self.ders],
            "critical": sorted(self.critical_buses),
        }
        data.update(self.meta)
        return data


# ---------------------------------------------------------------------------
# ingestion

_REQUIRED = ("base_kv", "base_mva", "slack", "buses", "branches", "ties", "ders", "critical")


def bundled_case_path(name: str = "ieee69") -> Path:
    return Path(str(resources.files("gridgame") / "cases" / f"{name}.json"))


def load_case(path: str | Path) -> Network:
    """Read and validate a JSON case file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"cannot parse case file {path}: {exc}") from exc
    return network_from_dict(data)


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise CaseError("case document must be an object")
    missing = [k for k in _REQUIRED if k not in data]
    if missing:
        raise CaseError(f"case document missing keys: {', '.join(missing)}")
    try:
        buses = tuple(
            Bus(int(b["id"]), float(b["p_load"]), float(b["q_load"]), int(b.get("feeder", 1)))
            for b in data["buses"]
        )
        branches = tuple(
            Branch(
                int(b["id"]), int(b["from_bus"]), int(b["to_bus"]), float(b["r"]), float(b["x"]),
                str(b.get("status", "closed")), bool(b.get("attackable", True)),
            )
            for b in data["branches"]
        )
        ties = tuple(
            TieSwitch(
                int(t["id"]), int(t["from_bus"]), int(t["to_bus"]), float(t["r"]), float(t["x"]),
                bool(t.get("normally_open", True)),
            )
            for t in data["ties"]
        )
        ders = tuple(
            Der(
                int(g["id"]), int(g["bus"]), float(g["p_min"]), float(g["p_max"]),
                float(g.get("cost_c2", 0.0)), float(g.get("cost_c1", 0.0)),
                float(g.get("cost_c0", 0.0)),
                None if g.get("p_base") is None else float(g["p_base"]),
            )
            for g in data["ders"]
        )
        critical = frozenset(int(c) for c in data["critical"])
        slack = int(data["slack"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"malformed case entry: {exc!r}") from exc
    meta = {k: v for k, v in data.items() if k not in _REQUIRED and k != "name"}
    net = Network(
        buses=buses, branches=branches, ders=ders, critical_buses=critical,
        tie_switches=ties, slack_bus=slack, base_voltage_kv=float(data["base_kv"]),
        base_power_mva=float(data["base_mva"]), name=str(data.get("name", "")), meta=meta,
    )
    validate(net)
    return net


def validate(net: Network) -> None:
    """Check every network invariant, raising :class:`CaseError` on the first violation."""
    if not net.buses:
        raise CaseError("network has no buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("bus ids are not unique")
    known = set(ids)
    if net.slack_bus not in known:
        raise CaseError(f"slack bus {net.slack_bus} is not a bus")
    for b in net.buses:
        if b.p_load < 0:
            raise CaseError(f"bus {b.id} has negative p_load")
        if b.feeder < 1:
            raise CaseError(f"bus {b.id} has feeder id {b.feeder} < 1")
    for br in net.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branch {br.id} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id} is a self loop")
        if br.r < 0 or br.x < 0 or (br.r == 0 and br.x == 0):
            raise CaseError(f"branch {br.id} has invalid impedance")
        if br.status not in ("open", "closed"):
            raise CaseError(f"branch {br.id} has unknown status {br.status!r}")
    if len({br.id for br in net.branches}) != len(net.branches):
        raise CaseError("branch ids are not unique")
    for t in net.tie_switches:
        if t.from_bus not in known or t.to_bus not in known:
            raise CaseError(f"tie {t.id} references an unknown bus")
        if t.from_bus == t.to_bus:
            raise CaseError(f"tie {t.id} is a self loop")
        if t.r < 0 or t.x < 0 or (t.r == 0 and t.x == 0):
            raise CaseError(f"tie {t.id} has invalid impedance")
    for g in net.ders:
        if g.bus not in known:
            raise CaseError(f"DER {g.id} is on unknown bus {g.bus}")
        if not 0 <= g.p_min <= g.p_max:
            raise CaseError(f"DER {g.id} has invalid bounds [{g.p_min}, {g.p_max}]")
        if g.cost_c2 < 0:
            raise CaseError(f"DER {g.id} has negative quadratic cost")
        if g.p_base is not None and not g.p_min <= g.p_base <= g.p_max:
            raise CaseError(f"DER {g.id} base setpoint outside bounds")
    stray = net.critical_buses - known
    if stray:
        raise CaseError(f"critical buses {sorted(stray)} are not buses")
    closed = [br for br in net.branches if br.closed]
    n_comp = _component_count(net.bus_ids, [(br.from_bus, br.to_bus) for br in closed])
    if len(closed) != len(net.buses) - n_comp:
        raise CaseError("closed-branch graph is not radial")


# ---------------------------------------------------------------------------
# topology

def _labels(bus_ids: Sequence[int], edges: Iterable[tuple[int, int]]) -> np.ndarray:
    index = {b: i for i, b in enumerate(bus_ids)}
    edges = list(edges)
    n = len(bus_ids)
    if edges:
        rows = [index[u] for u, _ in edges]
        cols = [index[v] for _, v in edges]
    else:
        rows, cols = [], []
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return labels


def _component_count(bus_ids, edges) -> int:
    return len(set(_labels(bus_ids, edges).tolist()))


def energized_mask(net: Network) -> np.ndarray:
    """Boolean mask over ``net.buses`` of the slack-connected component."""
    labels = _labels(net.bus_ids, [(e[0], e[1]) for e in net.closed_edges()])
    return labels == labels[net.index[net.slack_bus]]


def energized_buses(net: Network) -> set[int]:
    mask = energized_mask(net)
    return {b for b, m in zip(net.bus_ids, mask) if m}


def apply_scenario(net: Network, attack: Attack | None, sigma: Sequence[int]) -> Network:
    """Return a copy of ``net`` with ``attack`` opened and ties closed where ``sigma`` is 1."""
    sigma = np.asarray(sigma).ravel()
    if sigma.size != len(net.tie_switches):
        raise ScenarioError(
            f"switch vector has length {sigma.size}, expected {len(net.tie_switches)}"
        )
    if not np.all((sigma == 0) | (sigma == 1)):
        raise ScenarioError("switch vector must be binary")
    branches = net.branches
    if attack is not None:
        try:
            target = net.branch(attack.branch_id)
        except KeyError:
            raise ScenarioError(f"attack references unknown branch {attack.branch_id}") from None
        if not target.closed:
            raise ScenarioError(f"attacked branch {attack.branch_id} is already open")
        if {target.from_bus, target.to_bus} != set(attack.end_buses):
            raise ScenarioError(f"attack end buses do not match branch {attack.branch_id}")
        branches = tuple(
            replace(br, status="open") if br.id == attack.branch_id else br for br in branches
        )
    ties = tuple(replace(t, closed=bool(s)) for t, s in zip(net.tie_switches, sigma))
    return replace(net, branches=branches, tie_switches=ties)


def downstream_buses(net: Network, branch_id: int) -> set[int]:
    """Buses that lose supply when ``branch_id`` alone is opened (ties left as they are)."""
    br = net.branch(branch_id)
    attack = Attack(br.id, (br.from_bus, br.to_bus))
    sigma = [int(t.closed) for t in net.tie_switches]
    return energized_buses(net) - energized_buses(apply_scenario(net, attack, sigma))
