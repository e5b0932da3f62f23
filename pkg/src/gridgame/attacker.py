"""Hypergraph attacker: HGNN scoring of buses, outage-impact labels and first-order MAML."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .netmodel import Branch, Network, TieSwitch, apply_scenario, validate
from .powerflow import load_shed_f1, solve_power_flow, solve_with_fallback

THETA_VERSION = 1


@dataclass
class Hypergraph:
    incidence: np.ndarray  # |B| x |E|
    d_v: np.ndarray
    d_e: np.ndarray
    s_op: np.ndarray

    @classmethod
    def from_incidence(cls, h: np.ndarray) -> "Hypergraph":
        h = np.asarray(h, dtype=float)
        d_v = h.sum(axis=1)
        d_e = h.sum(axis=0)
        if np.any(d_v < 1) or np.any(d_e < 1):
            raise ValueError("every vertex and hyperedge needs degree >= 1")
        dv = 1.0 / np.sqrt(d_v)
        s = (dv[:, None] * h) @ ((h / d_e).T * dv[None, :])
        s = 0.5 * (s + s.T)
        return cls(h, d_v, d_e, s)


def build_hypergraph(net: Network) -> Hypergraph:
    """Pair hyperedges for closed edges plus one neighbourhood hyperedge per bus.

    A bus neighbourhood holds the bus, its adjacent buses and the buses of DERs
    attached to it (which in this model is the bus itself).
    """
    n = len(net.buses)
    edges = [(net.index[i], net.index[j]) for i, j, _, _ in net.closed_edges()]
    adj = [{k} for k in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    for g in net.ders:
        adj[net.index[g.bus]].add(net.index[g.bus])
    h = np.zeros((n, len(edges) + n))
    for c, (i, j) in enumerate(edges):
        h[i, c] = h[j, c] = 1.0
    for k in range(n):
        h[sorted(adj[k]), len(edges) + k] = 1.0
    return Hypergraph.from_incidence(h)


def node_features(net: Network, v_mag: np.ndarray | None = None) -> np.ndarray:
    """Columns: degree, load magnitude (p.u.), DER presence, voltage magnitude (p.u.).

    Degree is divided by the network's maximum degree so every column is O(1).
    """
    n = len(net.buses)
    deg = np.zeros(n)
    for i, j, _, _ in net.closed_edges():
        deg[net.index[i]] += 1
        deg[net.index[j]] += 1
    deg = deg / max(deg.max(), 1.0)
    load = np.hypot(net.p_load, net.q_load) / (net.base_power_mva * 1000.0)
    der = np.zeros(n)
    for g in net.ders:
        if g.p_max > 0:
            der[net.index[g.bus]] = 1.0
    if v_mag is None:
        sol = solve_power_flow(net)
        v_mag = sol.v_mag if sol.converged else np.ones(n)
    v = np.nan_to_num(np.asarray(v_mag, dtype=float), nan=0.0)
    return np.column_stack([deg, load, der, v])


# ---------------------------------------------------------------------------
# parameters

@dataclass
class HgnnParams:
    w_layers: list[np.ndarray]
    w_head: np.ndarray

    @classmethod
    def init(cls, n_features: int = 4, hidden: int = 16, layers: int = 2, seed: int = 42) -> "HgnnParams":
        rng = np.random.default_rng(seed)
        widths = [n_features] + [hidden] * layers
        ws = []
        for a, b in zip(widths[:-1], widths[1:]):
            lim = np.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, size=(a, b)))
        lim = np.sqrt(6.0 / (hidden + 1))
        return cls(ws, rng.uniform(-lim, lim, size=hidden))

    def arrays(self) -> list[np.ndarray]:
        return [*self.w_layers, self.w_head]

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "HgnnParams":
        return cls([np.array(a, dtype=float) for a in arrays[:-1]], np.array(arrays[-1], dtype=float))

    def axpy(self, alpha: float, other: "HgnnParams") -> "HgnnParams":
        """Return ``self + alpha * other``."""
        return HgnnParams.from_arrays([a + alpha * b for a, b in zip(self.arrays(), other.arrays())])

    def zeros_like(self) -> "HgnnParams":
        return HgnnParams.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflat(self, vec: np.ndarray) -> "HgnnParams":
        out, k = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[k:k + a.size], dtype=float).reshape(a.shape))
            k += a.size
        return HgnnParams.from_arrays(out)

    def to_dict(self) -> dict:
        return {
            "version": THETA_VERSION,
            "layers": [{"shape": list(w.shape), "data": w.ravel().tolist()} for w in self.w_layers],
            "w_head": {"shape": list(self.w_head.shape), "data": self.w_head.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HgnnParams":
        if data.get("version") != THETA_VERSION:
            raise ValueError(f"unsupported theta version {data.get('version')!r}")
        ws = [np.array(l["data"], dtype=float).reshape(l["shape"]) for l in data["layers"]]
        head = np.array(data["w_head"]["data"], dtype=float).reshape(data["w_head"]["shape"])
        return cls(ws, head)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "HgnnParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# forward / backward

def _check_shapes(x: np.ndarray, theta: HgnnParams) -> None:
    width = x.shape[1]
    for w in theta.w_layers:
        if w.ndim != 2 or w.shape[0] != width:
            raise ValueError(f"weight of shape {w.shape} does not accept width {width}")
        width = w.shape[1]
    if theta.w_head.shape != (width,):
        raise ValueError(f"w_head shape {theta.w_head.shape} does not match width {width}")


def hgnn_forward(hg: Hypergraph, x: np.ndarray, theta: HgnnParams, cache: dict | None = None) -> np.ndarray:
    """Per-bus scores: ReLU propagation layers, mean-pooled hyperedge scores, then ``H z``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != hg.incidence.shape[0]:
        raise ValueError("feature rows do not match hypergraph vertices")
    _check_shapes(x, theta)
    xs, pre = [x], []
    for w in theta.w_layers:
        a = hg.s_op @ xs[-1] @ w
        pre.append(a)
        xs.append(np.maximum(a, 0.0))
    e = (hg.incidence.T @ xs[-1]) / hg.d_e[:, None]
    z = e @ theta.w_head
    rho = hg.incidence @ z
    if cache is not None:
        cache.update(xs=xs, pre=pre, e=e, z=z)
    return rho


def loss_and_grad(hg: Hypergraph, x: np.ndarray, theta: HgnnParams, labels: np.ndarray,
                  idx: np.ndarray) -> tuple[float, HgnnParams]:
    """Mean squared error on ``idx`` and its exact gradient with respect to every parameter."""
    cache: dict = {}
    rho = hgnn_forward(hg, x, theta, cache)
    idx = np.asarray(idx, dtype=int)
    r = rho[idx] - labels[idx]
    loss = float(np.mean(r * r))
    d_rho = np.zeros_like(rho)
    d_rho[idx] = 2.0 * r / idx.size
    d_z = hg.incidence.T @ d_rho
    d_head = cache["e"].T @ d_z
    d_e = np.outer(d_z, theta.w_head)
    d_x = hg.incidence @ (d_e / hg.d_e[:, None])
    d_ws = [None] * len(theta.w_layers)
    for l in range(len(theta.w_layers) - 1, -1, -1):
        d_a = d_x * (cache["pre"][l] > 0)
        sx = hg.s_op @ cache["xs"][l]
        d_ws[l] = sx.T @ d_a
        d_x = hg.s_op.T @ (d_a @ theta.w_layers[l].T)
    return loss, HgnnParams(d_ws, d_head)


# ---------------------------------------------------------------------------
# labels and tasks

def impact_labels(net: Network) -> np.ndarray:
    """Per-bus max shed fraction over single outages of incident attackable branches."""
    total = net.total_load
    labels = np.zeros(len(net.buses))
    if total <= 0:
        return labels
    sigma = [0] * len(net.tie_switches)
    base = net.base_dispatch
    for asset in net.attackable_assets():
        scen = apply_scenario(net, asset, sigma)
        frac = min(1.0, load_shed_f1(scen, solve_with_fallback(scen, base)) / total)
        for b in asset.end_buses:
            k = net.index[b]
            labels[k] = max(labels[k], frac)
    return labels


class MetaTask(Protocol):
    def loss_and_grad(self, theta, split: str) -> tuple[float, object]: ...


@dataclass
class Task:
    net: Network
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    test: np.ndarray

    @classmethod
    def from_network(cls, net: Network, rng: np.random.Generator, train_fraction: float = 0.5) -> "Task":
        sol = solve_power_flow(net)
        feats = node_features(net, sol.v_mag if sol.converged else None)
        perm = rng.permutation(len(net.buses))
        cut = int(round(train_fraction * perm.size))
        return cls(net, build_hypergraph(net), feats, impact_labels(net),
                   np.sort(perm[:cut]), np.sort(perm[cut:]))

    def loss_and_grad(self, theta: HgnnParams, split: str = "train"):
        idx = self.train if split == "train" else self.test
        return loss_and_grad(self.hypergraph, self.features, theta, self.labels, idx)

    def scores(self, theta: HgnnParams) -> np.ndarray:
        return hgnn_forward(self.hypergraph, self.features, theta)


def perturb_network(net: Network, rng: np.random.Generator, *, load_range=(0.7, 1.3),
                    der_outage_p: float = 0.3, swap_p: float = 0.2) -> Network:
    """Random task network: per-feeder load scaling, a DER outage and a branch/tie swap."""
    feeders = sorted({b.feeder for b in net.buses})
    scale = dict(zip(feeders, rng.uniform(*load_range, size=len(feeders))))
    buses = tuple(replace(b, p_load=b.p_load * scale[b.feeder], q_load=b.q_load * scale[b.feeder])
                  for b in net.buses)
    ders = net.ders
    if ders and rng.random() < der_outage_p:
        k = int(rng.integers(len(ders)))
        ders = tuple(replace(g, p_min=0.0, p_max=0.0, p_base=0.0) if i == k else g
                     for i, g in enumerate(ders))
    branches, ties = net.branches, net.tie_switches
    if ties and rng.random() < swap_p:
        t = ties[int(rng.integers(len(ties)))]
        loop = _cycle_branches(net, t.from_bus, t.to_bus)
        if loop:
            out = loop[int(rng.integers(len(loop)))]
            new_branch = Branch(max(b.id for b in branches) + 1, t.from_bus, t.to_bus, t.r, t.x)
            new_tie = TieSwitch(t.id, out.from_bus, out.to_bus, out.r, out.x, normally_open=True)
            branches = tuple(b for b in branches if b.id != out.id) + (new_branch,)
            ties = tuple(new_tie if s.id == t.id else s for s in ties)
    task_net = replace(net, buses=buses, ders=ders, branches=branches, tie_switches=ties)
    validate(task_net)
    return task_net


def _cycle_branches(net: Network, u: int, v: int) -> list[Branch]:
    """Closed branches on the radial path between ``u`` and ``v``."""
    adj: dict[int, list[tuple[int, Branch]]] = {b: [] for b in net.bus_ids}
    for br in net.branches:
        if br.closed:
            adj[br.from_bus].append((br.to_bus, br))
            adj[br.to_bus].append((br.from_bus, br))
    prev: dict[int, tuple[int, Branch] | None] = {u: None}
    stack = [u]
    while stack:
        a = stack.pop()
        for b, br in adj[a]:
            if b not in prev:
                prev[b] = (a, br)
                stack.append(b)
    if v not in prev:
        return []
    path, node = [], v
    while prev[node] is not None:
        node, br = prev[node]
        path.append(br)
    return [br for br in path if br.attackable]


class TaskPool:
    """A fixed, seeded suite of perturbed-network tasks."""

    def __init__(self, net: Network, n_tasks: int = 10, seed: int = 42, **perturb):
        rng = np.random.default_rng(seed)
        self.tasks = [Task.from_network(perturb_network(net, rng, **perturb), rng) for _ in range(n_tasks)]

    def __len__(self) -> int:
        return len(self.tasks)

    def batch(self, rng: np.random.Generator, size: int | None = None) -> list[Task]:
        if size is None or size >= len(self.tasks):
            return list(self.tasks)
        pick = rng.choice(len(self.tasks), size=size, replace=False)
        return [self.tasks[i] for i in sorted(pick)]


# ---------------------------------------------------------------------------
# meta-learning

def inner_adapt(theta, task: MetaTask, alpha: float):
    """One gradient step on the task's training loss."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    _, grad = task.loss_and_grad(theta, "train")
    if hasattr(theta, "axpy"):
        return theta.axpy(-alpha, grad)
    return theta - alpha * grad


def meta_test_loss(theta, tasks: Sequence[MetaTask], alpha: float) -> float:
    return float(np.mean([t.loss_and_grad(inner_adapt(theta, t, alpha), "test")[0] for t in tasks]))


@dataclass
class MetaTrace:
    meta_loss: list[float]


def meta_train(tasks, alpha: float = 0.01, beta: float = 0.001, iters: int = 200, seed: int = 42,
               theta=None, batch_size: int | None = None, eval_tasks=None,
               log: Callable[[int, float], None] | None = None):
    """First-order MAML. Returns ``(theta, trace)``.

    ``tasks`` is a :class:`TaskPool` (or a list of tasks); ``trace.meta_loss[k]``
    is the mean adapted test loss on ``eval_tasks`` (default: the whole pool)
    before outer step ``k``, with the final entry taken after the last step.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    pool = tasks if isinstance(tasks, TaskPool) else None
    task_list = pool.tasks if pool else list(tasks)
    evals = list(eval_tasks) if eval_tasks is not None else task_list
    rng = np.random.default_rng(seed)
    if theta is None:
        theta = HgnnParams.init(seed=seed)
    trace = MetaTrace([])
    for k in range(iters):
        trace.meta_loss.append(meta_test_loss(theta, evals, alpha))
        if log:
            log(k, trace.meta_loss[-1])
        batch = pool.batch(rng, batch_size) if pool else task_list
        outer = theta.zeros_like()
        for task in batch:
            adapted = inner_adapt(theta, task, alpha)
            loss, g = task.loss_and_grad(adapted, "test")
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite meta loss at iteration {k}")
            outer = outer.axpy(1.0, g)
        theta = theta.axpy(-beta, outer)
    trace.meta_loss.append(meta_test_loss(theta, evals, alpha))
    return theta, trace


def bus_scores(net: Network, theta: HgnnParams) -> np.ndarray:
    """HGNN scores of the unperturbed network."""
    return hgnn_forward(build_hypergraph(net), node_features(net), theta)
