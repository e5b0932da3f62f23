"""End-to-end orchestration: attacker, defender, Stackelberg selection, Monte Carlo recommendation."""
from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from .attacker import HgnnParams, TaskPool, bus_scores, meta_train
from .config import PipelineConfig
from .defender import DefenseCandidate, Evaluator, null_defense, run_nsga2
from .game import select_strategy
from .montecarlo import evaluate_monte_carlo, extract_feeder_rule, robust_rank
from .netmodel import Network, apply_scenario, bundled_case_path, energized_mask, load_case
from .powerflow import evaluate_scenario
from .vuln import AttackDistribution, asset_risk, attack_distribution

log = logging.getLogger(__name__)

RESULTS_VERSION = 1
STAGES = ("attack", "defend", "stackelberg", "recommend")
ARTIFACTS = {"attack": "attack_stage.json", "defend": "defend_stage.json"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.__cause__ = cause


def _num(x):
    """JSON-safe float: NaN/inf become None."""
    x = float(x)
    return x if math.isfinite(x) else None


def load_network(cfg: PipelineConfig) -> Network:
    path = Path(cfg.case_path) if cfg.case_path else bundled_case_path()
    if not path.exists():
        raise FileNotFoundError(f"case file not found: {path}")
    return load_case(path)


def load_served_pct(net: Network, f1: float) -> float:
    total = net.total_load
    return 100.0 * (total - f1) / total if total > 0 else 100.0


def reconnectable(net: Network, attack) -> bool:
    """Whether closing every tie energizes more buses than leaving them open."""
    ties = len(net.tie_switches)
    dark = energized_mask(apply_scenario(net, attack, np.zeros(ties, dtype=int))).sum()
    lit = energized_mask(apply_scenario(net, attack, np.ones(ties, dtype=int))).sum()
    return bool(lit > dark)


def _fingerprint(cfg: PipelineConfig) -> dict:
    d = cfg.to_dict()
    d.pop("out_dir")
    d.pop("figures")
    return d


# ---------------------------------------------------------------------------
# stages

def stage_attack(net: Network, cfg: PipelineConfig) -> dict:
    a = cfg.attacker
    pool = TaskPool(net, a.n_tasks, cfg.seed)
    theta0 = HgnnParams.init(hidden=a.hidden, layers=a.layers, seed=cfg.seed)
    theta, trace = meta_train(pool, a.alpha, a.beta, a.meta_iters, cfg.seed, theta=theta0)
    assets = net.attackable_assets()
    risk = asset_risk(bus_scores(net, theta), assets, net.index)
    dist = attack_distribution(risk, a.tau, a.k, assets)
    return {
        "tau": a.tau,
        "k": a.k,
        "mass_k": dist.mass_k,
        "meta_loss_first": trace.meta_loss[0],
        "meta_loss_last": trace.meta_loss[-1],
        "assets": dist.to_records(net),
        "risk": [float(r) for r in risk],
        "theta": theta.to_dict(),
    }


def distribution_from(net: Network, attack_doc: dict) -> AttackDistribution:
    assets = net.attackable_assets()
    return attack_distribution(np.array(attack_doc["risk"]), attack_doc["tau"], attack_doc["k"], assets)


def candidate_from(rec: dict) -> DefenseCandidate:
    obj = rec.get("objectives")
    return DefenseCandidate(np.array(rec["u"], dtype=float), np.array(rec["sigma"], dtype=int),
                            bool(rec["feasible"]), None if obj is None else np.array(obj, dtype=float))


def _objectives(f) -> dict:
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise FloatingPointError(f"non-finite metric {f.tolist()}")
    return dict(zip(("f1", "f2", "f3"), map(float, f)))


def stage_defend(net: Network, dist: AttackDistribution, cfg: PipelineConfig, ev: Evaluator) -> dict:
    nsga = cfg.nsga()
    null = null_defense(net)
    per_attack = []
    for rank, i in enumerate(dist.top_k, start=1):
        attack = dist.assets[i]
        one_hot = AttackDistribution.one_hot(dist.assets, i)
        front = run_nsga2(net, one_hot, nsga, evaluator=ev)
        best = select_strategy(front, one_hot, cfg.leader, ev)
        f_null, f_def = ev(null, attack), ev(best.d_star, attack)
        per_attack.append({
            "rank": rank,
            "attack": attack.label,
            "branch_id": attack.branch_id,
            "reconnectable": reconnectable(net, attack),
            "front_size": len(front),
            "post_attack": {**_objectives(f_null), "load_served_pct": load_served_pct(net, f_null.f1)},
            "post_defense": {**_objectives(f_def), "load_served_pct": load_served_pct(net, f_def.f1)},
            "defense": best.d_star.to_dict(net),
        })
        log.info("defended %s: %.1f%% -> %.1f%% served", attack.label,
                 per_attack[-1]["post_attack"]["load_served_pct"], per_attack[-1]["post_defense"]["load_served_pct"])

    front = run_nsga2(net, dist, nsga, evaluator=ev)
    return {
        "mode": nsga.mode,
        "per_attack": per_attack,
        "voltage_profile": voltage_profile(net, per_attack),
        "front": [m.to_dict(net) for m in front.members],
        "history": front.history,
    }


def voltage_profile(net: Network, per_attack: list[dict]) -> dict:
    """Bus voltages for the attack with the lowest post-attack service: base, attacked, defended."""
    worst = min(per_attack, key=lambda r: (r["post_attack"]["load_served_pct"], r["rank"]))
    attack = next(a for a in net.attackable_assets() if a.branch_id == worst["branch_id"])
    null = null_defense(net)
    d = candidate_from(worst["defense"])
    base = evaluate_scenario(net, null.u, null.sigma, None)[1]
    hit = evaluate_scenario(net, null.u, null.sigma, attack)[1]
    fixed = evaluate_scenario(net, d.u, d.sigma, attack)[1]
    return {
        "attack": worst["attack"],
        "bus": list(net.bus_ids),
        "base": [_num(v) for v in base.v_mag],
        "post_attack": [_num(v) for v in hit.v_mag],
        "post_defense": [_num(v) for v in fixed.v_mag],
    }


def stage_stackelberg(net: Network, dist: AttackDistribution, front: list[DefenseCandidate],
                      cfg: PipelineConfig, ev: Evaluator) -> dict:
    res = select_strategy(front, dist, cfg.leader, ev)
    out = res.to_dict(net)
    out["objectives_at_a_star"] = _objectives(ev(res.d_star, res.a_star))
    return out


def stage_recommend(net: Network, dist: AttackDistribution, front: list[DefenseCandidate],
                    cfg: PipelineConfig, ev: Evaluator) -> dict:
    mc = cfg.montecarlo
    # common random numbers: every defense faces the same attack sequence
    ledgers = [evaluate_monte_carlo(d, dist, mc.trials, cfg.seed, ev, mc.alpha) for d in front]
    top = robust_rank(front, ledgers, cfg.leader.w, mc.gamma, min(mc.top_m, len(front)))
    rec = extract_feeder_rule([front[i] for i in top], [ledgers[i] for i in top], net, dist)
    out = rec.to_dict()
    for row, i in zip(out["top_defenses"], top):
        row["front_index"] = i
    out["robust_scores"] = [led.robust_score for led in ledgers]
    out["settings"] = {"trials": mc.trials, "top_m": mc.top_m, "gamma": mc.gamma, "alpha": mc.alpha,
                       "w": list(cfg.leader.w)}
    return out


# ---------------------------------------------------------------------------
# driver

def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _resume(out: Path, stage: str, cfg: PipelineConfig) -> dict | None:
    path = out / ARTIFACTS[stage]
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    return doc["data"] if doc.get("config") == _fingerprint(cfg) else None


def run_pipeline(cfg: PipelineConfig, until: str = "recommend", resume: bool = False,
                 report: bool = True) -> dict:
    """Run stages up to ``until``; stage artifacts and ``results.json`` go to ``cfg.out_dir``."""
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}; expected one of {STAGES}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = load_network(cfg)
    ev = Evaluator(net)
    timings: dict[str, float] = {}
    results: dict = {"version": RESULTS_VERSION, "case": net.name, "config": _fingerprint(cfg)}
    stop = STAGES.index(until)

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            value = fn()
        except Exception as exc:  # re-raised with the stage name attached
            raise StageError(stage, exc) from exc
        timings[stage] = time.perf_counter() - t0
        return value

    attack_doc = (resume and _resume(out, "attack", cfg)) or timed("attack", lambda: stage_attack(net, cfg))
    _write_json(out / ARTIFACTS["attack"], {"config": _fingerprint(cfg), "data": attack_doc})
    dist = distribution_from(net, attack_doc)
    results["attack_ranking"] = {k: v for k, v in attack_doc.items() if k not in ("theta", "risk")}

    if stop >= 1:
        defend_doc = (resume and _resume(out, "defend", cfg)) or timed(
            "defend", lambda: stage_defend(net, dist, cfg, ev))
        _write_json(out / ARTIFACTS["defend"], {"config": _fingerprint(cfg), "data": defend_doc})
        results["defenses"] = defend_doc
        front = [candidate_from(r) for r in defend_doc["front"]]
        if stop >= 2:
            results["stackelberg"] = timed("stackelberg", lambda: stage_stackelberg(net, dist, front, cfg, ev))
        if stop >= 3:
            results["recommendation"] = timed("recommend", lambda: stage_recommend(net, dist, front, cfg, ev))

    # wall-clock times vary run to run; keep them out of the deterministic document
    results["runtime_seconds"] = {"recorded_in": "runtime.json"}
    _write_json(out / "runtime.json", {"runtime_seconds": {**timings, "total": sum(timings.values())}})
    _write_json(out / "results.json", results)
    if report:
        from .report import write_report

        write_report(results, out, figures=cfg.figures)
    return results
