"""Pipeline configuration with defaults and JSON overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .admm import AdmmConfig
from .defender import RISK_AVERSE, NsgaConfig, VariationConfig
from .game import LeaderConfig


@dataclass
class AttackerConfig:
    layers: int = 2
    hidden: int = 16
    alpha: float = 0.01
    beta: float = 0.001
    meta_iters: int = 200
    n_tasks: int = 10
    tau: float = 0.5
    k: int = 5


@dataclass
class DefenderConfig:
    pop_size: int = 50
    generations: int = 50
    mode: str = RISK_AVERSE
    samples: int = 16
    p_crossover: float = 0.9
    eta_c: float = 15.0
    eta_m: float = 20.0


@dataclass
class MonteCarloConfig:
    trials: int = 1000
    top_m: int = 5
    gamma: float = 0.25
    alpha: float = 0.1


@dataclass
class PipelineConfig:
    case_path: str | None = None  # None selects the bundled 69-bus case
    seed: int = 42
    out_dir: str = "results"
    attacker: AttackerConfig = field(default_factory=AttackerConfig)
    defender: DefenderConfig = field(default_factory=DefenderConfig)
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    leader: LeaderConfig = field(default_factory=LeaderConfig)
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    figures: bool = True

    def nsga(self) -> NsgaConfig:
        d = self.defender
        return NsgaConfig(
            pop_size=d.pop_size, generations=d.generations, mode=d.mode, samples=d.samples, seed=self.seed,
            variation=VariationConfig(p_crossover=d.p_crossover, eta_c=d.eta_c, eta_m=d.eta_m),
            admm=self.admm,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["leader"]["w"] = list(self.leader.w)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _merge(cls(), data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _merge(obj, data: dict):
    """Recursively override dataclass fields from a plain dict; unknown keys are an error."""
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            updates[key] = _merge(current, value)
        elif key == "w":
            updates[key] = tuple(float(x) for x in value)
        else:
            updates[key] = value
    return type(obj)(**{**{f.name: getattr(obj, f.name) for f in fields(obj)}, **updates})
