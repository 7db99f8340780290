"""Run configuration files (YAML).

Keys mirror the library types; ``scenario.eta`` may be a scalar or a per-round
list. Unknown keys are rejected so typos surface as config errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from afarq.fading import ChannelStats
from afarq.montecarlo import SimConfig
from afarq.opa import SolverConfig
from afarq.outage import Scenario


class ConfigError(ValueError):
    pass


_SCENARIO_KEYS = {"M": "M", "R_npcu": "rate", "eta": "eta", "target_eps": "target_eps",
                  "rate_schedule": "rate_schedule"}
_FLOATS = {"R_npcu", "target_eps", "sigma2_sd", "sigma2_sr", "sigma2_rd",
           "bisection_tol", "kkt_tol", "oracle_grad_tol"}
_INTS = {"M", "max_iters", "trials", "seed", "workers", "chunk_size"}


def _coerce(section: str, key: str, value):
    # PyYAML reads "1e-5" (no dot) as a string
    try:
        if key in _FLOATS:
            return float(value)
        if key in _INTS:
            if isinstance(value, float) and value.is_integer():
                return int(value)
            if isinstance(value, str):
                return int(float(value)) if float(value).is_integer() else value
            return value
        if key == "eta":
            if isinstance(value, (list, tuple)):
                return tuple(float(v) for v in value)
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {value!r}") from exc
    return value


def _build(cls, section: str, raw: dict, keymap: dict | None = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(raw).__name__}")
    names = keymap or {f.name: f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    kwargs = {names[k]: _coerce(section, k, v) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        # surface the offending field name
        bad = next((k for k in raw if names[k] in str(exc)), None)
        where = f"{section}.{bad}" if bad else section
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = field(default_factory=lambda: Scenario(M=2))
    stats: ChannelStats = field(default_factory=ChannelStats)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    output_path: str = "afarq_out.csv"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("top level: expected a mapping")
        unknown = set(raw) - {"scenario", "stats", "solver", "sim", "output_path"}
        if unknown:
            raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
        scen = dict(raw.get("scenario") or {})
        scen.setdefault("M", 2)
        return cls(
            scenario=_build(Scenario, "scenario", scen, _SCENARIO_KEYS),
            stats=_build(ChannelStats, "stats", raw.get("stats")),
            solver=_build(SolverConfig, "solver", raw.get("solver")),
            sim=_build(SimConfig, "sim", raw.get("sim")),
            output_path=str(raw.get("output_path", "afarq_out.csv")),
        )

    def to_dict(self) -> dict:
        s = self.scenario
        return {
            "scenario": {"M": s.M, "R_npcu": s.rate, "eta": list(s.eta),
                         "target_eps": s.target_eps, "rate_schedule": s.rate_schedule.value},
            "stats": dataclasses.asdict(self.stats),
            "solver": {**dataclasses.asdict(self.solver),
                       "recursion_variant": self.solver.recursion_variant.value},
            "sim": dataclasses.asdict(self.sim),
            "output_path": self.output_path,
        }

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def loads(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    return RunConfig.from_dict(raw)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def dumps(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
