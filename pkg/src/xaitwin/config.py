"""Run configuration, loaded from a sectioned TOML file.

Every section is optional; missing keys fall back to the defaults below.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bayes import NODES, BinRuleSet, DagStructure
from .delay import LinkParams, ServiceClassParams, link_from_dict, service_from_dict
from .errors import ConfigError
from .regression import DEFAULT_TOLERANCE
from .trace import (ColumnMapping, GeneratorConfig, RequestConfig, bitrate_schema_mapping,
                    canonical_mapping)

POLICIES = ("ucb", "epsilon", "gradient")
CONTEXT_NODES = ("speed", "rsrp", "rsrq", "sinr", "cqi")


def default_service() -> ServiceClassParams:
    # mean_service_time is a placeholder; per-request moments come from for_payload
    return ServiceClassParams.from_cv(arrival_rate=1.0, compute_capacity=0.5,
                                      mean_service_time=1.0, squared_cv=1.0,
                                      max_utilization=0.8)


@dataclass
class RunConfig:
    num_gnbs: int = 5
    seed: int = 0
    trace: Path | None = None
    mapping: ColumnMapping = field(default_factory=bitrate_schema_mapping)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    requests: RequestConfig = field(default_factory=RequestConfig)
    kb_sessions: int = 662
    test_sessions: int = 205
    phi: float = 1.0
    epsilon: float = 0.1
    step_size: float = 0.1
    warm_start: bool = True
    tolerance: float = DEFAULT_TOLERANCE
    target_score: float = 1.0
    smoothing: float = 1.0
    users: int = 1
    observed_context: tuple[str, ...] = ("speed", "rsrp", "sinr")
    bins: BinRuleSet | None = None
    bins_preset: str = "swapped"
    dag: DagStructure = field(default_factory=DagStructure.default)
    link: LinkParams = field(default_factory=LinkParams)
    service: ServiceClassParams = field(default_factory=default_service)
    policies: tuple[str, ...] = POLICIES
    output: Path | None = None

    def __post_init__(self):
        if self.num_gnbs < 1:
            raise ConfigError("num_gnbs must be >= 1")
        if self.kb_sessions < 1 or self.test_sessions < 1:
            raise ConfigError("kb_sessions and test_sessions must be >= 1")
        if self.users < 1:
            raise ConfigError("users must be >= 1")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.step_size <= 0:
            raise ConfigError("step_size must be > 0")
        if self.phi < 0:
            raise ConfigError("phi must be >= 0")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad or not self.policies:
            raise ConfigError(f"unknown or empty policies {bad}; choose from {POLICIES}")
        bad = [n for n in self.observed_context if n not in CONTEXT_NODES]
        if bad:
            raise ConfigError(f"observed_context must be context nodes, got {bad}")
        if self.bins is None:
            self.bins = BinRuleSet.preset(self.num_gnbs, swapped=self.bins_preset == "swapped")
        if self.bins["gnb"].size != self.num_gnbs:
            raise ConfigError("gnb bin count must equal num_gnbs")
        if set(self.dag.nodes) != set(NODES):
            raise ConfigError(f"DAG nodes must be exactly {NODES}")
        if self.generator.num_gnbs != self.num_gnbs:
            self.generator = replace(self.generator, num_gnbs=self.num_gnbs)

    @property
    def evidence_nodes(self) -> tuple[str, ...]:
        return (*self.observed_context, "uplink", "downlink", "gnb")

    def summary(self) -> dict[str, Any]:
        """Plain-data echo of the settings that shape results."""
        return {
            "num_gnbs": self.num_gnbs,
            "seed": self.seed,
            "trace": None if self.trace is None else str(self.trace),
            "kb_sessions": self.kb_sessions,
            "test_sessions": self.test_sessions,
            "phi": self.phi,
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "warm_start": self.warm_start,
            "tolerance": self.tolerance,
            "target_score": self.target_score,
            "smoothing": self.smoothing,
            "users": self.users,
            "evidence_nodes": list(self.evidence_nodes),
            "bins_preset": self.bins_preset,
            "policies": list(self.policies),
            "dag_edges": [list(e) for e in self.dag.edges],
        }


def _section(data: Mapping[str, Any], name: str) -> dict[str, Any]:
    value = data.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    return dict(value)


MAPPING_PRESETS = {"bitrate": bitrate_schema_mapping, "canonical": canonical_mapping}

_RUN_KEYS = {"num_gnbs", "seed", "trace", "kb_sessions", "test_sessions", "target_score",
             "smoothing", "users", "observed_context", "bins_preset", "policies", "output"}


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    run = _section(data, "run")
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown [run] keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key in ("num_gnbs", "seed", "kb_sessions", "test_sessions", "users"):
        if key in run:
            kwargs[key] = int(run[key])
    for key in ("target_score", "smoothing"):
        if key in run:
            kwargs[key] = float(run[key])
    if "observed_context" in run:
        kwargs["observed_context"] = tuple(run["observed_context"])
    if "policies" in run:
        kwargs["policies"] = tuple(run["policies"])
    for key in ("trace", "output"):
        if run.get(key):
            p = Path(run[key])
            kwargs[key] = p if p.is_absolute() or base_dir is None else base_dir / p
    num_gnbs = kwargs.get("num_gnbs", 5)

    preset = run.get("bins_preset", "swapped")
    if preset not in ("table", "swapped"):
        raise ConfigError(f"bins_preset must be 'table' or 'swapped', got {preset!r}")
    bins = BinRuleSet.preset(num_gnbs, swapped=(preset == "swapped"))
    overrides = _section(data, "bins")
    if overrides:
        bins = bins.with_overrides(overrides)
    kwargs["bins"] = bins
    kwargs["bins_preset"] = preset

    bandit = _section(data, "bandit")
    for key in ("phi", "epsilon", "step_size"):
        if key in bandit:
            kwargs[key] = float(bandit[key])
    if "warm_start" in bandit:
        kwargs["warm_start"] = bool(bandit["warm_start"])
    reg = _section(data, "regression")
    if "tolerance" in reg:
        kwargs["tolerance"] = float(reg["tolerance"])

    if "synthetic" in data:
        gen = _section(data, "synthetic")
        gen.setdefault("num_gnbs", num_gnbs)
        kwargs["generator"] = GeneratorConfig.from_dict(gen)
    if "requests" in data:
        kwargs["requests"] = RequestConfig.from_dict(_section(data, "requests"))
    if "mapping" in data:
        mapping = _section(data, "mapping")
        preset = mapping.pop("preset", None)
        if preset is not None:
            if mapping or preset not in MAPPING_PRESETS:
                raise ConfigError(f"[mapping] preset must be one of {sorted(MAPPING_PRESETS)} "
                                  "and stand alone")
            kwargs["mapping"] = MAPPING_PRESETS[preset]()
        else:
            kwargs["mapping"] = ColumnMapping.from_dict(mapping)
    if "link" in data:
        try:
            kwargs["link"] = link_from_dict(_section(data, "link"))
        except TypeError as exc:
            raise ConfigError(f"[link]: {exc}") from None
    if "service" in data:
        svc = _section(data, "service")
        svc.setdefault("mean_service_time", 1.0)
        try:
            kwargs["service"] = service_from_dict(svc)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"[service]: {exc}") from None
    dag = _section(data, "dag")
    if "edges" in dag:
        kwargs["dag"] = DagStructure.from_edges(NODES, [tuple(e) for e in dag["edges"]])
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)
