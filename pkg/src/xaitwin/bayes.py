"""Discrete DAG Bayesian network over binned network metrics.

Inference is exact: the full joint table is built once (product of all CPT
factors, broadcast over the node axes) and every query is a slice of it.
At eight nodes with at most five states each this is a few tens of thousands
of cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EstimationError, EvidenceError, ValidationError
from .trace import ContextSample

MAX_JOINT_CELLS = 1 << 22
NODES = ("speed", "rsrp", "rsrq", "sinr", "cqi", "uplink", "downlink", "gnb")
DEFAULT_EDGES = (
    ("speed", "rsrp"),
    ("rsrp", "sinr"),
    ("rsrp", "rsrq"),
    ("sinr", "cqi"),
    ("rsrq", "downlink"),
    ("cqi", "downlink"),
    ("rsrq", "uplink"),
    ("cqi", "uplink"),
    ("uplink", "gnb"),
    ("downlink", "gnb"),
)

Assignment = Mapping[str, "int | str"]


# --- bin rules ---------------------------------------------------------------

@dataclass(frozen=True)
class Bin:
    label: str
    low: float
    high: float


@dataclass(frozen=True)
class VariableBins:
    """Ordered half-open intervals ``[low, high)``; the top bin also includes ``high``.

    A categorical variable has no intervals, only labels (value = index).
    """

    name: str
    bins: tuple[Bin, ...] = ()
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        labels = self.labels
        if not labels:
            raise ConfigError(f"{self.name}: no bins")
        if len(set(labels)) != len(labels):
            raise ConfigError(f"{self.name}: duplicate bin labels")
        for a, b in zip(self.bins, self.bins[1:]):
            if a.high != b.low:
                raise ConfigError(f"{self.name}: bins {a.label!r} and {b.label!r} "
                                  "are not contiguous")
        for b in self.bins:
            if not b.low < b.high:
                raise ConfigError(f"{self.name}: empty bin {b.label!r}")

    @property
    def labels(self) -> tuple[str, ...]:
        return self.categories or tuple(b.label for b in self.bins)

    @property
    def size(self) -> int:
        return len(self.labels)

    def locate(self, value: float) -> tuple[int, bool]:
        """Bin index for ``value`` and whether it had to be clamped into the envelope."""
        if self.categories:
            idx = int(value)
            if 0 <= idx < len(self.categories):
                return idx, False
            return min(max(idx, 0), len(self.categories) - 1), True
        if value < self.bins[0].low:
            return 0, True
        last = len(self.bins) - 1
        if value > self.bins[last].high:
            return last, True
        for i, b in enumerate(self.bins):
            if value < b.high:
                return i, False
        return last, False  # value == top edge, closed above

    def to_dict(self) -> dict[str, Any]:
        if self.categories:
            return {"categories": list(self.categories)}

        def edge(x):
            return None if math.isinf(x) else float(x)

        return {"bins": [{"label": b.label, "low": edge(b.low), "high": edge(b.high)}
                         for b in self.bins]}

    @classmethod
    def from_dict(cls, name: str, data: Mapping[str, Any]) -> "VariableBins":
        if "categories" in data:
            return cls(name, categories=tuple(str(c) for c in data["categories"]))
        bins = []
        for item in data["bins"]:
            low = -math.inf if item.get("low") is None else float(item["low"])
            high = math.inf if item.get("high") is None else float(item["high"])
            bins.append(Bin(str(item["label"]), low, high))
        return cls(name, bins=tuple(bins))


def _ladder(name: str, edges: Sequence[float], labels: Sequence[str],
            low: float = -math.inf, high: float = math.inf) -> VariableBins:
    bounds = [low, *edges, high]
    return VariableBins(name, tuple(Bin(lab, lo, hi)
                                    for lab, lo, hi in zip(labels, bounds, bounds[1:])))


UPLINK_TABLE = ((50.0, 100.0), ("<=50000kbps", "50000-100000kbps", ">=100000kbps"))
DOWNLINK_TABLE = ((0.1, 0.8), ("<=100kbps", "100-800kbps", ">=800kbps"))


def gnb_labels(num_gnbs: int) -> tuple[str, ...]:
    return tuple(f"gNB{g + 1}" for g in range(num_gnbs))


@dataclass(frozen=True)
class BinRuleSet:
    variables: Mapping[str, VariableBins]

    def __getitem__(self, name: str) -> VariableBins:
        return self.variables[name]

    @classmethod
    def preset(cls, num_gnbs: int = 5, *, swapped: bool = False) -> "BinRuleSet":
        """Experiment-table ranges; rates in Mbps.

        ``swapped`` exchanges the uplink and downlink ladders, which fits traces
        where downlink throughput is the larger of the two.
        """
        up, down = (DOWNLINK_TABLE, UPLINK_TABLE) if swapped else (UPLINK_TABLE, DOWNLINK_TABLE)
        vs = [
            _ladder("speed", (30, 60, 80), ("<=30", "30-60", "60-80", ">=80"), low=0.0),
            _ladder("rsrp", (-100, -90, -80),
                    ("<=-100", "-90 to -100", "-80 to -90", ">=-80")),
            _ladder("rsrq", (-15, -10), ("<=-15", "-10 to -15", ">=-10")),
            _ladder("sinr", (0, 13, 20), ("<=0", "0-13", "13-20", ">=20")),
            _ladder("cqi", (7, 10), ("<=7", "7-10", ">=10"), low=0.0, high=15.0),
            _ladder("uplink", up[0], up[1], low=0.0),
            _ladder("downlink", down[0], down[1], low=0.0),
            VariableBins("gnb", categories=gnb_labels(num_gnbs)),
        ]
        return cls({v.name: v for v in vs})

    def to_dict(self) -> dict[str, Any]:
        return {name: v.to_dict() for name, v in self.variables.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BinRuleSet":
        return cls({name: VariableBins.from_dict(name, v) for name, v in data.items()})

    def with_overrides(self, data: Mapping[str, Any]) -> "BinRuleSet":
        merged = dict(self.variables)
        for name, v in data.items():
            merged[name] = VariableBins.from_dict(name, v)
        return BinRuleSet(merged)


@dataclass(frozen=True)
class Discretized:
    assignment: dict[str, int]
    clamped: frozenset[str]


def discretize(sample: ContextSample, allocation: tuple[float, float], gnb: int,
               rules: BinRuleSet) -> Discretized:
    """Full assignment over the eight nodes. Out-of-envelope values are clamped
    into the nearest boundary bin and reported in ``clamped``.
    """
    values = {
        "speed": sample.speed,
        "rsrp": sample.rsrp,
        "rsrq": sample.rsrq,
        "sinr": sample.sinr,
        "cqi": float(sample.cqi),
        "uplink": float(allocation[0]),
        "downlink": float(allocation[1]),
        "gnb": gnb,
    }
    out, clamped = {}, set()
    for name, value in values.items():
        idx, flag = rules[name].locate(value)
        out[name] = idx
        if flag:
            clamped.add(name)
    return Discretized(out, frozenset(clamped))


# --- structure -----------------------------------------------------------------

@dataclass(frozen=True)
class DagStructure:
    nodes: tuple[str, ...]
    parents: Mapping[str, tuple[str, ...]]
    order: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigError("duplicate node names")
        parents = {n: tuple(self.parents.get(n, ())) for n in self.nodes}
        for n, ps in parents.items():
            for p in ps:
                if p not in parents:
                    raise ConfigError(f"parent {p!r} of {n!r} is not a node")
        object.__setattr__(self, "parents", parents)
        # Kahn's algorithm, ties resolved by node list order
        remaining = dict(parents)
        order: list[str] = []
        while remaining:
            ready = [n for n in self.nodes if n in remaining
                     and all(p in order for p in remaining[n])]
            if not ready:
                raise ConfigError(f"cycle among nodes {sorted(remaining)}")
            order.append(ready[0])
            del remaining[ready[0]]
        object.__setattr__(self, "order", tuple(order))

    @classmethod
    def from_edges(cls, nodes: Sequence[str], edges: Iterable[tuple[str, str]]) -> "DagStructure":
        parents: dict[str, list[str]] = {n: [] for n in nodes}
        for a, b in edges:
            if b not in parents:
                raise ConfigError(f"edge target {b!r} is not a node")
            parents[b].append(a)
        return cls(tuple(nodes), {n: tuple(ps) for n, ps in parents.items()})

    @classmethod
    def default(cls) -> "DagStructure":
        return cls.from_edges(NODES, DEFAULT_EDGES)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, n) for n in self.nodes for p in self.parents[n]]


# --- CPT learning ----------------------------------------------------------------

def learn_cpts(sessions: Sequence[Mapping[str, int]], dag: DagStructure,
               cards: Mapping[str, int], smoothing: float = 1.0) -> dict[str, np.ndarray]:
    """Counts plus ``smoothing`` pseudo-count per cell, normalized per parent row.

    Each CPT has axes (parent_1, ..., parent_k, node) in the structure's parent order.
    """
    if smoothing < 0:
        raise EstimationError("smoothing must be >= 0")
    if not sessions and smoothing == 0:
        raise EstimationError("no sessions and zero smoothing: CPTs undefined")
    cpts = {}
    for node in dag.nodes:
        axes = (*dag.parents[node], node)
        shape = tuple(cards[a] for a in axes)
        counts = np.full(shape, float(smoothing))
        if sessions:
            idx = np.array([[s[a] for a in axes] for s in sessions], dtype=np.intp)
            for k, a in enumerate(axes):
                if idx[:, k].min() < 0 or idx[:, k].max() >= cards[a]:
                    raise EstimationError(f"session bin index out of range for {a!r}")
            np.add.at(counts, tuple(idx.T), 1.0)
        totals = counts.sum(axis=-1, keepdims=True)
        empty = totals == 0
        counts = np.where(empty, 1.0, counts)
        totals = np.where(empty, shape[-1], totals)
        cpts[node] = counts / totals
    return cpts


# --- network -------------------------------------------------------------------

class DagBayesNet:
    """Structure, state labels and CPTs; immutable after construction."""

    def __init__(self, dag: DagStructure, states: Mapping[str, Sequence[str]],
                 cpts: Mapping[str, np.ndarray], rules: BinRuleSet | None = None):
        self.dag = dag
        self.states = {n: tuple(states[n]) for n in dag.nodes}
        self.rules = rules
        self.cards = {n: len(s) for n, s in self.states.items()}
        self._axis = {n: i for i, n in enumerate(dag.nodes)}
        self.cpts: dict[str, np.ndarray] = {}
        for n in dag.nodes:
            table = np.array(cpts[n], dtype=float)
            expected = tuple(self.cards[a] for a in (*dag.parents[n], n))
            if table.shape != expected:
                raise ValidationError(f"CPT for {n!r} has shape {table.shape}, "
                                      f"expected {expected}")
            if np.any(table < 0) or not np.allclose(table.sum(axis=-1), 1.0, atol=1e-9):
                raise ValidationError(f"CPT rows for {n!r} must be distributions")
            table.setflags(write=False)
            self.cpts[n] = table
        cells = math.prod(self.cards.values())
        if cells > MAX_JOINT_CELLS:
            raise ValidationError(f"joint table of {cells} cells exceeds {MAX_JOINT_CELLS}")
        self._joint: np.ndarray | None = None

    @classmethod
    def learn(cls, sessions: Sequence[Mapping[str, int]], rules: BinRuleSet,
              dag: DagStructure | None = None, smoothing: float = 1.0) -> "DagBayesNet":
        dag = dag or DagStructure.default()
        states = {n: rules[n].labels for n in dag.nodes}
        cards = {n: len(s) for n, s in states.items()}
        return cls(dag, states, learn_cpts(sessions, dag, cards, smoothing), rules)

    # -- helpers
    def index(self, node: str, value: int | str) -> int:
        if node not in self.states:
            raise ValidationError(f"unknown node {node!r}")
        labels = self.states[node]
        if isinstance(value, str):
            try:
                return labels.index(value)
            except ValueError:
                raise ValidationError(f"{node!r} has no state {value!r}") from None
        idx = int(value)
        if not 0 <= idx < len(labels):
            raise ValidationError(f"{node!r} state index {idx} out of range")
        return idx

    def _resolve(self, assignment: Assignment) -> dict[str, int]:
        return {n: self.index(n, v) for n, v in assignment.items()}

    @property
    def joint(self) -> np.ndarray:
        if self._joint is None:
            n = len(self.dag.nodes)
            joint = np.ones(tuple(self.cards[x] for x in self.dag.nodes))
            for node in self.dag.nodes:
                axes = [self._axis[a] for a in (*self.dag.parents[node], node)]
                perm = np.argsort(axes)
                factor = np.transpose(self.cpts[node], perm)
                shape = [1] * n
                for ax, size in zip(sorted(axes), factor.shape):
                    shape[ax] = size
                joint = joint * factor.reshape(shape)
            joint.setflags(write=False)
            self._joint = joint
        return self._joint

    def _slice(self, evidence: Mapping[str, int]) -> np.ndarray:
        key = tuple(evidence.get(n, slice(None)) for n in self.dag.nodes)
        return self.joint[key]

    # -- queries
    def joint_probability(self, assignment: Assignment) -> float:
        """Product over nodes of P(node | parents) at the given full assignment."""
        a = self._resolve(assignment)
        missing = [n for n in self.dag.nodes if n not in a]
        if missing:
            raise ValidationError(f"assignment missing nodes {missing}")
        p = 1.0
        for node in self.dag.nodes:
            p *= float(self.cpts[node][tuple(a[x] for x in (*self.dag.parents[node], node))])
        return p

    def evidence_probability(self, evidence: Assignment) -> float:
        return float(self._slice(self._resolve(evidence)).sum())

    def query_conditional(self, target: str, evidence: Assignment) -> np.ndarray:
        """P(target | evidence) by summing the joint over the unobserved nodes."""
        e = self._resolve(evidence)
        if target in e:
            raise ValidationError(f"target {target!r} is part of the evidence")
        if target not in self.states:
            raise ValidationError(f"unknown node {target!r}")
        sub = self._slice(e)
        free = [n for n in self.dag.nodes if n not in e]
        t = free.index(target)
        marginal = sub.sum(axis=tuple(i for i in range(len(free)) if i != t))
        total = marginal.sum()
        if total <= 0:
            raise EvidenceError("evidence has zero probability")
        return marginal / total

    def most_probable_explanation(self, evidence: Assignment) -> tuple[dict[str, int], float]:
        """argmax over unobserved assignments of P(z | e), and that probability.

        Ties go to the lexicographically smallest index vector (nodes in
        structure order).
        """
        e = self._resolve(evidence)
        sub = self._slice(e)
        total = float(sub.sum())
        if total <= 0:
            raise EvidenceError("evidence has zero probability")
        free = [n for n in self.dag.nodes if n not in e]
        if not free:
            return {}, 1.0
        flat = int(np.argmax(sub))  # first maximum in C order
        idx = np.unravel_index(flat, sub.shape)
        return {n: int(i) for n, i in zip(free, idx)}, float(sub.flat[flat]) / total

    def marginals(self) -> dict[str, np.ndarray]:
        return {n: self.query_conditional(n, {}) for n in self.dag.nodes}

    def labels_of(self, assignment: Mapping[str, int]) -> dict[str, str]:
        return {n: self.states[n][i] for n, i in assignment.items()}

    # -- serialization
    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": list(self.dag.nodes),
            "parents": {n: list(ps) for n, ps in self.dag.parents.items()},
            "states": {n: list(s) for n, s in self.states.items()},
            "cpts": {n: t.tolist() for n, t in self.cpts.items()},
            "rules": None if self.rules is None else self.rules.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DagBayesNet":
        dag = DagStructure(tuple(data["nodes"]),
                           {n: tuple(ps) for n, ps in data["parents"].items()})
        rules = BinRuleSet.from_dict(data["rules"]) if data.get("rules") else None
        return cls(dag, data["states"], {n: np.array(t) for n, t in data["cpts"].items()}, rules)

    @classmethod
    def from_json(cls, text: str) -> "DagBayesNet":
        return cls.from_dict(json.loads(text))
