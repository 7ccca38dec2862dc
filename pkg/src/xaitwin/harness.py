"""Twin orchestration: implicit learners per gNB, reasoner, bandit loop, metrics.

A session is one trace row carrying one service request. The first
``kb_sessions`` sessions form the knowledge base (regression training data
and CPT evidence); the next ``test_sessions`` are decided by the bandit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .bandit import (BanditState, explanation_score, literal_residual, make_policy, residual,
                     warm_start)
from .bayes import DagBayesNet, discretize
from .config import POLICIES, RunConfig
from .delay import RequestEvaluation, evaluate_request
from .errors import ValidationError
from .regression import LeastSquaresRegressor, RateEstimator, Regressor, design_matrix, response_matrix
from .trace import (CQI_MAX, ContextSample, ServiceRequest, parse_trace, synthesize_requests,
                    synthesize_trace)

log = logging.getLogger(__name__)

ACCURACY_FLOOR = 0.01  # Mbps
ACCURACY_DEFINITION = ("100 * (1 - mean over sessions and both directions of "
                       "|predicted - observed| / max(observed, 0.01 Mbps))")
CQI_BANDS = (">=10", "7-10", "<7")
N_FEATURES = 5
# radio features that differ between gNBs; speed belongs to the user
SHIFTED = ("rsrp", "rsrq", "sinr", "cqi")


class InsufficientDataError(ValidationError):
    pass


@dataclass
class Sessions:
    samples: list[ContextSample]
    requests: list[ServiceRequest]
    skipped_rows: int = 0
    row_errors: list = field(default_factory=list)

    def split(self, kb: int, test: int) -> tuple[range, range]:
        if kb + test > len(self.samples):
            raise InsufficientDataError(
                f"need {kb} KB + {test} test sessions, trace has {len(self.samples)}")
        return range(kb), range(kb, kb + test)


def perturb_gnbs(samples: Sequence[ContextSample], offsets: Sequence[float]) -> list[ContextSample]:
    """Shift RSRP and SINR by each sample's gNB offset (dB) so round-robin arms differ.

    Rates stay as measured; each gNB's estimator absorbs the shift.
    """
    out = []
    for s in samples:
        d = float(offsets[s.gnb_id])
        out.append(replace(s, rsrp=s.rsrp + d, sinr=s.sinr + d))
    return out


def load_sessions(config: RunConfig) -> Sessions:
    """Samples from the configured trace (or the generator) plus one request per sample."""
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    trace_seed, request_seed = (int(s.generate_state(1)[0]) for s in seeds)
    if config.trace is not None:
        parsed = parse_trace(config.trace, config.mapping, num_gnbs=config.num_gnbs)
        samples, errors = parsed.samples, parsed.errors
        if errors:
            log.info("skipped %d malformed rows of %d", len(errors), parsed.rows)
        if config.mapping.gnb_mode == "round_robin" and config.num_gnbs > 1:
            offsets = config.generator.offsets(np.random.default_rng(trace_seed))
            samples = perturb_gnbs(samples, offsets)
    else:
        samples, errors = synthesize_trace(config.generator, trace_seed), []
    requests = synthesize_requests(samples, config.requests, request_seed)
    return Sessions(samples, requests, len(errors), errors)


@dataclass(frozen=True)
class SessionRecord:
    """A W tuple: context at gNB ``gnb``, allocation, and the delay/constraint evaluation."""

    session: int
    sample: ContextSample
    request: ServiceRequest
    gnb: int
    allocation: tuple[float, float]
    clamped: bool
    evaluation: RequestEvaluation

    @property
    def feasible(self) -> bool:
        return self.evaluation.verdict.feasible


@dataclass
class ImplicitResult:
    estimators: list[RateEstimator]
    profiles: np.ndarray  # (G, len(SHIFTED)) KB means of the radio features per gNB
    kb: list[SessionRecord]
    test: list[SessionRecord]

    def context_at(self, sample: ContextSample, gnb: int) -> ContextSample:
        """The sample as seen from ``gnb``: radio features moved by the gNB profile gap."""
        if gnb == sample.gnb_id:
            return sample
        delta = self.profiles[gnb] - self.profiles[sample.gnb_id]
        shifted = {name: getattr(sample, name) + d for name, d in zip(SHIFTED, delta)}
        shifted["cqi"] = int(min(max(round(shifted["cqi"]), 0), CQI_MAX))
        return replace(sample, gnb_id=gnb, **shifted)


def report_accuracy(predicted: np.ndarray, truth: np.ndarray, floor: float = ACCURACY_FLOOR) -> float:
    """Percentage accuracy: 100 * (1 - mean relative error), errors relative to max(truth, floor)."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValidationError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValidationError("no sessions to score")
    rel = np.abs(predicted - truth) / np.maximum(truth, floor)
    return float(100.0 * (1.0 - rel.mean()))


def _evaluate(config: RunConfig, session: int, sample: ContextSample, request: ServiceRequest,
              gnb: int, estimator: RateEstimator) -> SessionRecord:
    pred = estimator.predict(design_matrix([sample]))
    alloc = (float(pred.rates[0, 0]), float(pred.rates[0, 1]))
    evaluation = evaluate_request(request, sample, alloc, config.service, config.link,
                                  users=config.users)
    return SessionRecord(session, sample, request, gnb, alloc, pred.any_clamped, evaluation)


def run_implicit(config: RunConfig, sessions: Sessions | None = None,
                 regressor: Regressor | None = None) -> ImplicitResult:
    """Fit one estimator per gNB on its KB sessions, then allocate every KB and test session."""
    sessions = sessions or load_sessions(config)
    regressor = regressor or LeastSquaresRegressor(tolerance=config.tolerance)
    kb_idx, test_idx = sessions.split(config.kb_sessions, config.test_sessions)
    kb_samples = [sessions.samples[i] for i in kb_idx]

    estimators, profiles = [], []
    for g in range(config.num_gnbs):
        own = [s for s in kb_samples if s.gnb_id == g]
        if len(own) < N_FEATURES + 2:
            raise InsufficientDataError(
                f"gNB {g} has {len(own)} KB sessions, need at least {N_FEATURES + 2}")
        est = regressor.fit(design_matrix(own), response_matrix(own))
        if not est.converged():
            log.info("gNB %d: max residual %.4g above tolerance %.4g",
                     g, est.max_abs_residual, est.tolerance)
        estimators.append(est)
        profiles.append([np.mean([getattr(s, n) for s in own]) for n in SHIFTED])

    def records(indices):
        return [_evaluate(config, i, sessions.samples[i], sessions.requests[i],
                          sessions.samples[i].gnb_id, estimators[sessions.samples[i].gnb_id])
                for i in indices]

    return ImplicitResult(estimators, np.asarray(profiles), records(kb_idx), records(test_idx))


def build_reasoner(config: RunConfig, implicit: ImplicitResult) -> DagBayesNet:
    sessions = [discretize(r.sample, r.allocation, r.gnb, config.bins).assignment
                for r in implicit.kb]
    return DagBayesNet.learn(sessions, config.bins, config.dag, config.smoothing)


@dataclass
class ScoreTable:
    """Explanation score of every (test session, gNB) pair, plus the records behind it.

    ``kb_arms`` / ``kb_scores`` are the knowledge-base scores at each session's
    own gNB, used to seed the bandit.
    """

    scores: np.ndarray
    records: list[list[SessionRecord]]
    kb_arms: np.ndarray
    kb_scores: np.ndarray


def _score(config: RunConfig, rec: SessionRecord, net: DagBayesNet) -> float:
    full = discretize(rec.sample, rec.allocation, rec.gnb, config.bins).assignment
    evidence = {n: full[n] for n in config.evidence_nodes}
    return explanation_score(evidence, net, feasible=rec.feasible).score


def score_table(config: RunConfig, implicit: ImplicitResult, net: DagBayesNet) -> ScoreTable:
    G = config.num_gnbs
    scores = np.zeros((len(implicit.test), G))
    rows = []
    for j, own in enumerate(implicit.test):
        row = []
        for g in range(G):
            ctx = implicit.context_at(own.sample, g)
            rec = _evaluate(config, own.session, ctx, own.request, g, implicit.estimators[g])
            scores[j, g] = _score(config, rec, net)
            row.append(rec)
        rows.append(row)
    kb_arms = np.array([r.gnb for r in implicit.kb], dtype=np.int64)
    kb_scores = np.array([_score(config, r, net) for r in implicit.kb])
    return ScoreTable(scores, rows, kb_arms, kb_scores)


@dataclass(frozen=True)
class DecisionRecord:
    session: int
    policy: str
    step: int
    gnb: int
    allocation: tuple[float, float]
    score: float
    verdict: dict[str, bool]
    residual: float
    literal_residual: float
    mean_score: float
    fixed_step_mean: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "session": self.session,
            "policy": self.policy,
            "step": self.step,
            "gnb": self.gnb,
            "uplink": self.allocation[0],
            "downlink": self.allocation[1],
            "score": self.score,
            "verdict": self.verdict,
            "residual": self.residual,
            "literal_residual": self.literal_residual,
            "mean_score": self.mean_score,
            "fixed_step_mean": self.fixed_step_mean,
        }


@dataclass
class PolicyRun:
    name: str
    state: BanditState
    decisions: list[DecisionRecord]

    @property
    def mean_score(self) -> float:
        return float(np.mean([d.score for d in self.decisions]))


def run_policy(config: RunConfig, table: ScoreTable, name: str,
               sessions: Sequence[int]) -> PolicyRun:
    policy = make_policy(name, {"epsilon": config.epsilon, "step_size": config.step_size})
    stream = np.random.SeedSequence([config.seed, POLICIES.index(name)])
    rng = np.random.default_rng(stream)
    T = len(sessions)
    state = BanditState(config.num_gnbs, phi=config.phi, horizon=T)
    if config.warm_start:
        warm_start(state, table.kb_arms, table.kb_scores)
    decisions = []
    for j in range(T):
        arm = policy.select(state, rng)
        score = float(table.scores[j, arm])
        policy.observe(state, arm, score)
        rec = table.records[j][arm]
        decisions.append(DecisionRecord(
            session=sessions[j], policy=name, step=j + 1, gnb=arm,
            allocation=rec.allocation, score=score,
            verdict=rec.evaluation.verdict.to_dict(),
            residual=residual(state, config.target_score),
            literal_residual=literal_residual(state, state.step),
            mean_score=state.mean_score,
            fixed_step_mean=state.fixed_step_mean,
        ))
    return PolicyRun(name, state, decisions)


def cqi_distribution(cqis: Sequence[int]) -> dict[str, float]:
    cqis = np.asarray(cqis)
    n = max(len(cqis), 1)
    return {
        ">=10": float(np.sum(cqis >= 10) / n),
        "7-10": float(np.sum((cqis >= 7) & (cqis < 10)) / n),
        "<7": float(np.sum(cqis < 7) / n),
    }


@dataclass
class MetricsReport:
    accuracy: float
    allocation_errors: list[list[float]]
    association_counts: dict[str, list[int]]
    cqi_distribution: dict[str, dict[str, float]]
    mean_trust: dict[str, float]
    normalized_trust: dict[str, float]
    marginal_trust: dict[str, list[float]]
    residual_trajectory: dict[str, list[float]]
    verdicts: list[dict[str, Any]]
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "accuracy_definition": ACCURACY_DEFINITION,
            "allocation_errors": self.allocation_errors,
            "association_counts": self.association_counts,
            "cqi_distribution": self.cqi_distribution,
            "mean_trust": self.mean_trust,
            "normalized_trust": self.normalized_trust,
            "marginal_trust": self.marginal_trust,
            "residual_trajectory": self.residual_trajectory,
            "verdicts": self.verdicts,
            **self.extras,
        }


def _marginal_trust(run: PolicyRun, G: int) -> list[float]:
    totals = np.zeros(G)
    for d in run.decisions:
        totals[d.gnb] += d.score
    s = totals.sum()
    return (totals / s if s > 0 else np.full(G, 1.0 / G)).tolist()


@dataclass
class TwinRun:
    config: RunConfig
    sessions: Sessions
    implicit: ImplicitResult
    net: DagBayesNet
    table: ScoreTable
    runs: dict[str, PolicyRun]
    report: MetricsReport


def run_explicit(config: RunConfig, implicit: ImplicitResult, net: DagBayesNet,
                 policies: Sequence[str] | None = None,
                 sessions: Sessions | None = None) -> tuple[ScoreTable, dict[str, PolicyRun], MetricsReport]:
    """Score every test session at every gNB, run each policy over the test sessions,
    and assemble the metrics.
    """
    policies = tuple(policies or config.policies)
    G = config.num_gnbs
    table = score_table(config, implicit, net)
    ids = [r.session for r in implicit.test]
    runs = {p: run_policy(config, table, p, ids) for p in policies}

    pred = np.array([r.allocation for r in implicit.test])
    truth = np.array([r.sample.rates for r in implicit.test])
    best = max(run.mean_score for run in runs.values())
    marg = net.marginals()
    report = MetricsReport(
        accuracy=report_accuracy(pred, truth),
        allocation_errors=np.abs(pred - truth).tolist(),
        association_counts={p: run.state.counts.tolist() for p, run in runs.items()},
        cqi_distribution={
            p: cqi_distribution([table.records[d.step - 1][d.gnb].sample.cqi
                                 for d in run.decisions])
            for p, run in runs.items()
        },
        mean_trust={p: run.mean_score for p, run in runs.items()},
        normalized_trust={p: (run.mean_score / best if best > 0 else 0.0)
                          for p, run in runs.items()},
        marginal_trust={p: _marginal_trust(run, G) for p, run in runs.items()},
        residual_trajectory={p: [d.residual for d in run.decisions] for p, run in runs.items()},
        verdicts=[{"session": r.session, "gnb": r.gnb, **r.evaluation.verdict.to_dict()}
                  for r in implicit.test],
        extras={
            "observed_cqi_distribution": cqi_distribution([r.sample.cqi for r in implicit.test]),
            "max_abs_error": {"uplink": float(np.max(np.abs(pred[:, 0] - truth[:, 0]))),
                              "downlink": float(np.max(np.abs(pred[:, 1] - truth[:, 1])))},
            "oracle_mean_trust": float(table.scores.max(axis=1).mean()),
            "per_gnb_mean_score": table.scores.mean(axis=0).tolist(),
            "max_marginals": {n: {"state": net.states[n][int(np.argmax(v))],
                                  "probability": float(np.max(v))}
                              for n, v in marg.items()},
            "implicit": [{"gnb": g, **est.to_dict(), "converged": est.converged()}
                         for g, est in enumerate(implicit.estimators)],
            "feasible_fraction": float(np.mean([r.feasible for r in implicit.test])),
            "skipped_rows": 0 if sessions is None else sessions.skipped_rows,
        },
    )
    return table, runs, report


def run_twin(config: RunConfig) -> TwinRun:
    sessions = load_sessions(config)
    implicit = run_implicit(config, sessions)
    net = build_reasoner(config, implicit)
    table, runs, report = run_explicit(config, implicit, net, sessions=sessions)
    report.extras["config"] = config.summary()
    return TwinRun(config, sessions, implicit, net, table, runs, report)


# --- output files ------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False, **kw)


def summary_csv(runs: dict[str, PolicyRun]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "step", "session", "gnb", "score", "mean_score",
                     "residual", "uplink", "downlink", "feasible"])
    for name, run in runs.items():
        for d in run.decisions:
            writer.writerow([name, d.step, d.session, d.gnb, repr(d.score), repr(d.mean_score),
                             repr(d.residual), repr(d.allocation[0]), repr(d.allocation[1]),
                             int(d.verdict["feasible"])])
    return buf.getvalue()


def write_outputs(result: TwinRun, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.json": dumps(result.report.to_dict(), indent=2) + "\n",
        "summary.csv": summary_csv(result.runs),
        "decisions.ndjson": "".join(dumps(d.to_dict()) + "\n"
                                    for run in result.runs.values() for d in run.decisions),
        "bn.json": dumps(result.net.to_dict()) + "\n",
        "estimators.json": dumps([e.to_dict() for e in result.implicit.estimators],
                                 indent=2) + "\n",
    }
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths

