"""gNB association as a multi-armed bandit over explanation scores.

Each gNB is an arm. The reward of pulling it for a session is the
explanation score: the conditional probability of the most probable
explanation of the unobserved metrics given the allocation evidence, or zero
when the allocation violates a constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bayes import Assignment, DagBayesNet
from .errors import EvidenceError, ValidationError


@dataclass(frozen=True)
class Explanation:
    score: float
    assignment: dict[str, int]
    zero_evidence: bool = False


def explanation_score(evidence: Assignment, net: DagBayesNet, *,
                      feasible: bool = True) -> Explanation:
    """P(MPE | evidence); 1.0 when every node is observed, 0.0 when infeasible."""
    try:
        assignment, p = net.most_probable_explanation(evidence)
    except EvidenceError:
        return Explanation(0.0, {}, zero_evidence=True)
    return Explanation(p if feasible else 0.0, assignment)


@dataclass
class BanditState:
    """Per-arm scores and pull counts, plus the running mean over all scores.

    ``fixed_step_mean`` tracks the alternative reading of the mean-score update
    with a constant step of ``1/horizon``; it is logged, never used for decisions.
    ``prior_counts`` / ``prior_sums`` hold what :func:`warm_start` loaded from the
    knowledge base, so the running mean and decision index cover live decisions only.
    """

    num_arms: int
    phi: float = 1.0
    horizon: int = 0
    scores: np.ndarray = field(default=None)
    counts: np.ndarray = field(default=None)
    mean_score: float = 0.0
    fixed_step_mean: float = 0.0
    step: int = 0
    preferences: np.ndarray = field(default=None)
    prior_counts: np.ndarray = field(default=None)
    prior_sums: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_arms < 1:
            raise ValidationError("need at least one arm")
        if self.scores is None:
            self.scores = np.zeros(self.num_arms)
        if self.counts is None:
            self.counts = np.zeros(self.num_arms, dtype=np.int64)
        if self.preferences is None:
            self.preferences = np.zeros(self.num_arms)
        if self.prior_counts is None:
            self.prior_counts = np.zeros(self.num_arms, dtype=np.int64)
        if self.prior_sums is None:
            self.prior_sums = np.zeros(self.num_arms)
        self.scores = np.asarray(self.scores, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.preferences = np.asarray(self.preferences, dtype=float)


def update_arm(state: BanditState, arm: int, score: float) -> BanditState:
    """Incremental-mean update of the arm's score and of the overall running mean."""
    if not 0 <= arm < state.num_arms:
        raise ValidationError(f"arm {arm} outside 0..{state.num_arms - 1}")
    state.counts[arm] += 1
    n = state.counts[arm]
    state.scores[arm] += (score - state.scores[arm]) / n
    state.step += 1
    state.mean_score += (score - state.mean_score) / state.step
    k = state.horizon if state.horizon > 0 else state.step
    state.fixed_step_mean += (score - state.fixed_step_mean) / k
    return state


def warm_start(state: BanditState, arms, scores) -> BanditState:
    """Seed per-arm scores and counts from knowledge-base (arm, score) pairs.

    Only Θ and the per-arm counts move; the running mean and step stay at the
    live-decision values.
    """
    arms = np.asarray(arms, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    if arms.shape != scores.shape:
        raise ValidationError("arms and scores must have equal length")
    if arms.size and (arms.min() < 0 or arms.max() >= state.num_arms):
        raise ValidationError("knowledge-base arm outside the arm set")
    for a, y in zip(arms, scores):
        state.counts[a] += 1
        state.scores[a] += (y - state.scores[a]) / state.counts[a]
        state.prior_counts[a] += 1
        state.prior_sums[a] += y
    return state


def select_ucb(state: BanditState) -> int:
    """argmax of score + phi * sqrt(log j / n); unpulled arms first, lowest index on ties."""
    unpulled = np.flatnonzero(state.counts == 0)
    if unpulled.size:
        return int(unpulled[0])
    j = max(state.step, 1)
    ucb = state.scores + state.phi * np.sqrt(math.log(j) / state.counts)
    return int(np.argmax(ucb))


def residual(state: BanditState, target: float = 1.0) -> float:
    """Gap between the target explanation score and the running mean score."""
    return target - state.mean_score


def literal_residual(state: BanditState, sessions: int) -> float:
    """(mean * sessions - sum of per-arm accumulated scores) / sessions.

    Knowledge-base contributions loaded by :func:`warm_start` are excluded.
    """
    if sessions < 1:
        raise ValidationError("sessions must be >= 1")
    accumulated = float(np.dot(state.counts, state.scores) - state.prior_sums.sum())
    return (state.mean_score * sessions - accumulated) / sessions


def greedy(state: BanditState) -> int:
    return int(np.argmax(state.scores))


def select_epsilon_greedy(state: BanditState, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(state.num_arms))
    return greedy(state)


def softmax(h: np.ndarray) -> np.ndarray:
    z = np.exp(h - h.max())
    return z / z.sum()


def select_gradient_bandit(state: BanditState, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    pi = softmax(state.preferences)
    arm = int(rng.choice(state.num_arms, p=pi))
    return arm, pi


def update_preferences(state: BanditState, arm: int, score: float, baseline: float,
                       step_size: float) -> BanditState:
    """Gradient-bandit preference step against ``baseline``."""
    if step_size <= 0:
        raise ValidationError("step_size must be > 0")
    pi = softmax(state.preferences)
    delta = step_size * (score - baseline)
    one_hot = np.zeros(state.num_arms)
    one_hot[arm] = 1.0
    state.preferences = state.preferences + delta * (one_hot - pi)
    return state


# --- policies used by the decision loop -----------------------------------------

class UcbPolicy:
    name = "ucb"

    def select(self, state: BanditState, rng: np.random.Generator) -> int:
        return select_ucb(state)

    def observe(self, state: BanditState, arm: int, score: float) -> None:
        update_arm(state, arm, score)


@dataclass
class EpsilonGreedyPolicy:
    epsilon: float = 0.1
    name: str = "epsilon"

    def select(self, state: BanditState, rng: np.random.Generator) -> int:
        return select_epsilon_greedy(state, self.epsilon, rng)

    def observe(self, state: BanditState, arm: int, score: float) -> None:
        update_arm(state, arm, score)


@dataclass
class GradientPolicy:
    step_size: float = 0.1
    name: str = "gradient"

    def select(self, state: BanditState, rng: np.random.Generator) -> int:
        return select_gradient_bandit(state, rng)[0]

    def observe(self, state: BanditState, arm: int, score: float) -> None:
        # baseline is the mean of scores seen before this one
        update_preferences(state, arm, score, state.mean_score, self.step_size)
        update_arm(state, arm, score)


def make_policy(name: str, params: Mapping[str, float] | None = None):
    params = params or {}
    if name == "ucb":
        return UcbPolicy()
    if name == "epsilon":
        return EpsilonGreedyPolicy(float(params.get("epsilon", 0.1)))
    if name == "gradient":
        return GradientPolicy(float(params.get("step_size", 0.1)))
    raise ValidationError(f"unknown policy {name!r} (ucb | epsilon | gradient)")
