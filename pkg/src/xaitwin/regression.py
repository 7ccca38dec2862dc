"""Multivariate least-squares rate estimator (implicit learner core).

The design matrix has a leading column of ones followed by the five context
features (speed, RSRP, RSRQ, SINR, CQI); the response has one column per link
direction (uplink, downlink).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DegreesOfFreedomError, UnderdeterminedError, ValidationError
from .trace import ContextSample

DEFAULT_TOLERANCE = 0.5  # Mbps
CONDITION_THRESHOLD = 1e12
RIDGE_SCALE = 1e-6


def design_matrix(samples: Sequence[ContextSample]) -> np.ndarray:
    if not samples:
        return np.empty((0, 6))
    feats = np.array([s.features for s in samples], dtype=float)
    return np.column_stack([np.ones(len(samples)), feats])


def response_matrix(samples: Sequence[ContextSample]) -> np.ndarray:
    return np.array([s.rates for s in samples], dtype=float).reshape(len(samples), 2)


def _frozen(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_design(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValidationError(f"design matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("design matrix has non-finite entries")
    if X.shape[0] and not np.all(X[:, 0] == 1.0):
        raise ValidationError("first design column must be all ones")
    return X


@dataclass(frozen=True)
class RateEstimator:
    """Fitted coefficients ((N+1) x 2), residual covariance (2 x 2) and fit diagnostics."""

    coefficients: np.ndarray
    covariance: np.ndarray | None
    residuals: np.ndarray | None
    max_abs_residual: float
    tolerance: float = DEFAULT_TOLERANCE
    ridge: float = 0.0
    condition: float = 1.0
    n_obs: int = 0

    @property
    def regularized(self) -> bool:
        return self.ridge > 0.0

    def predict(self, X: np.ndarray) -> "Prediction":
        return predict(self, X)

    def converged(self) -> bool:
        return residual_converged(self)

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "max_abs_residual": self.max_abs_residual,
            "tolerance": self.tolerance,
            "ridge": self.ridge,
            "regularized": self.regularized,
            "condition": self.condition if np.isfinite(self.condition) else None,
            "n_obs": self.n_obs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RateEstimator":
        cov = data.get("covariance")
        cond = data.get("condition")
        return cls(
            coefficients=_frozen(data["coefficients"]),
            covariance=_frozen(cov) if cov is not None else None,
            residuals=None,
            max_abs_residual=float(data["max_abs_residual"]),
            tolerance=float(data.get("tolerance", DEFAULT_TOLERANCE)),
            ridge=float(data.get("ridge", 0.0)),
            condition=float("inf") if cond is None else float(cond),
            n_obs=int(data.get("n_obs", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "RateEstimator":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Prediction:
    rates: np.ndarray
    clamped: np.ndarray = field(repr=False)

    @property
    def any_clamped(self) -> bool:
        return bool(self.clamped.any())


def fit_least_squares(X: np.ndarray, Y: np.ndarray, *,
                      tolerance: float = DEFAULT_TOLERANCE,
                      condition_threshold: float = CONDITION_THRESHOLD) -> RateEstimator:
    """Least-squares fit of ``Y ~ X @ coef`` via QR.

    Falls back to ridge with strength ``1e-6 * trace(X'X) / (N+1)`` when the
    normal matrix is singular or its condition number exceeds the threshold.
    """
    X = _check_design(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValidationError(f"response has {Y.shape[0]} rows, design has {X.shape[0]}")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("response matrix has non-finite entries")
    J, p = X.shape
    if J < p:
        raise UnderdeterminedError(f"{J} observations for {p} coefficients")

    sv = np.linalg.svd(X, compute_uv=False)
    condition = float("inf") if sv[-1] == 0 else float((sv[0] / sv[-1]) ** 2)
    ridge = 0.0
    if condition > condition_threshold:
        ridge = RIDGE_SCALE * float(np.sum(X * X)) / p  # trace(X'X) = sum of squares
        A = np.vstack([X, np.sqrt(ridge) * np.eye(p)])
        B = np.vstack([Y, np.zeros((p, Y.shape[1]))])
    else:
        A, B = X, Y
    Q, R = np.linalg.qr(A)
    coef = np.linalg.solve(R, Q.T @ B)

    resid = Y - X @ coef
    cov = unbiased_covariance_from_residuals(resid, p) if J > p else None
    return RateEstimator(
        coefficients=_frozen(coef),
        covariance=_frozen(cov),
        residuals=_frozen(resid),
        max_abs_residual=float(np.max(np.abs(resid))) if resid.size else 0.0,
        tolerance=tolerance,
        ridge=ridge,
        condition=condition,
        n_obs=J,
    )


def unbiased_covariance_from_residuals(resid: np.ndarray, n_coef: int) -> np.ndarray:
    J = resid.shape[0]
    dof = J - n_coef
    if dof <= 0:
        raise DegreesOfFreedomError(f"need more than {n_coef} observations, got {J}")
    cov = resid.T @ resid / dof
    return 0.5 * (cov + cov.T)


def unbiased_covariance(estimator: RateEstimator, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Residual covariance scaled by 1/(J - N - 1)."""
    X = _check_design(X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    resid = Y - X @ estimator.coefficients
    return unbiased_covariance_from_residuals(resid, X.shape[1])


def predict(estimator: RateEstimator, X: np.ndarray) -> Prediction:
    """Fitted rates ``X @ coef``; negative entries are clamped to zero and flagged."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = estimator.coefficients.shape[0]
    if X.shape[1] != p:
        raise ValidationError(f"design has {X.shape[1]} columns, estimator expects {p}")
    raw = X @ estimator.coefficients
    clamped = raw < 0
    return Prediction(rates=np.where(clamped, 0.0, raw), clamped=clamped)


def residual_converged(estimator: RateEstimator) -> bool:
    return estimator.max_abs_residual <= estimator.tolerance


class Regressor(Protocol):
    """Anything that fits a design/response pair and returns a fitted model."""

    def fit(self, X: np.ndarray, Y: np.ndarray) -> RateEstimator: ...


@dataclass
class LeastSquaresRegressor:
    tolerance: float = DEFAULT_TOLERANCE
    condition_threshold: float = CONDITION_THRESHOLD

    def fit(self, X: np.ndarray, Y: np.ndarray) -> RateEstimator:
        return fit_least_squares(X, Y, tolerance=self.tolerance,
                                 condition_threshold=self.condition_threshold)
