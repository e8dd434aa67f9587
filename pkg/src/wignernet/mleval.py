"""Gaussian two-class task, GDA baseline, Bayes error and error-rate bookkeeping."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc

__all__ = [
    "GaussianTask", "ErrorEstimate", "GDAClassifier", "EmptyInput", "DegenerateCovariance",
    "sample_dataset", "gda_fit", "gda_predict", "optimal_error_rate", "estimate_error_rate",
    "aggregate", "SEPARATION_GRID",
]

SEPARATION_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0)


class EmptyInput(ValueError):
    pass


class DegenerateCovariance(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GaussianTask:
    """Two isotropic Gaussian classes with common width ``sigma``."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma: float
    separation: float = field(default=float("nan"))

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, float).reshape(-1)
        mu1 = np.asarray(self.mu1, float).reshape(-1)
        if mu0.shape != mu1.shape:
            raise ValueError("class means differ in dimension")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        sep = float(np.linalg.norm(mu1 - mu0) / self.sigma)
        if not math.isnan(self.separation) and abs(sep - self.separation) > 1e-12 * max(1.0, sep):
            raise ValueError(f"stored separation {self.separation} != {sep}")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "separation", sep)

    @property
    def dim(self) -> int:
        return self.mu0.size

    @classmethod
    def symmetric(cls, dim: int, separation: float, sigma: float = 1.0,
                  direction: Sequence[float] | None = None) -> "GaussianTask":
        """Means at ``+-separation*sigma/2`` along ``direction`` (default: all ones).

        Centring on the origin lets a classifier without an offset term reach
        the Bayes boundary.
        """
        if separation < 0:
            raise ValueError("separation must be >= 0")
        u = np.ones(dim) if direction is None else np.asarray(direction, float).reshape(-1)
        if u.size != dim or not np.any(u):
            raise ValueError("direction must be a nonzero vector of length dim")
        u = u / np.linalg.norm(u)
        half = separation * sigma / 2 * u
        return cls(-half, half, sigma)


@dataclass(frozen=True)
class ErrorEstimate:
    p_err: float
    stderr: float
    n_samples: int
    n_trials: int = 1
    sd: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_err <= 1.0:
            raise ValueError("p_err must lie in [0, 1]")


def sample_dataset(task: GaussianTask, M: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``M`` samples with fair-coin labels and ``x | y ~ N(mu_y, sigma^2 I)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=M)
    means = np.where(y[:, None] == 1, task.mu1, task.mu0)
    X = means + task.sigma * rng.standard_normal((M, task.dim))
    return X, y


@dataclass(frozen=True)
class GDAClassifier:
    """Linear discriminant ``w.x + b``; label 1 when it is ``>= 0``."""

    w: np.ndarray
    b: float
    mu0: np.ndarray
    mu1: np.ndarray
    cov: np.ndarray
    priors: tuple[float, float]

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, float).reshape(-1, self.w.size) @ self.w + self.b


def gda_fit(X, y) -> GDAClassifier:
    """Shared-covariance Gaussian discriminant analysis."""
    X = np.asarray(X, float)
    y = np.asarray(y).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyInput("no training samples")
    if X.shape[0] != y.size:
        raise ValueError("X and y lengths differ")
    X0, X1 = X[y == 0], X[y == 1]
    if len(X0) == 0 or len(X1) == 0:
        raise ValueError("both classes must be present in the training data")
    mu0, mu1 = X0.mean(0), X1.mean(0)
    R = np.vstack([X0 - mu0, X1 - mu1])
    n = X.shape[1]
    cov = R.T @ R / max(len(R) - 2, 1)
    try:
        bad = np.linalg.cond(cov) > 1e12
    except np.linalg.LinAlgError:
        bad = True
    if bad:
        eps = 1e-9 * np.trace(cov) / n
        if eps == 0:
            eps = 1e-9
        warnings.warn(f"pooled covariance is singular; adding {eps:.3g} I", DegenerateCovariance)
        cov = cov + eps * np.eye(n)
    p1 = len(X1) / len(X)
    w = np.linalg.solve(cov, mu1 - mu0)
    b = -0.5 * float((mu1 + mu0) @ w) + math.log(p1 / (1 - p1))
    return GDAClassifier(w, b, mu0, mu1, cov, (1 - p1, p1))


def gda_predict(clf: GDAClassifier, X) -> np.ndarray:
    return (clf.decision(X) >= 0).astype(int)


def optimal_error_rate(separation: float) -> float:
    """Bayes error of two equal-prior isotropic Gaussians ``separation`` sigmas apart."""
    if separation < 0:
        raise ValueError("separation must be >= 0")
    return float(0.5 * erfc(separation / math.sqrt(8.0)))


def estimate_error_rate(labels_pred, labels_true) -> ErrorEstimate:
    a = np.asarray(labels_pred).reshape(-1)
    b = np.asarray(labels_true).reshape(-1)
    if a.size != b.size:
        raise ValueError("label vectors differ in length")
    if a.size == 0:
        raise EmptyInput("no labels")
    p = float(np.mean(a != b))
    return ErrorEstimate(p, math.sqrt(p * (1 - p) / a.size), int(a.size))


def aggregate(estimates: Sequence[ErrorEstimate]) -> ErrorEstimate:
    """Pool trials: sample-weighted rate, binomial stderr, and the spread across trials."""
    est = list(estimates)
    if not est:
        raise EmptyInput("no estimates to aggregate")
    n = sum(e.n_samples for e in est)
    p = sum(e.p_err * e.n_samples for e in est) / n
    rates = np.array([e.p_err for e in est])
    sd = float(rates.std(ddof=1)) if len(est) > 1 else 0.0
    return ErrorEstimate(float(p), math.sqrt(p * (1 - p) / n), n, sum(e.n_trials for e in est), sd)
