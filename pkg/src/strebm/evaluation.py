"""Permutation-matched absolute correlation between estimated and true sources.

This is a monitoring diagnostic only; nothing here feeds a training gradient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedCorrelationError, UnsupportedSizeError

MAX_SOURCES = 8


@dataclass(frozen=True)
class MatchReport:
    """Result of :func:`permutation_match`.

    ``permutation[i]`` is the true-source column matched to estimated
    column ``i``.
    """

    permutation: tuple
    per_pair_abs_corr: np.ndarray
    mean_abs_corr: float

    def to_dict(self) -> dict:
        return {
            "permutation": [int(p) for p in self.permutation],
            "per_pair_abs_corr": [float(c) for c in self.per_pair_abs_corr],
            "mean_abs_corr": float(self.mean_abs_corr),
        }


def _centered_unit(X):
    X = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(X * X, axis=0))
    if np.any(norms == 0.0):
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return X / norms


def pearson_abs_corr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape or a.size < 2:
        raise InvalidArgumentError("two vectors of equal length >= 2 are required")
    A = _centered_unit(np.column_stack([a, b]))
    return float(min(1.0, abs(A[:, 0] @ A[:, 1])))


def abs_corr_matrix(S_hat, S_true) -> np.ndarray:
    """Entry ``(i, k)`` is ``|corr(S_hat[:, i], S_true[:, k])|``."""
    S_hat = np.asarray(S_hat, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    if S_hat.ndim != 2 or S_hat.shape != S_true.shape:
        raise InvalidArgumentError(f"shape mismatch {S_hat.shape} vs {S_true.shape}")
    if S_hat.shape[0] < 2:
        raise InvalidArgumentError("at least two samples are required")
    return np.minimum(np.abs(_centered_unit(S_hat).T @ _centered_unit(S_true)), 1.0)


def permutation_match(S_hat, S_true) -> MatchReport:
    """Exhaustive search over all column assignments.

    Maximizes the summed absolute correlation; ties go to the
    lexicographically smallest permutation.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    n = S_hat.shape[1] if S_hat.ndim == 2 else 0
    if n > MAX_SOURCES:
        raise UnsupportedSizeError(f"exhaustive matching supports n <= {MAX_SOURCES}, got {n}")
    R = abs_corr_matrix(S_hat, S_true)
    rows = np.arange(n)
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(n)):
        score = float(R[rows, perm].sum())
        if score > best_score:
            best, best_score = perm, score
    per_pair = R[rows, best]
    return MatchReport(tuple(int(p) for p in best), per_pair, float(np.mean(per_pair)))
