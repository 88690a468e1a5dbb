"""Decorrelation penalty on the latent columns.

The penalty is ``|C - I|_F^2`` where ``C`` is the correlation matrix of the
centered, variance-normalized latent columns. The normalization uses a
softened variance ``var + eps_s`` so constant columns stay finite.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, NumericalInstabilityError

DEFAULT_EPS_S = 1e-8


def _check_latent(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2:
        raise InvalidArgumentError(f"latent matrix must be 2-D, got shape {S.shape}")
    if S.shape[0] < 2:
        raise InvalidArgumentError("at least two samples are needed to normalize columns")
    return S


def normalize_columns(S, eps_s=DEFAULT_EPS_S) -> np.ndarray:
    S = _check_latent(S)
    X = S - S.mean(axis=0)
    scale = np.sqrt(np.mean(X * X, axis=0) + eps_s)
    return X / scale


def correlation_matrix(S_tilde) -> np.ndarray:
    """``S_tilde^T S_tilde / T``, symmetrized against round-off."""
    S_tilde = np.asarray(S_tilde, dtype=float)
    if S_tilde.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-D matrix, got shape {S_tilde.shape}")
    C = S_tilde.T @ S_tilde / S_tilde.shape[0]
    return 0.5 * (C + C.T)


def separation_loss(C) -> float:
    C = np.asarray(C, dtype=float)
    D = C - np.eye(C.shape[0])
    return float(np.sum(D * D))


def separation_loss_and_grad(S, eps_s=DEFAULT_EPS_S) -> tuple[float, np.ndarray]:
    """Penalty value and its gradient with respect to the raw latent matrix.

    The column means and softened variances are differentiated as functions
    of ``S`` (full chain rule through the normalization).
    """
    S = _check_latent(S)
    T = S.shape[0]
    X = S - S.mean(axis=0)
    d = np.sqrt(np.mean(X * X, axis=0) + eps_s)
    St = X / d
    C = correlation_matrix(St)
    loss = separation_loss(C)

    # dL/dC = 2 (C - I); C = St^T St / T  =>  dL/dSt = (4 / T) St (C - I)
    Z = (4.0 / T) * St @ (C - np.eye(C.shape[0]))
    # St = X / d, d = sqrt(|X|^2 / T + eps_s)
    proj = np.sum(Z * X, axis=0)
    dX = Z / d - X * (proj / (T * d**3))
    grad = dX - dX.mean(axis=0)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalInstabilityError("non-finite separation gradient")
    return loss, grad


def separation_grad(S, eps_s=DEFAULT_EPS_S) -> np.ndarray:
    return separation_loss_and_grad(S, eps_s)[1]
