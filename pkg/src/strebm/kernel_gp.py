"""RBF covariance over a one-dimensional index and its Cholesky algebra.

All routines are pure functions of their inputs. Covariances are dense
``T x T`` arrays; factorizations are wrapped in :class:`CholFactor` so that
downstream code never has to re-check triangularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import InvalidArgumentError, NotPositiveDefiniteError

DEFAULT_AMPLITUDE = 1.0
DEFAULT_JITTER = 1e-5


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of one source's RBF covariance.

    Attributes
    ----------
    length_scale : float
        Correlation length on the normalized index.
    amplitude : float
        Fixed signal variance ``sigma_f^2``.
    jitter : float
        Diagonal term keeping the matrix numerically positive definite.
    """

    length_scale: float
    amplitude: float = DEFAULT_AMPLITUDE
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        for name in ("length_scale", "amplitude", "jitter"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular Cholesky factor ``L`` with ``L @ L.T == K``."""

    lower: np.ndarray

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.lower)


def normalized_index(T: int) -> np.ndarray:
    """Uniform grid ``(i - 1) / (T - 1)`` on ``[0, 1]``; ``[0.]`` when ``T == 1``."""
    if int(T) != T or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if T == 1:
        return np.zeros(1)
    return np.arange(T, dtype=float) / (T - 1)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidArgumentError("index grid must be a non-empty vector")
    if not np.all(np.isfinite(grid)):
        raise InvalidArgumentError("index grid contains non-finite values")
    return grid


def squared_distances(grid) -> np.ndarray:
    """Pairwise squared index differences; exactly symmetric."""
    grid = _check_grid(grid)
    diff = grid[:, None] - grid[None, :]
    return diff * diff


def _mirror_lower(M: np.ndarray) -> np.ndarray:
    return np.tril(M) + np.tril(M, -1).T


# exp(-700) ~ 1e-304; anything smaller would be subnormal, which is
# numerically irrelevant next to the jitter but very slow in BLAS
_EXP_FLOOR = -700.0


def rbf_exp(sqdist: np.ndarray, length_scale: float) -> np.ndarray:
    """``exp(-sqdist / (2 ell^2))`` with would-be subnormals flushed to zero."""
    arg = np.multiply(sqdist, -0.5 / (length_scale * length_scale))
    np.putmask(arg, arg < _EXP_FLOOR, -np.inf)
    return np.exp(arg, out=arg)


def rbf_from_sqdist(sqdist: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Covariance from precomputed squared distances."""
    K = spec.amplitude * rbf_exp(sqdist, spec.length_scale)
    K = _mirror_lower(K)
    K[np.diag_indices_from(K)] += spec.jitter
    return K


def build_rbf_covariance(grid, spec: KernelSpec) -> np.ndarray:
    """Dense RBF covariance ``amp * exp(-(u_i - u_r)^2 / (2 ell^2)) + jitter * I``."""
    return rbf_from_sqdist(squared_distances(grid), spec)


def lengthscale_derivative_from_sqdist(sqdist: np.ndarray, spec: KernelSpec) -> np.ndarray:
    ell = spec.length_scale
    dK = spec.amplitude * rbf_exp(sqdist, ell) * (sqdist / ell**3)
    return _mirror_lower(dK)


def kernel_lengthscale_derivative(grid, spec: KernelSpec) -> np.ndarray:
    """Entrywise derivative of the covariance with respect to the length-scale.

    The jitter does not depend on the length-scale, so the diagonal is zero.
    """
    return lengthscale_derivative_from_sqdist(squared_distances(grid), spec)


def cholesky(K) -> CholFactor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If a non-positive pivot is met.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InvalidArgumentError("matrix contains non-finite entries")
    try:
        L = linalg.cholesky(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return CholFactor(L)


def cholesky_symmetric_inplace(K) -> CholFactor:
    """Factor a C-ordered, exactly symmetric ``K`` in its own memory.

    ``K.T`` is then a Fortran-ordered view of the same matrix, which LAPACK
    can overwrite without a copy. ``K`` is destroyed.
    """
    L, info = lapack.dpotrf(K.T, lower=1, clean=1, overwrite_a=1)
    if info > 0:
        raise NotPositiveDefiniteError(f"leading minor of order {info} is not positive definite")
    if info < 0:
        raise InvalidArgumentError(f"potrf rejected argument {-info}")
    return CholFactor(L)


def log_determinant(factor: CholFactor) -> float:
    """``log|K| = 2 * sum(log diag(L))``."""
    return 2.0 * float(np.sum(np.log(factor.diagonal)))


def solve_and_quadform(factor: CholFactor, s) -> tuple[np.ndarray, float]:
    """Return ``alpha = K^{-1} s`` and ``s^T alpha`` via two triangular solves."""
    s = np.asarray(s, dtype=float)
    if s.shape != (factor.size,):
        raise InvalidArgumentError(
            f"vector of length {factor.size} expected, got shape {s.shape}"
        )
    z = linalg.solve_triangular(factor.lower, s, lower=True, check_finite=False)
    alpha = linalg.solve_triangular(factor.lower, z, lower=True, trans="T", check_finite=False)
    # s^T K^{-1} s = |L^{-1} s|^2 is non-negative by construction
    return alpha, float(z @ z)


def inverse_from_factor(factor: CholFactor) -> np.ndarray:
    """``K^{-1}`` assembled from the Cholesky factor (LAPACK ``potri``).

    Only used for trace terms ``tr(K^{-1} M)``; linear systems go through
    :func:`solve_and_quadform`.
    """
    return _mirror_lower(_potri_lower(factor))


def _potri_lower(factor, overwrite=False):
    # lower triangle of K^{-1}; the strict upper part stays zero because L's is
    inv, info = lapack.dpotri(factor.lower, lower=1, overwrite_c=int(overwrite))
    if info != 0:
        raise NotPositiveDefiniteError(f"potri failed with info={info}")
    return inv


def trace_solve(factor: CholFactor, M, overwrite=False) -> float:
    """``tr(K^{-1} M)`` for symmetric ``M``.

    With ``overwrite=True`` the factor's storage is reused for the inverse
    and the factor must not be used afterwards.
    """
    M = np.asarray(M, dtype=float)
    low = _potri_lower(factor, overwrite)
    # potri returns Fortran order; M is symmetric so sum(low * M) == sum(low.T * M)
    flat = low.T.ravel() if low.flags.f_contiguous else low.ravel()
    # the lower triangle counts each off-diagonal pair once
    half = float(flat @ M.ravel())
    return 2.0 * half - float(np.diagonal(low) @ np.diagonal(M))
