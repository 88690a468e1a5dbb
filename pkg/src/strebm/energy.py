"""Source-wise structural energies and their analytic gradients.

Each latent column ``s_j`` carries its own energy ``E_j(s_j; eta_j)``. The
shipped family is the GP-induced energy

    E_j = 1/2 s_j^T K_j^{-1} s_j + 1/2 log|K_j|,   ell_j = exp(eta_j),

with ``K_j`` the RBF covariance over the normalized index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernel_gp
from .errors import InvalidArgumentError, NumericalInstabilityError
from .kernel_gp import CholFactor, KernelSpec


@dataclass(frozen=True)
class SourceEnergyReport:
    per_source_energy: np.ndarray
    total: float
    per_source_quad: np.ndarray
    per_source_logdet: np.ndarray


def _check_vector(s, factor: CholFactor) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (factor.size,):
        raise InvalidArgumentError(
            f"latent column of length {factor.size} expected, got shape {s.shape}"
        )
    return s


def gp_energy(s, factor: CholFactor) -> float:
    """``1/2 s^T K^{-1} s + sum(log diag L)``."""
    s = _check_vector(s, factor)
    _, quad = kernel_gp.solve_and_quadform(factor, s)
    return 0.5 * quad + float(np.sum(np.log(factor.diagonal)))


def gp_energy_grad_latent(factor: CholFactor, s) -> np.ndarray:
    """Gradient of :func:`gp_energy` in ``s``, i.e. ``K^{-1} s``."""
    s = _check_vector(s, factor)
    alpha, _ = kernel_gp.solve_and_quadform(factor, s)
    return alpha


def _logscale_grad(ell, dK, alpha, factor) -> float:
    trace = kernel_gp.trace_solve(factor, dK)
    data_fit = float(alpha @ (dK @ alpha))
    grad = ell * 0.5 * (trace - data_fit)
    if not math.isfinite(grad):
        raise NumericalInstabilityError("non-finite log-length-scale gradient")
    return grad


def gp_energy_grad_logscale(grid, spec: KernelSpec, s, factor: CholFactor) -> float:
    """Derivative of the GP energy with respect to ``eta = log(ell)``.

    ``dE/deta = ell * (1/2 tr(K^{-1} dK/dell) - 1/2 alpha^T dK/dell alpha)``
    with ``alpha = K^{-1} s``. ``factor`` must factor the covariance built
    from ``grid`` and ``spec``.
    """
    s = _check_vector(s, factor)
    if np.asarray(grid).shape != (factor.size,):
        raise InvalidArgumentError("grid length does not match the factor")
    dK = kernel_gp.kernel_lengthscale_derivative(grid, spec)
    alpha, _ = kernel_gp.solve_and_quadform(factor, s)
    return _logscale_grad(spec.length_scale, dK, alpha, factor)


def structural_energy(S, factors: Sequence[CholFactor]) -> SourceEnergyReport:
    """Apply :func:`gp_energy` column by column and sum."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] != len(factors):
        raise InvalidArgumentError(
            f"latent matrix with {len(factors)} columns expected, got shape {S.shape}"
        )
    quads = np.empty(len(factors))
    logdets = np.empty(len(factors))
    for j, factor in enumerate(factors):
        s = _check_vector(S[:, j], factor)
        _, quads[j] = kernel_gp.solve_and_quadform(factor, s)
        logdets[j] = kernel_gp.log_determinant(factor)
    energies = 0.5 * quads + 0.5 * logdets
    return SourceEnergyReport(
        per_source_energy=energies,
        total=float(sum(energies.tolist())),
        per_source_quad=quads,
        per_source_logdet=logdets,
    )


class SourceEnergy:
    """Interface for a per-source structural energy.

    Subclasses evaluate the energy of one latent column together with its
    gradients with respect to the column and the scalar structural parameter.
    """

    def evaluate(self, s: np.ndarray, eta: float) -> tuple[float, np.ndarray, float]:
        raise NotImplementedError


class GPEnergy(SourceEnergy):
    """GP-induced energy on a fixed index grid.

    Squared distances are cached once; the covariance is rebuilt and
    refactored on every call since ``eta`` changes every epoch.
    """

    def __init__(self, grid, amplitude=kernel_gp.DEFAULT_AMPLITUDE, jitter=kernel_gp.DEFAULT_JITTER):
        self.grid = kernel_gp._check_grid(grid)
        self.amplitude = float(amplitude)
        self.jitter = float(jitter)
        self._sqdist = kernel_gp.squared_distances(self.grid)

    def spec(self, eta: float) -> KernelSpec:
        return KernelSpec(math.exp(eta), self.amplitude, self.jitter)

    def factor(self, eta: float) -> CholFactor:
        return kernel_gp.cholesky(kernel_gp.rbf_from_sqdist(self._sqdist, self.spec(eta)))

    def evaluate(self, s, eta):
        ell = math.exp(eta)
        KernelSpec(ell, self.amplitude, self.jitter)
        n = self._sqdist.shape[0]
        s = np.asarray(s, dtype=float)
        if s.shape != (n,):
            raise InvalidArgumentError(f"latent column of length {n} expected, got shape {s.shape}")
        # one exp feeds K and G = ell^3 dK/dell; sqdist is exactly symmetric so both are too
        K = kernel_gp.rbf_exp(self._sqdist, ell)
        if self.amplitude != 1.0:
            K *= self.amplitude
        G = K * self._sqdist
        K.flat[:: n + 1] += self.jitter
        factor = kernel_gp.cholesky_symmetric_inplace(K)
        alpha, quad = kernel_gp.solve_and_quadform(factor, s)
        energy = 0.5 * quad + float(np.sum(np.log(factor.diagonal)))
        # the factor is not needed after this, so potri may overwrite it
        trace = kernel_gp.trace_solve(factor, G, overwrite=True)
        grad_eta = 0.5 * (trace - float(alpha @ (G @ alpha))) / (ell * ell)
        if not math.isfinite(grad_eta):
            raise NumericalInstabilityError("non-finite log-length-scale gradient")
        return energy, alpha, grad_eta
