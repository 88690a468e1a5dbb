"""Synthetic multichannel separation benchmark.

Three fixed source waveforms on the normalized index are mixed either by a
well-conditioned matrix or by a small tanh MLP, then standardized per
channel. Signal matrices are exchanged as CSV files with a ``t`` column
followed by ``ch_1 .. ch_k``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import kernel_gp
from ._io import atomic_write_text
from .errors import InvalidArgumentError
from .observation import MLP, GeneratorParams, generator_forward

N_SOURCES = 3
DEFAULT_CHANNELS = 3
MIXER_HIDDEN = 8
MIXER_CONDITION = 2.0


@dataclass
class Experiment:
    sources: np.ndarray
    mixing_kind: str
    mixing: object  # ndarray for linear, GeneratorParams for nonlinear
    noise_std: float
    Y: np.ndarray
    grid: np.ndarray
    seed: int

    def mixing_description(self) -> dict:
        if self.mixing_kind == "linear":
            return {"kind": "linear", "A": self.mixing.tolist()}
        return {
            "kind": "nonlinear",
            "activation": self.mixing.activation,
            "weights": {k: v.tolist() for k, v in self.mixing.weights.items()},
        }


def standardize(Y) -> np.ndarray:
    """Per-channel zero mean and unit population variance."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 2:
        raise InvalidArgumentError("standardize needs a 2-D array with at least two rows")
    mean = Y.mean(axis=0)
    X = Y - mean
    std = np.sqrt(np.mean(X * X, axis=0))
    if np.any(std <= 1e-12 * np.maximum(1.0, np.abs(mean))):
        raise InvalidArgumentError("cannot standardize a constant channel")
    return X / std


def generate_sources(T: int, seed: int = 0) -> np.ndarray:
    """Sine (3 cycles), smoothed square wave (5 cycles), sawtooth (2 cycles).

    The waveforms are fixed functions of the grid, so ``seed`` has no effect;
    it is accepted so every generator in this module shares one signature.
    """
    if T < 2:
        raise InvalidArgumentError("at least two samples are required")
    t = kernel_gp.normalized_index(T)
    sine = np.sin(2 * np.pi * 3 * t)
    window = max(3, int(round(0.02 * T)) | 1)
    square = uniform_filter1d(np.sign(np.sin(2 * np.pi * 5 * t)), window, mode="nearest")
    saw = 2.0 * np.mod(2.0 * t, 1.0) - 1.0
    return standardize(np.column_stack([sine, square, saw]))


def _orthogonal(rng, k):
    Q, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.sign(np.diag(R))


def default_mixing_matrix(m: int = DEFAULT_CHANNELS, n: int = N_SOURCES, seed: int = 0) -> np.ndarray:
    """Random rotations around fixed singular values, condition number 2 when square."""
    rng = np.random.default_rng([seed, 101])
    k = min(m, n)
    sv = np.linspace(MIXER_CONDITION, 1.0, k)
    U = _orthogonal(rng, m)[:, :k]
    V = _orthogonal(rng, n)[:, :k]
    return (U * sv) @ V.T


def default_mixing_mlp(m=DEFAULT_CHANNELS, n=N_SOURCES, hidden=MIXER_HIDDEN, seed=0) -> GeneratorParams:
    """Fixed tanh MLP with all entries in ``[-1, 1]`` and a mild nonlinearity.

    First-layer weights are scaled so unit-variance inputs stay mostly in the
    near-linear part of ``tanh``; biases are small.
    """
    rng = np.random.default_rng([seed, 202])

    def dense(fan_out, fan_in):
        return rng.uniform(-1.0, 1.0, (fan_out, fan_in)) / math.sqrt(fan_in)

    weights = {
        "W1": dense(hidden, n),
        "b1": rng.uniform(-0.1, 0.1, hidden),
        "W2": dense(hidden, hidden),
        "b2": rng.uniform(-0.1, 0.1, hidden),
        "W3": dense(m, hidden),
        "b3": np.zeros(m),
    }
    return GeneratorParams(MLP, weights)


def _noise(shape, noise_std, seed):
    if noise_std < 0 or not math.isfinite(noise_std):
        raise InvalidArgumentError(f"noise_std must be finite and >= 0, got {noise_std!r}")
    if noise_std == 0:
        return np.zeros(shape)
    return noise_std * np.random.default_rng([seed, 303]).standard_normal(shape)


def mix_linear(S, A, noise_std=0.0, seed=0) -> np.ndarray:
    """``S @ A.T`` plus optional seeded Gaussian noise."""
    S = np.asarray(S, dtype=float)
    A = np.asarray(A, dtype=float)
    if S.ndim != 2 or A.ndim != 2 or A.shape[1] != S.shape[1]:
        raise InvalidArgumentError(f"cannot mix sources {S.shape} with matrix {A.shape}")
    Y = S @ A.T
    return Y + _noise(Y.shape, noise_std, seed)


def mix_nonlinear(S, mlp: GeneratorParams, noise_std=0.0, seed=0) -> np.ndarray:
    Y = generator_forward(mlp, S)
    return Y + _noise(Y.shape, noise_std, seed)


def make_experiment(T=1000, mixing="linear", noise_std=0.0, seed=0, m=DEFAULT_CHANNELS) -> Experiment:
    sources = generate_sources(T, seed)
    if mixing == "linear":
        mixer = default_mixing_matrix(m, sources.shape[1], seed)
        raw = mix_linear(sources, mixer, noise_std, seed)
    elif mixing == "nonlinear":
        mixer = default_mixing_mlp(m, sources.shape[1], seed=seed)
        raw = mix_nonlinear(sources, mixer, noise_std, seed)
    else:
        raise InvalidArgumentError(f"unknown mixing {mixing!r}")
    return Experiment(
        sources=sources,
        mixing_kind=mixing,
        mixing=mixer,
        noise_std=float(noise_std),
        Y=standardize(raw),
        grid=kernel_gp.normalized_index(T),
        seed=int(seed),
    )


def format_signals_csv(X, grid=None) -> str:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidArgumentError("signal matrix must be 2-D")
    if grid is None:
        grid = kernel_gp.normalized_index(X.shape[0])
    header = ",".join(["t"] + [f"ch_{k + 1}" for k in range(X.shape[1])])
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack([grid, X]), fmt="%.17g", delimiter=",", header=header, comments="")
    return buf.getvalue()


def write_signals_csv(path, X, grid=None) -> None:
    atomic_write_text(path, format_signals_csv(X, grid))


def read_signals_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(grid, X)`` from a signal CSV file."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t" or any(
            h != f"ch_{k + 1}" for k, h in enumerate(header[1:])
        ):
            raise InvalidArgumentError(f"{path}: unexpected CSV header {header}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise InvalidArgumentError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    return data[:, 0].copy(), data[:, 1:].copy()
