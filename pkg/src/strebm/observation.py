"""Row-wise observation maps from latent rows to observed channels.

Two generator families are supported:

* ``linear``: ``y = W s + b`` (``b`` absent when ``use_bias`` is false)
* ``mlp``: ``y = W3 tanh(W2 tanh(W1 s + b1) + b2) + b3``

Weights follow the ``(out, in)`` convention, so a batch ``S`` of shape
``(T, n)`` maps to ``S @ W.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericalInstabilityError

LINEAR = "linear"
MLP = "mlp"
KINDS = (LINEAR, MLP)
DEFAULT_HIDDEN = 32


@dataclass
class GeneratorParams:
    """Parameters of the observation map.

    ``weights`` maps parameter names to arrays: ``W`` (and optionally ``b``)
    for the linear map, ``W1, b1, W2, b2, W3, b3`` for the MLP.
    """

    kind: str
    weights: dict = field(default_factory=dict)
    use_bias: bool = True
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown generator kind {self.kind!r}")
        if self.activation != "tanh":
            raise InvalidArgumentError(f"unsupported activation {self.activation!r}")
        expected = _param_names(self.kind, self.use_bias)
        if set(self.weights) != set(expected):
            raise InvalidArgumentError(
                f"{self.kind} generator expects parameters {expected}, got {sorted(self.weights)}"
            )
        self.weights = {k: np.asarray(self.weights[k], dtype=float) for k in expected}

    @property
    def names(self) -> tuple:
        return _param_names(self.kind, self.use_bias)

    @property
    def n_inputs(self) -> int:
        return self.weights["W" if self.kind == LINEAR else "W1"].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights["W" if self.kind == LINEAR else "W3"].shape[0]

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(
            self.kind, {k: v.copy() for k, v in self.weights.items()}, self.use_bias, self.activation
        )

    def zeros_like(self) -> "GeneratorParams":
        return GeneratorParams(
            self.kind,
            {k: np.zeros_like(v) for k, v in self.weights.items()},
            self.use_bias,
            self.activation,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.weights.values())


def _param_names(kind, use_bias):
    if kind == LINEAR:
        return ("W", "b") if use_bias else ("W",)
    return ("W1", "b1", "W2", "b2", "W3", "b3")


def init_generator(kind, n, m, hidden=DEFAULT_HIDDEN, use_bias=True, rng=None) -> GeneratorParams:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(rng)

    def dense(fan_out, fan_in):
        return rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)

    if kind == LINEAR:
        weights = {"W": dense(m, n)}
        if use_bias:
            weights["b"] = np.zeros(m)
        return GeneratorParams(LINEAR, weights, use_bias=use_bias)
    if kind == MLP:
        weights = {
            "W1": dense(hidden, n),
            "b1": np.zeros(hidden),
            "W2": dense(hidden, hidden),
            "b2": np.zeros(hidden),
            "W3": dense(m, hidden),
            "b3": np.zeros(m),
        }
        return GeneratorParams(MLP, weights)
    raise InvalidArgumentError(f"unknown generator kind {kind!r}")


def _check_latent(params, S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] != params.n_inputs:
        raise InvalidArgumentError(
            f"latent matrix with {params.n_inputs} columns expected, got shape {S.shape}"
        )
    return S


def _forward(params, S):
    w = params.weights
    if params.kind == LINEAR:
        Yhat = S @ w["W"].T
        if params.use_bias:
            Yhat = Yhat + w["b"]
        return Yhat, None
    H1 = np.tanh(S @ w["W1"].T + w["b1"])
    H2 = np.tanh(H1 @ w["W2"].T + w["b2"])
    return H2 @ w["W3"].T + w["b3"], (H1, H2)


def generator_forward(params: GeneratorParams, S) -> np.ndarray:
    """Apply the observation map to every row of ``S``."""
    S = _check_latent(params, S)
    return _forward(params, S)[0]


def observation_loss(Y, Yhat, nu_y) -> float:
    """Gaussian reconstruction loss ``|Y - Yhat|_F^2 / (2 nu_y)``."""
    Y = np.asarray(Y, dtype=float)
    Yhat = np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape:
        raise InvalidArgumentError(f"shape mismatch {Y.shape} vs {Yhat.shape}")
    if not nu_y > 0:
        raise InvalidArgumentError(f"nu_y must be > 0, got {nu_y!r}")
    R = Y - Yhat
    return float(np.sum(R * R)) / (2.0 * nu_y)


def generator_backward(params: GeneratorParams, S, Y, nu_y):
    """Reverse-mode pass through the observation loss.

    Returns
    -------
    grads : GeneratorParams
        Gradient for every generator parameter, same layout as ``params``.
    grad_S : ndarray, shape (T, n)
    loss : float
        The observation loss of the same forward pass.
    """
    S = _check_latent(params, S)
    Y = np.asarray(Y, dtype=float)
    Yhat, cache = _forward(params, S)
    loss = observation_loss(Y, Yhat, nu_y)
    G = (Yhat - Y) / nu_y
    w = params.weights
    g = {}
    if params.kind == LINEAR:
        g["W"] = G.T @ S
        if params.use_bias:
            g["b"] = G.sum(axis=0)
        grad_S = G @ w["W"]
    else:
        H1, H2 = cache
        g["W3"] = G.T @ H2
        g["b3"] = G.sum(axis=0)
        D2 = (G @ w["W3"]) * (1.0 - H2 * H2)
        g["W2"] = D2.T @ H1
        g["b2"] = D2.sum(axis=0)
        D1 = (D2 @ w["W2"]) * (1.0 - H1 * H1)
        g["W1"] = D1.T @ S
        g["b1"] = D1.sum(axis=0)
        grad_S = D1 @ w["W1"]
    grads = GeneratorParams(params.kind, g, params.use_bias, params.activation)
    if not (np.isfinite(loss) and grads.is_finite() and np.all(np.isfinite(grad_S))):
        raise NumericalInstabilityError("non-finite value in observation backward pass")
    return grads, grad_S, loss
