"""Joint optimization of latent trajectories, observation map and length-scales.

One epoch evaluates the full-batch objective

    L = L_obs + lambda_gp * sum_j E_j + lambda_sep * L_sep

with analytic gradients for the latent matrix ``S``, every generator
parameter and the log-length-scales ``eta``, applies one Adam step to all
groups and clamps ``exp(eta)`` into ``[ell_min, ell_max]``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _io, evaluation, kernel_gp, observation, separation
from .energy import GPEnergy
from .errors import InvalidArgumentError, StrEBMError, TrainingDivergedError
from .observation import GeneratorParams

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "strebm-checkpoint/1"


def default_eta_init(n: int) -> list:
    """Log of length-scales spread geometrically over ``[0.05, 0.5]``."""
    if n == 1:
        return [math.log(0.05)]
    return [math.log(v) for v in np.geomspace(0.05, 0.5, n)]


@dataclass
class TrainConfig:
    n_sources: int = 3
    nu_y: float = 0.1
    lambda_gp: float = 1e-3
    lambda_sep: float = 1.0
    sigma_init: float = 0.3
    sigma_f_sq: float = kernel_gp.DEFAULT_AMPLITUDE
    jitter: float = kernel_gp.DEFAULT_JITTER
    eps_s: float = separation.DEFAULT_EPS_S
    learning_rate: float = 1e-2
    epochs: int = 4000
    seed: int = 0
    ell_min: float = 1e-3  # sawtooth edges settle near 4e-3 at T=400
    ell_max: float = 2.0
    eta_init: Optional[list] = None
    generator: str = observation.LINEAR
    hidden: int = observation.DEFAULT_HIDDEN
    use_bias: bool = False
    monitor_every: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.eta_init is None:
            self.eta_init = default_eta_init(self.n_sources)
        self.eta_init = [float(v) for v in self.eta_init]
        self.validate()

    def validate(self):
        positive = ("nu_y", "sigma_f_sq", "jitter", "eps_s", "learning_rate", "ell_min", "ell_max")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be finite and > 0, got {value!r}")
        # sigma_init = 0 and learning_rate = 0 are allowed for degenerate checks
        for name in ("lambda_gp", "lambda_sep", "sigma_init"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {value!r}")
        if self.n_sources < 1 or self.epochs < 0 or self.monitor_every < 1 or self.hidden < 1:
            raise InvalidArgumentError("n_sources, hidden and monitor_every must be >= 1, epochs >= 0")
        if not self.ell_min < self.ell_max:
            raise InvalidArgumentError("ell_min must be < ell_max")
        if len(self.eta_init) != self.n_sources:
            raise InvalidArgumentError("eta_init needs one entry per source")
        if self.generator not in observation.KINDS:
            raise InvalidArgumentError(f"unknown generator {self.generator!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise InvalidArgumentError("invalid Adam hyperparameters")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_obs: float
    loss_gp: float
    loss_sep: float
    length_scales: list
    per_source_gp_energy: list
    monitor_corr: Optional[float] = None
    monitor_per_pair: Optional[list] = None

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_total": self.loss_total,
            "loss_obs": self.loss_obs,
            "loss_gp": self.loss_gp,
            "loss_sep": self.loss_sep,
            "ell": self.length_scales,
            "gp_energy": self.per_source_gp_energy,
            "monitor_corr": self.monitor_corr,
            "monitor_per_pair": self.monitor_per_pair,
        }


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    S: np.ndarray
    generator: GeneratorParams
    eta: np.ndarray
    optimizer: Adam
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def length_scales(self) -> np.ndarray:
        return np.exp(self.eta)

    def parameters(self) -> dict:
        """Named views of every optimized array (mutating them updates the state)."""
        params = {"S": self.S, "eta": self.eta}
        for name, value in self.generator.weights.items():
            params["gen." + name] = value
        return params


def init_latents(T, n, sigma_init, seed) -> np.ndarray:
    """``sigma_init`` times iid standard normal draws from ``default_rng(seed)``."""
    if T < 1 or n < 1:
        raise InvalidArgumentError("T and n must be >= 1")
    return sigma_init * np.random.default_rng(seed).standard_normal((T, n))


def init_state(T, m, config: TrainConfig) -> TrainState:
    S = init_latents(T, config.n_sources, config.sigma_init, config.seed)
    gen = observation.init_generator(
        config.generator,
        config.n_sources,
        m,
        hidden=config.hidden,
        use_bias=config.use_bias,
        rng=np.random.default_rng([config.seed, 1]),
    )
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    return TrainState(S=S, generator=gen, eta=np.array(config.eta_init, dtype=float), optimizer=opt)


def clamp_eta(eta, config: TrainConfig) -> np.ndarray:
    return np.clip(eta, math.log(config.ell_min), math.log(config.ell_max))


class Objective:
    """Total loss and its joint gradient for a fixed observation matrix."""

    def __init__(self, Y, config: TrainConfig, grid=None):
        self.Y = np.asarray(Y, dtype=float)
        self.config = config
        T = self.Y.shape[0]
        self.grid = kernel_gp.normalized_index(T) if grid is None else np.asarray(grid, dtype=float)
        self.energy = GPEnergy(self.grid, config.sigma_f_sq, config.jitter)

    def evaluate(self, S, generator, eta, need_grad=True):
        """Return ``(loss, parts, grads)``.

        ``parts`` holds ``obs``, ``gp``, ``sep`` and the per-source energies;
        ``grads`` is keyed like :meth:`TrainState.parameters`.
        """
        cfg = self.config
        gen_grads, grad_S_obs, loss_obs = observation.generator_backward(generator, S, self.Y, cfg.nu_y)

        n = S.shape[1]
        energies = np.empty(n)
        grad_S_gp = np.empty_like(S)
        grad_eta = np.empty(n)
        for j in range(n):
            energies[j], grad_S_gp[:, j], grad_eta[j] = self.energy.evaluate(S[:, j], float(eta[j]))
        loss_gp = float(sum(energies.tolist()))

        if cfg.lambda_sep > 0 and S.shape[0] >= 2:
            loss_sep, grad_S_sep = separation.separation_loss_and_grad(S, cfg.eps_s)
        elif S.shape[0] >= 2:
            loss_sep = separation.separation_loss(
                separation.correlation_matrix(separation.normalize_columns(S, cfg.eps_s))
            )
            grad_S_sep = None
        else:
            loss_sep, grad_S_sep = 0.0, None

        loss = loss_obs + cfg.lambda_gp * loss_gp + cfg.lambda_sep * loss_sep
        parts = {"obs": loss_obs, "gp": loss_gp, "sep": loss_sep, "energies": energies}
        if not need_grad:
            return loss, parts, None

        grad_S = grad_S_obs + cfg.lambda_gp * grad_S_gp
        if grad_S_sep is not None:
            grad_S = grad_S + cfg.lambda_sep * grad_S_sep
        grads = {"S": grad_S, "eta": cfg.lambda_gp * grad_eta}
        for name, value in gen_grads.weights.items():
            grads["gen." + name] = value
        return loss, parts, grads


def total_loss(state: TrainState, Y, config: TrainConfig):
    """Objective value and its ``obs`` / ``gp`` / ``sep`` parts at ``state``."""
    loss, parts, _ = Objective(Y, config).evaluate(state.S, state.generator, state.eta, need_grad=False)
    return loss, {k: parts[k] for k in ("obs", "gp", "sep")}


def _all_finite(loss, grads) -> bool:
    return math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())


def train_step(state: TrainState, Y, config: TrainConfig, objective=None, true_sources=None) -> TrainState:
    """One full-batch evaluation and one Adam update of every group, in place."""
    objective = objective or Objective(Y, config)
    epoch = state.epoch + 1
    try:
        loss, parts, grads = objective.evaluate(state.S, state.generator, state.eta)
    except StrEBMError as exc:
        raise TrainingDivergedError(epoch, str(exc), state.history, state) from exc
    if not _all_finite(loss, grads):
        raise TrainingDivergedError(epoch, "non-finite loss or gradient", state.history, state)

    record = EpochRecord(
        epoch=epoch,
        loss_total=loss,
        loss_obs=parts["obs"],
        loss_gp=parts["gp"],
        loss_sep=parts["sep"],
        length_scales=np.exp(state.eta).tolist(),
        per_source_gp_energy=parts["energies"].tolist(),
    )
    if true_sources is not None and (epoch - 1) % config.monitor_every == 0:
        report = evaluation.permutation_match(state.S, true_sources)
        record.monitor_corr = report.mean_abs_corr
        record.monitor_per_pair = report.per_pair_abs_corr.tolist()

    state.optimizer.lr = config.learning_rate
    state.optimizer.step(state.parameters(), grads)
    state.eta[:] = clamp_eta(state.eta, config)
    state.epoch = epoch
    state.history.append(record)
    return state


def train(
    Y,
    config: TrainConfig,
    true_sources=None,
    state: Optional[TrainState] = None,
    callback: Optional[Callable[[TrainState, EpochRecord], None]] = None,
):
    """Run ``config.epochs`` steps; returns ``(state, history)``.

    ``true_sources`` only enables the correlation monitor and never touches
    a gradient.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise InvalidArgumentError("observations must be a 2-D array")
    if true_sources is not None:
        true_sources = np.asarray(true_sources, dtype=float)
        if true_sources.shape != (Y.shape[0], config.n_sources):
            raise InvalidArgumentError(
                f"true sources of shape {(Y.shape[0], config.n_sources)} expected, "
                f"got {true_sources.shape}"
            )
    if state is None:
        state = init_state(Y.shape[0], Y.shape[1], config)
    objective = Objective(Y, config)
    for _ in range(config.epochs):
        train_step(state, Y, config, objective, true_sources)
        if callback is not None:
            callback(state, state.history[-1])
    return state, state.history


def epochs_to_reach(history, threshold) -> Optional[int]:
    """First epoch whose monitored correlation reaches ``threshold``."""
    for rec in history:
        if rec.monitor_corr is not None and rec.monitor_corr >= threshold:
            return rec.epoch
    return None


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def checkpoint_dict(state: TrainState, config: TrainConfig) -> dict:
    opt = state.optimizer
    return {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "epoch": state.epoch,
        "S": _arr(state.S),
        "eta": _arr(state.eta),
        "generator": {
            "kind": state.generator.kind,
            "use_bias": state.generator.use_bias,
            "activation": state.generator.activation,
            "weights": {k: _arr(v) for k, v in state.generator.weights.items()},
        },
        "optimizer": {
            "t": opt.t,
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "m": {k: _arr(v) for k, v in opt.m.items()},
            "v": {k: _arr(v) for k, v in opt.v.items()},
        },
    }


def state_from_checkpoint(d: dict) -> tuple[TrainState, TrainConfig]:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"unsupported checkpoint format {d.get('format')!r}")
    config = TrainConfig.from_dict(d["config"])
    g = d["generator"]
    gen = GeneratorParams(g["kind"], g["weights"], g["use_bias"], g["activation"])
    o = d["optimizer"]
    opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"])
    opt.t = o["t"]
    opt.m = {k: np.array(v, dtype=float) for k, v in o["m"].items()}
    opt.v = {k: np.array(v, dtype=float) for k, v in o["v"].items()}
    state = TrainState(
        S=np.array(d["S"], dtype=float),
        generator=gen,
        eta=np.array(d["eta"], dtype=float),
        optimizer=opt,
        epoch=d["epoch"],
    )
    return state, config


def save_checkpoint(path, state: TrainState, config: TrainConfig) -> None:
    _io.write_json(path, checkpoint_dict(state, config))


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    return state_from_checkpoint(_io.read_json(path))
