"""Deep fully-connected autoencoder with batch normalization, trained by Adadelta.

Architecture for hidden widths ``[h1, ..., hk]``::

    input -> h1 -> ... -> hk -> ... -> h1 -> input

Every hidden layer is ``dense -> batch-norm -> relu``; the output layer is a
plain dense layer.  The loss is the mean squared reconstruction error over
all entries of a batch, and a sample's anomaly score is its own mean squared
reconstruction error in inference mode.

All arithmetic is float64.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Sequence

import numpy as np

from .errors import ConfigError, TrainingDiverged, UsageError

logger = logging.getLogger(__name__)

WIDE_WIDTHS = (512, 256, 128, 64)
DESK_WIDTHS = (64, 32, 16, 8)
CHECKPOINT_FORMAT = "compound-ueba-autoencoder"
CHECKPOINT_VERSION = 1


def resolve_widths(input_dim: int, widths="auto") -> tuple[int, ...]:
    """``"auto"`` picks the wide widths for inputs of 256+ dims, desk widths otherwise."""
    if widths == "auto":
        return WIDE_WIDTHS if input_dim >= 256 else DESK_WIDTHS
    if widths == "wide":
        return WIDE_WIDTHS
    if widths == "desk":
        return DESK_WIDTHS
    return tuple(int(w) for w in widths)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    rho: float = 0.95
    eps_opt: float = 1e-6
    bn_momentum: float = 0.99
    eps_bn: float = 1e-3
    shuffle_seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 with batch normalization")
        if not self.eps_opt > 0 or not self.eps_bn > 0:
            raise ConfigError("eps_opt and eps_bn must be > 0")
        if not 0 <= self.bn_momentum < 1:
            raise ConfigError("bn_momentum must lie in [0, 1)")


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.gamma is not None

    def params(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.has_bn:
            out += [self.gamma, self.beta]
        return out


@dataclass
class AutoencoderModel:
    input_dim: int
    hidden_widths: tuple[int, ...]
    seed: int
    layers: list[Layer]
    eps_bn: float = 1e-3
    # Adadelta accumulators, aligned with params(): (E[g^2], E[dx^2])
    opt_state: tuple[list[np.ndarray], list[np.ndarray]] | None = None
    train_config: TrainConfig | None = None

    @property
    def batch_norm(self) -> bool:
        return self.layers[0].has_bn if len(self.layers) > 1 else False

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [l.weight.shape for l in self.layers]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def copy(self) -> "AutoencoderModel":
        return copy.deepcopy(self)


def init_model(input_dim: int, hidden_widths: Sequence[int] | str = "auto", seed: int = 0, *,
               batch_norm: bool = True, eps_bn: float = 1e-3) -> AutoencoderModel:
    """Glorot-uniform weights, zero biases, unit gamma, zero beta."""
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    widths = resolve_widths(input_dim, hidden_widths)
    if any(w < 1 for w in widths):
        raise ConfigError("hidden widths must be positive")
    if any(a <= b for a, b in zip(widths, widths[1:])):
        raise ConfigError(f"encoder widths must be strictly decreasing, got {list(widths)}")
    dims = [input_dim, *widths, *reversed(widths[:-1]), input_dim]
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layer = Layer(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out))
        if batch_norm and i < len(dims) - 2:
            layer.gamma = np.ones(fan_out)
            layer.beta = np.zeros(fan_out)
            layer.running_mean = np.zeros(fan_out)
            layer.running_var = np.ones(fan_out)
        layers.append(layer)
    return AutoencoderModel(input_dim, tuple(widths), seed, layers, eps_bn=eps_bn)


def _check_input(model: AutoencoderModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise UsageError(f"expected vectors of length {model.input_dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise UsageError("input contains non-finite values")
    return X


def _forward(model: AutoencoderModel, X: np.ndarray, train: bool, momentum: float | None = None):
    """Returns (output, caches).  Running stats are updated only if ``momentum`` is given."""
    a = X
    caches = []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = a @ layer.weight + layer.bias
        if i == last:
            caches.append((a,))
            return z, caches
        zhat = inv = None
        if layer.has_bn:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if momentum is not None:
                    layer.running_mean *= momentum
                    layer.running_mean += (1 - momentum) * mu
                    layer.running_var *= momentum
                    layer.running_var += (1 - momentum) * var
            else:
                mu, var = layer.running_mean, layer.running_var
            inv = 1.0 / np.sqrt(var + model.eps_bn)
            zhat = (z - mu) * inv
            y = layer.gamma * zhat + layer.beta
        else:
            y = z
        caches.append((a, zhat, inv, y))
        a = np.maximum(y, 0.0)
    raise AssertionError("unreachable")


def forward(model: AutoencoderModel, X, mode: str = "infer"):
    """Reconstruct a batch.

    ``mode="infer"`` uses running batch-norm statistics and never mutates the
    model.  ``mode="train"`` normalizes with batch statistics, updates the
    running statistics and returns ``(output, caches)``.
    """
    X = _check_input(model, X)
    if mode == "infer":
        out, _ = _forward(model, X, train=False)
        return out
    if mode == "train":
        momentum = model.train_config.bn_momentum if model.train_config else TrainConfig.bn_momentum
        return _forward(model, X, train=True, momentum=momentum)
    raise UsageError(f"unknown mode {mode!r}")


def mse_loss(out: np.ndarray, X: np.ndarray) -> float:
    return float(np.mean((out - X) ** 2))


def backward(model: AutoencoderModel, X: np.ndarray, out: np.ndarray, caches) -> list[np.ndarray]:
    """Gradients of the batch MSE w.r.t. ``model.params()`` (same order)."""
    B = X.shape[0]
    dout = 2.0 * (out - X) / out.size
    grads: list[list[np.ndarray]] = []
    (a_prev,) = caches[-1]
    last = model.layers[-1]
    grads.append([a_prev.T @ dout, dout.sum(axis=0)])
    da = dout @ last.weight.T
    for layer, (a_prev, zhat, inv, y) in zip(reversed(model.layers[:-1]), reversed(caches[:-1])):
        dy = da * (y > 0)
        if layer.has_bn:
            dgamma = (dy * zhat).sum(axis=0)
            dbeta = dy.sum(axis=0)
            dzhat = dy * layer.gamma
            dz = (inv / B) * (B * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
            g = [a_prev.T @ dz, dz.sum(axis=0), dgamma, dbeta]
        else:
            dz = dy
            g = [a_prev.T @ dz, dz.sum(axis=0)]
        grads.append(g)
        da = dz @ layer.weight.T
    return [g for layer_grads in reversed(grads) for g in layer_grads]


def loss_and_grads(model: AutoencoderModel, X) -> tuple[float, list[np.ndarray]]:
    """Train-mode loss and exact gradients without touching running statistics."""
    X = _check_input(model, X)
    out, caches = _forward(model, X, train=True)
    return mse_loss(out, X), backward(model, X, out, caches)


def _adadelta_step(params, grads, state, rho: float, eps: float) -> None:
    eg2, edx2 = state
    for p, g, sg, sx in zip(params, grads, eg2, edx2):
        sg *= rho
        sg += (1 - rho) * g * g
        dx = -np.sqrt(sx + eps) / np.sqrt(sg + eps) * g
        sx *= rho
        sx += (1 - rho) * dx * dx
        p += dx


@dataclass
class TrainResult:
    model: AutoencoderModel
    losses: list[float] = field(default_factory=list)


def train(model: AutoencoderModel, data, config: TrainConfig | None = None) -> TrainResult:
    """Minimize reconstruction MSE with Adadelta; updates ``model`` in place.

    ``losses[e]`` is the sample-weighted mean train-mode batch MSE of epoch ``e``.
    A trailing batch of one sample is merged into the previous batch.
    """
    config = config or TrainConfig()
    X = _check_input(model, data)
    n = X.shape[0]
    if n == 0:
        raise UsageError("empty training set")
    if model.batch_norm and n < 2:
        raise ConfigError("batch normalization needs at least 2 training vectors")
    model.train_config = config
    model.eps_bn = config.eps_bn
    params = model.params()
    if model.opt_state is None:
        model.opt_state = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    rng = np.random.default_rng(config.shuffle_seed)
    starts = list(range(0, n, config.batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    bounds = list(zip(starts, starts[1:] + [n]))
    losses: list[float] = []
    best, stale = math.inf, 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo, hi in bounds:
            xb = X[perm[lo:hi]]
            out, caches = _forward(model, xb, train=True, momentum=config.bn_momentum)
            loss = mse_loss(out, xb)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            grads = backward(model, xb, out, caches)
            _adadelta_step(params, grads, model.opt_state, config.rho, config.eps_opt)
            total += loss * (hi - lo)
        epoch_loss = total / n
        losses.append(epoch_loss)
        logger.debug("epoch %d loss %.6g", epoch, epoch_loss)
        if config.patience is not None:
            if epoch_loss < best:
                best, stale = epoch_loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return TrainResult(model, losses)


@dataclass(frozen=True)
class AnomalyScore:
    score: float
    user_id: str | None = None
    end_day: date | None = None
    aspect: str | None = None


def reconstruction_errors(model: AutoencoderModel, X) -> np.ndarray:
    X = _check_input(model, X)
    out, _ = _forward(model, X, train=False)
    return np.mean((out - X) ** 2, axis=1)


def score(model: AutoencoderModel, vector, *, user_id=None, end_day=None, aspect=None) -> AnomalyScore:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1:
        raise UsageError("score() takes a single vector")
    return AnomalyScore(float(reconstruction_errors(model, v)[0]), user_id, end_day, aspect)


# ---------------------------------------------------------------------------
# Checkpoints


def model_to_dict(model: AutoencoderModel) -> dict:
    """Serializable form; floats are written with shortest round-trip repr."""
    layers = []
    for layer in model.layers:
        entry = {
            "shape": list(layer.weight.shape),
            "weight": layer.weight.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
        if layer.has_bn:
            entry.update(
                gamma=layer.gamma.tolist(), beta=layer.beta.tolist(),
                running_mean=layer.running_mean.tolist(), running_var=layer.running_var.tolist(),
            )
        layers.append(entry)
    out = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "float_encoding": "decimal, shortest round-trip (IEEE-754 binary64 exact)",
        "param_order": "per layer: weight (in x out, row-major), bias, gamma, beta, running_mean, running_var",
        "input_dim": model.input_dim,
        "hidden_widths": list(model.hidden_widths),
        "seed": model.seed,
        "batch_norm": model.batch_norm,
        "eps_bn": model.eps_bn,
        "config": asdict(model.train_config) if model.train_config else None,
        "layers": layers,
    }
    if model.opt_state is not None:
        out["optimizer"] = {
            "name": "adadelta",
            "accum_grad": [a.ravel().tolist() for a in model.opt_state[0]],
            "accum_update": [a.ravel().tolist() for a in model.opt_state[1]],
        }
    return out


def model_from_dict(data: dict) -> AutoencoderModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not an autoencoder checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {data.get('version')}")
    layers = []
    for entry in data["layers"]:
        shape = tuple(entry["shape"])
        layer = Layer(np.asarray(entry["weight"], dtype=np.float64).reshape(shape),
                      np.asarray(entry["bias"], dtype=np.float64))
        if "gamma" in entry:
            for key in ("gamma", "beta", "running_mean", "running_var"):
                setattr(layer, key, np.asarray(entry[key], dtype=np.float64))
        layers.append(layer)
    model = AutoencoderModel(
        input_dim=data["input_dim"],
        hidden_widths=tuple(data["hidden_widths"]),
        seed=data["seed"],
        layers=layers,
        eps_bn=data["eps_bn"],
        train_config=TrainConfig(**data["config"]) if data.get("config") else None,
    )
    if "optimizer" in data:
        params = model.params()
        acc = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(data["optimizer"]["accum_grad"], params)]
        upd = [np.asarray(a, dtype=np.float64).reshape(p.shape) for a, p in zip(data["optimizer"]["accum_update"], params)]
        model.opt_state = (acc, upd)
    return model


def save_model(model: AutoencoderModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> AutoencoderModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
