"""Backpropagation, optimizers, and the deterministic training loop.

Training works in the network's own space: when a model carries
standardization, the dataset is standardized once up front and the reported
losses are in that space. Scoring (anomaly module) always reports losses in
the raw input space.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import numlin
from .datagen import Dataset
from .errors import InputDomainError, TrainingDivergedError
from .models import AutoencoderModel, clone_model, save_model
from .rng import Rng, derive_seed

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    loss_log_interval: int = 0
    checkpoint_interval: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InputDomainError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InputDomainError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InputDomainError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise InputDomainError(f"optimizer must be one of {OPTIMIZERS}")

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise InputDomainError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    """Per-epoch mean losses plus run metadata."""

    epoch_losses: list[float]
    final_loss: float
    wall_time_s: float
    seed: int

    def to_json_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "epoch_losses": self.epoch_losses,
            "final_loss": self.final_loss,
            "seed": self.seed,
        }
        # wall time is excluded from artifact files so identical runs
        # produce identical bytes
        if include_wall_time:
            d["wall_time_s"] = self.wall_time_s
        return d


def reconstruction_loss(x, xhat) -> float:
    """Mean squared error between a sample and its reconstruction."""
    a = numlin.as_vector(np.asarray(x, dtype=np.float64), "x")
    b = numlin.as_vector(np.asarray(xhat, dtype=np.float64), "xhat")
    if a.shape != b.shape:
        raise InputDomainError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d) / a.shape[0]


def batch_loss(x: np.ndarray, xhat: np.ndarray) -> float:
    """Mean over samples of the per-sample reconstruction loss."""
    if x.shape != xhat.shape:
        raise InputDomainError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    d = x - xhat
    return float(np.sum(d * d)) / (x.shape[0] * x.shape[1])


def backward(model: AutoencoderModel, batch: np.ndarray) -> tuple[float, list[dict]]:
    """Loss and gradients of the mean batch loss for every parameter.

    Gradients come back as one dict per layer (encoder then decoder), with
    the same keys and shapes as layer.params(). Standardization, when
    present, is applied to the batch before the network, so gradients are
    of the network-space loss.
    """
    a, _ = _prep_batch(model, batch)
    caches: list = []
    _, out = _network_forward(model, a, caches)
    b, n = a.shape
    dy = (2.0 / (b * n)) * (out - a)
    loss = float(np.sum((a - out) ** 2)) / (b * n)
    grads = _backprop(model, dy, caches)
    return loss, grads


def _prep_batch(model: AutoencoderModel, batch) -> tuple[np.ndarray, int]:
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != model.input_dim:
        raise InputDomainError(
            f"batch must be (m, {model.input_dim}), got {a.shape}"
        )
    if model.preprocessing is not None:
        a = model.preprocessing.apply(a)
    return a, a.shape[0]


def _network_forward(model: AutoencoderModel, a: np.ndarray, caches: list):
    """Forward in network space: flat standardized rows -> flat rows."""
    x = a.reshape(a.shape[0], *model.input_shape) if model.is_image_model() else a
    out = x
    for layer in model.layers():
        out, cache = layer.forward(out)
        caches.append(cache)
    return x, out.reshape(a.shape[0], -1)


def _backprop(model: AutoencoderModel, dy_flat: np.ndarray, caches: list) -> list[dict]:
    layers = model.layers()
    grads: list[dict] = [None] * len(layers)
    # decoder output was flattened for the loss; undo for image models
    last_out_shape = caches[-1][2].shape if caches[-1] is not None else None
    dy = dy_flat if last_out_shape is None else dy_flat.reshape(last_out_shape)
    for i in range(len(layers) - 1, -1, -1):
        dy, grads[i] = layers[i].backward(dy, caches[i])
    return grads


def input_gradient(model: AutoencoderModel, a: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss L(a) = mse(a, model(a)) and its gradient with respect to a.

    Works in raw input space: the chain rule runs through the
    standardization maps when the model has them.
    """
    v = numlin.as_vector(np.asarray(a, dtype=np.float64), "input")
    if v.shape[0] != model.input_dim:
        raise InputDomainError(f"input must have length {model.input_dim}")
    row = v[None, :]
    caches: list = []
    std = model.preprocessing
    net_in = std.apply(row) if std is not None else row
    _, net_out = _network_forward(model, net_in, caches)
    out = std.invert(net_out) if std is not None else net_out

    n = v.shape[0]
    r = (row - out)[0]
    loss = float(r @ r) / n
    # dL/da = (2/n) (r - J^T r); J^T r via one backward pass
    upstream = (2.0 / n) * r[None, :]
    if std is not None:
        upstream = upstream * std.std  # through the de-standardization
    layers = model.layers()
    dy = upstream
    last_out_shape = caches[-1][2].shape if caches[-1] is not None else None
    if last_out_shape is not None:
        dy = dy.reshape(last_out_shape)
    for i in range(len(layers) - 1, -1, -1):
        dy, _ = layers[i].backward(dy, caches[i])
    dy = dy.reshape(1, -1)
    if std is not None:
        dy = dy / std.std  # through the standardization
    grad = (2.0 / n) * r - dy[0]
    return loss, grad


class Sgd:
    def __init__(self, params: list[dict], learning_rate: float) -> None:
        self.params = params
        self.lr = learning_rate

    def step(self, grads: list[dict]) -> None:
        for p, g in zip(self.params, grads):
            for name in p:
                p[name] -= self.lr * g[name]


class Adam:
    """Adam with bias correction; a zero gradient on fresh state is a no-op."""

    def __init__(
        self,
        params: list[dict],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads: list[dict]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            for name in p:
                m[name] = b1 * m[name] + (1.0 - b1) * g[name]
                v[name] = b2 * v[name] + (1.0 - b2) * g[name] ** 2
                mhat = m[name] / c1
                vhat = v[name] / c2
                p[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(model: AutoencoderModel, config: TrainConfig):
    params = [layer.params() for layer in model.layers()]
    if config.optimizer == "sgd":
        return Sgd(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)


def train(
    model: AutoencoderModel, dataset: Dataset, config: TrainConfig
) -> tuple[AutoencoderModel, TrainReport]:
    """Train a copy of the model; the input model is left untouched.

    Batches are consecutive slices of a per-epoch Fisher-Yates shuffle
    seeded from (config.seed, epoch), so runs are bit-reproducible.

    Raises:
        TrainingDivergedError: Loss or parameters became non-finite.
    """
    if dataset.role != "train":
        raise InputDomainError(f"dataset role must be 'train', got {dataset.role!r}")
    model = clone_model(model)
    x = dataset.x
    if x.shape[1] != model.input_dim:
        raise InputDomainError(
            f"dataset has {x.shape[1]} features, model expects {model.input_dim}"
        )
    m = x.shape[0]
    opt = _make_optimizer(model, config)
    started = time.perf_counter()
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        if config.shuffle:
            order = Rng(derive_seed(config.seed, epoch)).permutation(m)
            xe = x[order]
        else:
            xe = x
        total = 0.0
        for lo in range(0, m, config.batch_size):
            batch = xe[lo : lo + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow here just means divergence, caught right below
                loss, grads = backward(model, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch}; last good epoch "
                    f"{epoch - 1}",
                    last_good_epoch=epoch - 1,
                )
            total += loss * batch.shape[0]
            opt.step(grads)
        for layer in model.layers():
            for name, p in layer.params().items():
                if not np.all(np.isfinite(p)):
                    raise TrainingDivergedError(
                        f"non-finite parameter {layer.kind}.{name} in epoch {epoch}; "
                        f"last good epoch {epoch - 1}",
                        last_good_epoch=epoch - 1,
                    )
        epoch_losses.append(total / m)
        if config.loss_log_interval and (epoch + 1) % config.loss_log_interval == 0:
            logger.info("epoch %d/%d loss %.6g", epoch + 1, config.epochs, epoch_losses[-1])
        if (
            config.checkpoint_interval
            and config.checkpoint_dir
            and (epoch + 1) % config.checkpoint_interval == 0
        ):
            save_model(model, f"{config.checkpoint_dir}/epoch_{epoch + 1:06d}.json")
    wall = time.perf_counter() - started
    final = epoch_losses[-1] if epoch_losses else float("nan")
    report = TrainReport(
        epoch_losses=epoch_losses, final_loss=final, wall_time_s=wall, seed=config.seed
    )
    return model, report


def dataset_loss(model: AutoencoderModel, x: np.ndarray) -> float:
    """Mean per-sample loss over rows, in the network's training space."""
    a, _ = _prep_batch(model, x)
    caches: list = []
    _, out = _network_forward(model, a, caches)
    return batch_loss(a, out)


def check_gradients(
    model: AutoencoderModel,
    batch: np.ndarray,
    step: float = 1e-5,
    samples_per_tensor: int = 12,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples coordinates from every parameter tensor; the finite-difference
    loss is evaluated through the same forward path the analytic gradients
    differentiate.
    """
    _, grads = backward(model, batch)
    rng = Rng(seed)
    worst = 0.0
    layers = model.layers()
    for layer, g in zip(layers, grads):
        for name, p in layer.params().items():
            flat = p.reshape(-1)
            gflat = g[name].reshape(-1)
            count = min(samples_per_tensor, flat.shape[0])
            picked = {rng.randbelow(flat.shape[0]) for _ in range(count)}
            for idx in picked:
                orig = flat[idx]
                flat[idx] = orig + step
                up = _full_loss(model, batch)
                flat[idx] = orig - step
                down = _full_loss(model, batch)
                flat[idx] = orig
                fd = (up - down) / (2.0 * step)
                denom = max(abs(fd), abs(gflat[idx]), 1e-8)
                worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


def _full_loss(model: AutoencoderModel, batch) -> float:
    a, _ = _prep_batch(model, batch)
    caches: list = []
    _, out = _network_forward(model, a, caches)
    return batch_loss(a, out)


def write_train_report(report: TrainReport, path, include_wall_time: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(include_wall_time), f, sort_keys=True, indent=1)
        f.write("\n")
