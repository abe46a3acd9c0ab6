"""Model zoo: PCA and layered autoencoders, with evaluation and persistence.

Models are treated as immutable once fitted, trained, or loaded; every
function here returns new arrays instead of mutating inputs, which makes
concurrent scoring and grid scans safe.

The model file is a single JSON document. Floats are serialized with
Python's shortest round-trip repr (up to 17 significant digits), so a
save/load cycle reproduces bit-identical forward passes.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from . import numlin
from .errors import FormatError, InputDomainError
from .layers import (
    Conv2dLayer,
    DenseLayer,
    FlattenLayer,
    ReshapeLayer,
    Upconv2dLayer,
    layer_from_config,
    output_of,
)
from .rng import Rng

MODEL_FORMAT = "aeaudit-model"
MODEL_VERSION = 1


@dataclass
class PcaModel:
    """Mean vector plus an orthonormal basis of the top principal directions.

    Attributes:
        mean: Column means of the fitted data, length n.
        basis: (n, d) matrix whose columns are the top d right-singular
            vectors of the centered data.
        singular_values: All min(m, n) singular values of the centered data,
            descending (the tail beyond d is kept for energy accounting).
    """

    mean: np.ndarray
    basis: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self) -> None:
        self.mean = numlin.as_vector(self.mean, "mean")
        self.basis = numlin.as_matrix(self.basis, "basis")
        self.singular_values = numlin.as_vector(self.singular_values, "singular_values")
        if self.basis.shape[0] != self.mean.shape[0]:
            raise InputDomainError("basis rows must match mean length")
        d = self.basis.shape[1]
        gram = self.basis.T @ self.basis
        if np.max(np.abs(gram - np.eye(d))) >= 1e-10:
            raise InputDomainError("basis columns must be orthonormal")

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]


def pca_fit(x, d: int) -> PcaModel:
    """Fit PCA: center the data, keep the top d right-singular vectors."""
    xm = numlin.as_matrix(x, "data")
    m, n = xm.shape
    if not 1 <= d <= min(m, n):
        raise InputDomainError(f"d must be in [1, {min(m, n)}], got {d}")
    mean = xm.mean(axis=0)
    res = numlin.svd(xm - mean)
    return PcaModel(mean=mean, basis=res.v[:, :d].copy(), singular_values=res.sigma)


def _rows(x, n: int, name: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != n:
        raise InputDomainError(f"{name} must have {n} columns, got shape {a.shape}")
    return a, single


def pca_encode(model: PcaModel, x) -> np.ndarray:
    """Project rows onto the principal subspace: (x - mean) @ basis."""
    a, single = _rows(x, model.input_dim, "input")
    y = (a - model.mean) @ model.basis
    return y[0] if single else y


def pca_decode(model: PcaModel, y) -> np.ndarray:
    """Map latent rows back: y @ basis.T + mean."""
    a, single = _rows(y, model.latent_dim, "latent")
    x = a @ model.basis.T + model.mean
    return x[0] if single else x


def pca_reconstruct(model: PcaModel, x) -> np.ndarray:
    return pca_decode(model, pca_encode(model, x))


@dataclass
class Preprocessing:
    """Optional per-feature standardization recorded with the model."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class AutoencoderModel:
    """Layered encoder/decoder with explicit parameters.

    Attributes:
        encoder: Layers mapping the (possibly standardized) input to the
            latent vector.
        decoder: Layers mapping the latent vector back to the input space.
        input_shape: (C, H, W) for image models, or (n,) for flat models.
        latent_dim: Width of the encoder output.
        preprocessing: Standardization applied before the encoder and
            inverted after the decoder, or None.
        seed: Seed used to initialize the parameters.
    """

    encoder: list
    decoder: list
    input_shape: tuple[int, ...]
    latent_dim: int
    preprocessing: Preprocessing | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        self.input_shape = tuple(int(v) for v in self.input_shape)
        desc = self.input_shape if len(self.input_shape) == 3 else self.input_shape[0]
        for layer in self.encoder:
            desc = output_of(layer, desc)
        if desc != self.latent_dim:
            raise InputDomainError(
                f"encoder output {desc} does not match latent_dim {self.latent_dim}"
            )
        for layer in self.decoder:
            desc = output_of(layer, desc)
        expect = self.input_shape if len(self.input_shape) == 3 else self.input_shape[0]
        if desc != expect:
            raise InputDomainError(
                f"decoder output {desc} does not reproduce input shape {expect}"
            )
        for layer in self.layers():
            for name, p in layer.params().items():
                numlin.require_finite(p, f"{layer.kind} {name}")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    def layers(self):
        return [*self.encoder, *self.decoder]

    def is_image_model(self) -> bool:
        return len(self.input_shape) == 3


def _run_layers(layers, x, caches=None):
    out = x
    for layer in layers:
        out, cache = layer.forward(out)
        if caches is not None:
            caches.append(cache)
    return out


def forward_batch(model: AutoencoderModel, x, caches=None) -> tuple[np.ndarray, np.ndarray]:
    """Run flat rows through the full model.

    Returns (latent, reconstruction), both 2-D with one row per input row.
    When a cache list is supplied it receives one entry per layer for the
    backward pass; the pre/post standardization tensors are not cached (the
    training loop works in the network's own space).
    """
    a, _ = _rows(x, model.input_dim, "input")
    if model.preprocessing is not None:
        a = model.preprocessing.apply(a)
    if model.is_image_model():
        a = a.reshape(a.shape[0], *model.input_shape)
    z = _run_layers(model.encoder, a, caches)
    out = _run_layers(model.decoder, z, caches)
    out = out.reshape(out.shape[0], -1)
    if model.preprocessing is not None:
        out = model.preprocessing.invert(out)
    return z, out


def ae_forward(model: AutoencoderModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample forward pass: (latent, reconstruction) as vectors."""
    a, single = _rows(x, model.input_dim, "input")
    if not single:
        raise InputDomainError("ae_forward takes a single sample; use forward_batch")
    z, out = forward_batch(model, a)
    return z[0], out[0]


def decode_batch(model: AutoencoderModel, z) -> np.ndarray:
    """Run latent rows through the decoder only; rows in input space."""
    a, single = _rows(z, model.latent_dim, "latent")
    out = _run_layers(model.decoder, a)
    out = out.reshape(out.shape[0], -1)
    if model.preprocessing is not None:
        out = model.preprocessing.invert(out)
    return out[0] if single else out


def encode_batch(model: AutoencoderModel, x) -> np.ndarray:
    """Run flat rows through the encoder only."""
    a, single = _rows(x, model.input_dim, "input")
    if model.preprocessing is not None:
        a = model.preprocessing.apply(a)
    if model.is_image_model():
        a = a.reshape(a.shape[0], *model.input_shape)
    z = _run_layers(model.encoder, a)
    return z[0] if single else z


def reconstruct(model, x) -> np.ndarray:
    """Reconstruction for either model kind; rows in, rows out."""
    if isinstance(model, PcaModel):
        return pca_reconstruct(model, x)
    if isinstance(model, AutoencoderModel):
        return forward_batch(model, x)[1] if np.asarray(x).ndim == 2 else ae_forward(model, x)[1]
    raise InputDomainError(f"unsupported model type {type(model)!r}")


def model_input_dim(model) -> int:
    if isinstance(model, (PcaModel, AutoencoderModel)):
        return model.input_dim
    raise InputDomainError(f"unsupported model type {type(model)!r}")


def clone_model(model: AutoencoderModel) -> AutoencoderModel:
    return copy.deepcopy(model)


# --- construction -------------------------------------------------------


def _init_dense(rng: Rng, fan_in: int, fan_out: int, activation: str) -> np.ndarray:
    # He-uniform for relu, Glorot-uniform otherwise
    if activation == "relu":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniforms(-limit, limit, (fan_in, fan_out))


def _init_conv(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int, activation: str):
    if activation == "relu":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniforms(-limit, limit, shape)


def build_mlp_autoencoder(
    layer_sizes: list[int],
    activation: str = "relu",
    seed: int = 0,
    preprocessing: Preprocessing | None = None,
    latent_index: int | None = None,
) -> AutoencoderModel:
    """Symmetric MLP autoencoder from a size list like [2, 5, 1, 5, 2].

    The hidden activation applies to every layer except the last, which is
    linear. The bottleneck is the smallest size (ties: first); everything up
    to it is the encoder.
    """
    if len(layer_sizes) < 3:
        raise InputDomainError("need at least [in, latent, out] sizes")
    if layer_sizes[0] != layer_sizes[-1]:
        raise InputDomainError(
            f"first and last sizes must match, got {layer_sizes[0]} and {layer_sizes[-1]}"
        )
    if any(s < 1 for s in layer_sizes):
        raise InputDomainError("layer sizes must be positive")
    if latent_index is None:
        latent_index = 1 + int(np.argmin(layer_sizes[1:-1]))
    if not 0 < latent_index < len(layer_sizes) - 1:
        raise InputDomainError("latent index must be interior")

    rng = Rng(seed)
    layers = []
    for i in range(len(layer_sizes) - 1):
        act = activation if i < len(layer_sizes) - 2 else "linear"
        w = _init_dense(rng, layer_sizes[i], layer_sizes[i + 1], act)
        b = np.zeros(layer_sizes[i + 1])
        layers.append(DenseLayer(w, b, act))
    return AutoencoderModel(
        encoder=layers[:latent_index],
        decoder=layers[latent_index:],
        input_shape=(layer_sizes[0],),
        latent_dim=layer_sizes[latent_index],
        preprocessing=preprocessing,
        seed=seed,
    )


def build_conv_autoencoder(
    image_hw: tuple[int, int] = (28, 28),
    channels: tuple[int, int] = (16, 32),
    latent_dim: int = 2,
    seed: int = 0,
) -> AutoencoderModel:
    """Two conv layers down, dense to the latent, mirrored back up.

    3x3 kernels with stride 2 and padding 1 halve each spatial dimension,
    so height and width must be even and at least 4. The final upconv ends
    in a sigmoid to keep pixels in (0, 1); the dense links to and from the
    latent are linear.
    """
    h, w = image_hw
    if h < 4 or w < 4 or h % 2 or w % 2:
        raise InputDomainError(f"image sides must be even and >= 4, got {image_hw}")
    c1, c2 = channels
    rng = Rng(seed)
    k = 3

    def conv(ci, co, act, in_shape):
        fan_in, fan_out = ci * k * k, co * k * k
        weight = _init_conv(rng, (co, ci, k, k), fan_in, fan_out, act)
        return Conv2dLayer(weight, np.zeros(co), 2, 1, act, in_shape)

    def upconv(ci, co, act, in_shape):
        fan_in, fan_out = ci * k * k, co * k * k
        weight = _init_conv(rng, (ci, co, k, k), fan_in, fan_out, act)
        return Upconv2dLayer(weight, np.zeros(co), 2, 1, 1, act, in_shape)

    h2, w2 = h // 2, w // 2
    h4, w4 = h2 // 2, w2 // 2
    flat = c2 * h4 * w4
    encoder = [
        conv(1, c1, "relu", (1, h, w)),
        conv(c1, c2, "relu", (c1, h2, w2)),
        FlattenLayer((c2, h4, w4)),
        DenseLayer(_init_dense(rng, flat, latent_dim, "linear"), np.zeros(latent_dim), "linear"),
    ]
    decoder = [
        DenseLayer(_init_dense(rng, latent_dim, flat, "linear"), np.zeros(flat), "linear"),
        ReshapeLayer((c2, h4, w4)),
        upconv(c2, c1, "relu", (c2, h4, w4)),
        upconv(c1, 1, "sigmoid", (c1, h2, w2)),
    ]
    return AutoencoderModel(
        encoder=encoder,
        decoder=decoder,
        input_shape=(1, h, w),
        latent_dim=latent_dim,
        seed=seed,
    )


# --- persistence ---------------------------------------------------------


def save_model(model, path) -> None:
    """Write a model as a self-describing JSON document."""
    if isinstance(model, PcaModel):
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "pca",
            "mean": model.mean.tolist(),
            "basis": model.basis.tolist(),
            "singular_values": model.singular_values.tolist(),
        }
    elif isinstance(model, AutoencoderModel):
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "autoencoder",
            "input_shape": list(model.input_shape),
            "latent_dim": model.latent_dim,
            "seed": model.seed,
            "preprocessing": None
            if model.preprocessing is None
            else {
                "mean": model.preprocessing.mean.tolist(),
                "std": model.preprocessing.std.tolist(),
            },
            "encoder": [layer.to_config() for layer in model.encoder],
            "decoder": [layer.to_config() for layer in model.decoder],
        }
    else:
        raise InputDomainError(f"unsupported model type {type(model)!r}")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_model(path):
    """Read a model written by save_model.

    Raises:
        FormatError: Not valid JSON, wrong format/version tag, or missing
            fields.
    """
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: missing '{MODEL_FORMAT}' format tag")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(
            f"{path}: unsupported version {doc.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        if doc["kind"] == "pca":
            return PcaModel(
                mean=np.array(doc["mean"], dtype=np.float64),
                basis=np.array(doc["basis"], dtype=np.float64),
                singular_values=np.array(doc["singular_values"], dtype=np.float64),
            )
        if doc["kind"] == "autoencoder":
            pre = doc.get("preprocessing")
            preprocessing = None
            if pre is not None:
                preprocessing = Preprocessing(
                    mean=np.array(pre["mean"], dtype=np.float64),
                    std=np.array(pre["std"], dtype=np.float64),
                )
            return AutoencoderModel(
                encoder=[layer_from_config(c) for c in doc["encoder"]],
                decoder=[layer_from_config(c) for c in doc["decoder"]],
                input_shape=tuple(doc["input_shape"]),
                latent_dim=int(doc["latent_dim"]),
                preprocessing=preprocessing,
                seed=int(doc.get("seed", 0)),
            )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed model document ({exc})") from None
    raise FormatError(f"{path}: unknown model kind {doc.get('kind')!r}")
