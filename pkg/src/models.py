# src/models.py
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional

import numpy as np

from .tensor import Tensor, ShapeError, as_tensor, clamp, exp, matmul, relu, sigmoid

LOGVAR_BOUNDS = (-10.0, 10.0)
DECODERS = ("bernoulli", "gaussian")


@dataclass
class ModelConfig:
    """
    Sizes of the MLP encoder-decoder.

    ``decoder`` selects the output head: ``bernoulli`` ends in a sigmoid (pixel data, BCE loss),
    ``gaussian`` is a plain linear output (real-valued data, Euclidean loss).
    """
    input_dim: int
    hidden_dims: List[int] = field(default_factory=lambda: [512, 256])
    latent_dim: int = 16
    seed: int = 0
    decoder: str = "bernoulli"

    def validate(self):
        dims = [self.input_dim, self.latent_dim] + list(self.hidden_dims)
        if not self.hidden_dims or any(d < 1 for d in dims):
            raise ValueError(f"all model dimensions must be >= 1: input={self.input_dim}, "
                             f"hidden={self.hidden_dims}, latent={self.latent_dim}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder '{self.decoder}' (expected one of {DECODERS})")


@dataclass
class LatentBatch:
    mu: Tensor
    logvar: Tensor
    z: Tensor


class Linear:
    """Fully-connected layer ``x @ W + b`` with W stored fan_in×fan_out."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> Linear:
    """Weights ~ U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), biases zero."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weight = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
    return Linear(Tensor(weight, requires_grad=True), Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))


class MlpVae:
    """
    MLP variational encoder-decoder.

    The encoder applies the hidden layers with relu and two linear heads producing ``mu`` and
    ``logvar``; the decoder mirrors the hidden widths back to the data dimension.
    """

    def __init__(self, config: ModelConfig, encoder: List[Linear], mu_head: Linear, logvar_head: Linear,
                 decoder: List[Linear], dtype=np.float32):
        self.config = config
        self.encoder = encoder
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng([config.seed, 1])

    def parameters(self) -> Dict[str, Tensor]:
        """All trainable tensors in a fixed order (also the checkpoint order)."""
        params: Dict[str, Tensor] = {}
        for prefix, layers in (("encoder", self.encoder), ("mu_head", [self.mu_head]),
                               ("logvar_head", [self.logvar_head]), ("decoder", self.decoder)):
            for i, layer in enumerate(layers):
                name = f"{prefix}.{i}" if prefix in ("encoder", "decoder") else prefix
                params[f"{name}.weight"] = layer.weight
                params[f"{name}.bias"] = layer.bias
        return params

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        for name, p in self.parameters().items():
            if name not in state:
                raise KeyError(f"missing parameter '{name}' in state")
            value = np.asarray(state[name], dtype=self.dtype)
            if value.shape != p.shape:
                raise ShapeError(f"parameter '{name}': expected shape {p.shape}, got {value.shape}")
            p.data[...] = value

    def encode(self, x, sample: bool = True, eta: Optional[np.ndarray] = None) -> LatentBatch:
        """
        Encodes a batch into posterior parameters and latent codes.

        In train mode (``sample=True``) ``z = mu + exp(0.5 * logvar) * eta`` with ``eta`` drawn from
        the model's seeded RNG unless given; in eval mode ``z = mu``.

        :param x: n×input_dim batch.
        :param sample: Draw reparameterized samples (train mode) or return the mean (eval mode).
        :type sample: bool
        :param eta: Optional fixed standard-normal noise of shape n×latent_dim.
        :type eta: Optional[np.ndarray]
        :raises NumericError: If the input is not finite.
        :raises ShapeError: If the input width differs from ``input_dim``.
        :rtype: LatentBatch
        """
        h = as_tensor(x) if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.config.input_dim:
            raise ShapeError(f"encode: expected n×{self.config.input_dim} input, got {h.shape}")
        for layer in self.encoder:
            h = relu(layer(h))
        mu = self.mu_head(h)
        logvar = clamp(self.logvar_head(h), *LOGVAR_BOUNDS)
        if not sample:
            return LatentBatch(mu, logvar, mu)
        if eta is None:
            eta = self.rng.standard_normal(mu.shape)
        z = mu + exp(0.5 * logvar) * np.asarray(eta, dtype=self.dtype)
        return LatentBatch(mu, logvar, z)

    def decode(self, z) -> Tensor:
        h = as_tensor(z) if isinstance(z, Tensor) else Tensor(np.asarray(z), dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.config.latent_dim:
            raise ShapeError(f"decode: expected n×{self.config.latent_dim} latents, got {h.shape}")
        for layer in self.decoder[:-1]:
            h = relu(layer(h))
        out = self.decoder[-1](h)
        return sigmoid(out) if self.config.decoder == "bernoulli" else out


def init_weights(config: ModelConfig, seed: Optional[int] = None, dtype=np.float32) -> MlpVae:
    """
    Builds an :class:`MlpVae` with Glorot-uniform weights and zero biases.

    :param config: Layer sizes and decoder type.
    :type config: ModelConfig
    :param seed: Weight seed; defaults to ``config.seed``.
    :type seed: Optional[int]
    :param dtype: float32 for training, float64 for gradient checks.
    :rtype: MlpVae
    """
    config.validate()
    if seed is not None and seed != config.seed:
        config = replace(config, seed=seed)
    rng = np.random.default_rng([config.seed, 0])
    widths = [config.input_dim] + list(config.hidden_dims)
    encoder = [glorot_uniform(rng, widths[i], widths[i + 1], dtype) for i in range(len(widths) - 1)]
    mu_head = glorot_uniform(rng, widths[-1], config.latent_dim, dtype)
    logvar_head = glorot_uniform(rng, widths[-1], config.latent_dim, dtype)
    back = [config.latent_dim] + list(reversed(config.hidden_dims)) + [config.input_dim]
    decoder = [glorot_uniform(rng, back[i], back[i + 1], dtype) for i in range(len(back) - 1)]
    return MlpVae(config, encoder, mu_head, logvar_head, decoder, dtype)
