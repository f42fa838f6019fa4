# src/config.py
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from .losses import NEBULA_GRADIENTS
from .models import ModelConfig

# Load environment variables from the project root
BASE_DIR: Path = Path(__file__).parent.parent
load_dotenv(BASE_DIR / '.env')

MODES = ("vae", "nvc", "nvc_ml", "nvc_no_mass")
OPTIMIZERS = ("adam", "sgd")
DECODER_CHOICES = ("auto", "bernoulli", "gaussian")
KMEANS_UPDATES = ("kmeans", "robbins_monro")
ANCHOR_INITS = ("normal", "data")

# ConfigFile key -> TrainConfig attribute, in the order written by ``to_text``
CONFIG_KEYS: Dict[str, str] = {
    "mode": "mode",
    "anchors": "anchors",
    "latent_dim": "latent_dim",
    "hidden_dims": "hidden_dims",
    "input_dim": "input_dim",
    "decoder": "decoder",
    "lr": "lr",
    "optimizer": "optimizer",
    "epochs": "epochs",
    "max_steps": "max_steps",
    "batch_size": "batch_size",
    "seed": "seed",
    "weights.recon": "weight_recon",
    "weights.kl": "weight_kl",
    "weights.nebula": "weight_nebula",
    "weights.metric": "weight_metric",
    "weights.pair": "weight_pair",
    "weights.triplet": "weight_triplet",
    "clamp_D": "clamp_d",
    "nebula_gradient": "nebula_gradient",
    "anchor_init": "anchor_init",
    "relocate_anchors": "relocate_anchors",
    "eval_epsilon": "eval_epsilon",
    "log_every": "log_every",
    "supervised_metric": "supervised_metric",
    "kmeans_update": "kmeans_update",
    "kmeans_lr": "kmeans_lr",
}
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ConfigFile key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"invalid config key '{key}': {message}")
        self.key = key


@dataclass
class TrainConfig:
    """
    Every hyperparameter and loss switch of a run.

    Modes: ``vae`` (no anchors), ``nvc`` (nebula anchors with masses), ``nvc_ml`` (nvc plus
    metric learning on the anchor assignment) and ``nvc_no_mass`` (anchors pulled by the plain
    Euclidean attraction, no masses or pair forces). ``anchors = 0`` forces ``vae``.

    ``nebula_gradient = bounded`` trains the mass mode through the non-negative companion
    force (the logged nebula value is unchanged); ``relocate_anchors`` moves anchors that end
    an epoch without latents onto the farthest latent.
    """
    mode: str = "nvc"
    anchors: int = 10
    latent_dim: int = 16
    hidden_dims: List[int] = field(default_factory=lambda: [512, 256])
    input_dim: int = 0
    decoder: str = "auto"
    lr: float = 1e-3
    optimizer: str = "adam"
    epochs: int = 20
    max_steps: int = 0
    batch_size: int = 128
    seed: int = 0
    weight_recon: float = 1.0
    weight_kl: float = 1.0
    weight_nebula: float = 1.0
    weight_metric: float = 1.0
    weight_pair: float = 1.0
    weight_triplet: float = 1.0
    clamp_d: bool = False
    nebula_gradient: str = "bounded"
    anchor_init: str = "normal"
    relocate_anchors: bool = True
    eval_epsilon: float = 0.01
    log_every: int = 50
    supervised_metric: bool = False
    kmeans_update: str = "kmeans"
    kmeans_lr: float = 0.01

    @property
    def effective_mode(self) -> str:
        return "vae" if self.anchors == 0 else self.mode

    @property
    def uses_anchors(self) -> bool:
        return self.effective_mode != "vae"

    @property
    def uses_metric(self) -> bool:
        return self.effective_mode == "nvc_ml"

    @property
    def nebula_mode(self) -> str:
        return "euclidean" if self.effective_mode == "nvc_no_mass" else "mass"

    @property
    def loss_weights(self) -> Tuple[float, float, float, float]:
        """Weights of (recon, kl, nebula, metric) with the terms the mode disables set to 0."""
        return (self.weight_recon, self.weight_kl,
                self.weight_nebula if self.uses_anchors else 0.0,
                self.weight_metric if self.uses_metric else 0.0)

    def validate(self) -> "TrainConfig":
        """
        Checks every field.

        :raises ConfigError: Naming the first offending key.
        :return: The config itself.
        :rtype: TrainConfig
        """
        _choice("mode", self.mode, MODES)
        _choice("optimizer", self.optimizer, OPTIMIZERS)
        _choice("decoder", self.decoder, DECODER_CHOICES)
        _choice("kmeans_update", self.kmeans_update, KMEANS_UPDATES)
        _choice("nebula_gradient", self.nebula_gradient, NEBULA_GRADIENTS)
        _choice("anchor_init", self.anchor_init, ANCHOR_INITS)
        for key, minimum in (("anchors", 0), ("latent_dim", 1), ("input_dim", 0), ("epochs", 1),
                             ("max_steps", 0), ("batch_size", 1), ("log_every", 1)):
            if getattr(self, CONFIG_KEYS[key]) < minimum:
                raise ConfigError(key, f"must be >= {minimum}, got {getattr(self, CONFIG_KEYS[key])}")
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ConfigError("hidden_dims", f"needs at least one width, all >= 1, got {self.hidden_dims}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr", f"must be > 0, got {self.lr}")
        if not (self.eval_epsilon > 0 and math.isfinite(self.eval_epsilon)):
            raise ConfigError("eval_epsilon", f"must be > 0, got {self.eval_epsilon}")
        for key in ("weights.recon", "weights.kl", "weights.nebula", "weights.metric",
                    "weights.pair", "weights.triplet", "kmeans_lr"):
            value = getattr(self, CONFIG_KEYS[key])
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(key, f"must be a finite value >= 0, got {value}")
        if self.uses_metric and self.batch_size < 2:
            raise ConfigError("batch_size", "metric learning needs batches of at least 2 samples")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def model_config(self, input_dim: int, decoder: str) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, hidden_dims=list(self.hidden_dims),
                           latent_dim=self.latent_dim, seed=self.seed, decoder=decoder)

    def to_text(self) -> str:
        """Serializes every key in ConfigFile format (parsed back to an equal config)."""
        lines = ["# nvc configuration"]
        for key, attr in CONFIG_KEYS.items():
            lines.append(f"{key} = {_format(getattr(self, attr))}")
        return "\n".join(lines) + "\n"


def _choice(key: str, value: str, allowed: Tuple[str, ...]):
    if value not in allowed:
        raise ConfigError(key, f"'{value}' is not one of {', '.join(allowed)}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got '{raw}'")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            items = raw.strip("[]").replace(" ", "")
            return [int(item) for item in items.split(",") if item]
        return raw
    except ValueError as e:
        raise ConfigError(key, str(e))


def parse_config_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """
    Parses ConfigFile text (``key = value`` lines, ``#`` comments) on top of ``base``.

    :param text: File contents.
    :type text: str
    :param base: Starting values; the documented defaults when omitted.
    :type base: Optional[TrainConfig]
    :raises ConfigError: On unknown or duplicate keys, unparsable values or invalid results.
    :rtype: TrainConfig
    """
    config = dataclasses.replace(base) if base is not None else TrainConfig()
    seen = set()
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}", f"expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        attr = CONFIG_KEYS[key]
        setattr(config, attr, _parse_value(key, raw, getattr(config, attr)))
    return config.validate()


def load_config(path: Optional[Path]) -> TrainConfig:
    """Reads a ConfigFile; ``None`` yields the defaults."""
    if path is None:
        return TrainConfig().validate()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("config", f"cannot read '{path}': {e}")
    return parse_config_text(text)


def default_data_dir() -> Path:
    return Path(os.environ.get("NVC_DATA_DIR", BASE_DIR / "data"))


def default_out_dir() -> Path:
    return Path(os.environ.get("NVC_OUT_DIR", BASE_DIR / "runs"))


def run_slow_tests() -> bool:
    return os.environ.get("NVC_RUN_SLOW", "0") == "1"
