"""Run configuration records: JSON round-trip, validation, CLI overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .tensor import ContractError

VARIANTS = ("full", "gcn_only", "gcn_encoder", "no_ae")


@dataclass
class TrainConfig:
    model_variant: str = "full"
    source: str = "mnist"
    rows: int = 2
    cols: int = 2
    cell: int = 16
    channels: int = 1
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    layers: int = 4
    heads: int = 4
    d_model: int = 256
    ffn_width: int = 2048
    embed_width: int = 64
    gcn_layers: int = 3
    bottleneck: int = 256
    # start the supervised window at a random step instead of always at SOS
    random_prefix: bool = False
    # optimizer-step cap across the whole run; 0 means epochs decide
    max_steps: int = 0
    # stop once the epoch-mean teacher-forced final-step MSE drops below this; 0 disables
    target_final_mse: float = 0.0
    dataset_dir: str = ""
    ae_path: str = ""
    out_dir: str = ""

    @property
    def pixel_width(self) -> int:
        return self.rows * self.cell * self.cols * self.cell * self.channels

    @property
    def token_width(self) -> int:
        return self.pixel_width if self.model_variant == "no_ae" else self.bottleneck

    def validate(self) -> "TrainConfig":
        if self.model_variant not in VARIANTS:
            raise ContractError(
                f"model_variant {self.model_variant!r} not one of {VARIANTS}"
            )
        for name in ("rows", "cols", "cell", "channels", "batch_size", "layers", "heads",
                     "d_model", "ffn_width", "embed_width", "gcn_layers", "bottleneck"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0 or self.max_steps < 0:
            raise ContractError("epochs and max_steps must be >= 0")
        if self.target_final_mse < 0:
            raise ContractError(f"target_final_mse must be >= 0, got {self.target_final_mse}")
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.d_model % self.heads:
            raise ContractError(f"heads {self.heads} do not divide d_model {self.d_model}")
        if self.model_variant == "no_ae" and self.d_model != self.pixel_width:
            raise ContractError(
                f"no_ae needs d_model = flattened pixel width {self.pixel_width}, "
                f"got {self.d_model}"
            )
        if self.model_variant == "full" and self.d_model != self.bottleneck:
            raise ContractError(
                f"full variant feeds {self.bottleneck}-wide features through the decoder, "
                f"so d_model must equal bottleneck; got {self.d_model}"
            )
        return self


@dataclass
class AeConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    # per-epoch multiplier; constant lr stalls short of the reconstruction floor
    lr_decay: float = 1.0
    seed: int = 0
    widths: tuple = (32, 64, 128, 256)
    bottleneck: int = 256
    # float32 halves pretraining time; 64-bit kept for gradient checking
    dtype: str = "float32"

    def validate(self) -> "AeConfig":
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ContractError("bad autoencoder training settings")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ContractError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ContractError(f"bad widths {self.widths}")
        if self.dtype not in ("float32", "float64"):
            raise ContractError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self


@dataclass
class ClassifierConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 2e-3
    seed: int = 0
    holdout: float = 0.2
    widths: tuple = (16, 32, 64)

    def validate(self) -> "ClassifierConfig":
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ContractError("bad classifier training settings")
        if not 0.0 < self.holdout < 1.0:
            raise ContractError(f"holdout must be in (0, 1), got {self.holdout}")
        return self


def config_from_dict(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ContractError(f"unknown config keys for {cls.__name__}: {unknown}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced).validate()


def load_config(cls, path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ContractError(f"config {path}: invalid JSON at line {e.lineno}") from e
    if not isinstance(data, dict):
        raise ContractError(f"config {path}: expected a JSON object")
    return config_from_dict(cls, data)


def config_to_json(cfg) -> str:
    data = dataclasses.asdict(cfg)
    for key, value in data.items():
        if isinstance(value, tuple):
            data[key] = list(value)
    return json.dumps(data, indent=1, sort_keys=True)


def apply_overrides(cfg, pairs: list[str]):
    """--set key=value overrides, cast to the field's type."""
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for pair in pairs:
        if "=" not in pair:
            raise ContractError(f"override {pair!r} is not key=value")
        key, _, raw = pair.partition("=")
        if key not in fields:
            raise ContractError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "0", "1"):
                raise ContractError(f"override {key}: expected a boolean, got {raw!r}")
            value = raw.lower() in ("true", "1")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif isinstance(current, tuple):
            value = tuple(json.loads(raw))
        else:
            value = raw
        setattr(cfg, key, value)
    return cfg.validate()
