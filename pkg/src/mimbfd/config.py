"""Experiment configuration: nested dataclasses, JSON merge, stable hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError
from .gpr import GprConfig

# keys that name or place a run but do not change its result
UNHASHED_KEYS = ("label", "out_dir")


@dataclass
class LcdConfig:
    enabled: bool = True
    lambda1: float = 0.1
    lambda2: float = 1.0
    gamma_trainable: bool = False
    variant: str = "sq_outside"


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: str = "mimbfd"  # or "gcn"
    split: tuple[float, float, float] = (0.4, 0.2, 0.4)
    alpha: float = 0.15
    gpr_tol: float = 1e-10
    score_scale: float | str = 1.0
    hidden_dims: tuple[int, ...] = (64, 64)
    aggregation: str = "partition"
    lr: float = 0.01
    epochs: int = 200
    patience: int = 30
    eta: float = 0.5
    lcd: LcdConfig = field(default_factory=LcdConfig)
    tmr: bool = True
    graph_dir: str | None = None
    out_dir: str | None = None
    label: str = ""

    def __post_init__(self):
        if isinstance(self.lcd, dict):
            self.lcd = LcdConfig(**self.lcd)
        self.split = tuple(float(x) for x in self.split)
        self.hidden_dims = tuple(int(x) for x in self.hidden_dims)
        self.validate()

    def validate(self) -> None:
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.hidden_dims:
            raise ConfigError("at least one layer is required")
        if any(d < 2 for d in self.hidden_dims):
            raise ConfigError("hidden dims must be >= 2")
        if self.model not in ("mimbfd", "gcn"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if len(self.split) != 3:
            raise ConfigError("split needs three ratios")
        self.gpr_config()

    def gpr_config(self) -> GprConfig:
        return GprConfig(alpha=self.alpha, tol=self.gpr_tol, score_scale=self.score_scale)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> ExperimentConfig:
        d = self.to_dict()
        for key, value in changes.items():
            if "." in key:
                outer, inner = key.split(".", 1)
                d[outer] = {**d[outer], inner: value}
            else:
                d[key] = value
        return ExperimentConfig.from_dict(d)

    def config_hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d: dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form; insensitive to key order."""
    payload = {k: v for k, v in d.items() if k not in UNHASHED_KEYS}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config_file(path: str) -> dict[str, Any]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data
