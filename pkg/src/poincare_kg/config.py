from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .manifold import EPS

PAPER_DIMS = (3, 10, 30, 100)
PAPER_BURN_INS = (10, 100)
PAPER_NEGATIVES = (10, 50, 100)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    dim: int = 10
    epochs: int = 300
    burn_in_epochs: int = 10
    learning_rate: float = 0.3
    negatives_k: int = 50
    directed: bool = True
    seed: int = 0
    init_range: float = 1e-3
    epsilon: float = EPS
    include_self_in_denominator: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"invalid config key {key!r}: {why}")

        for key in ("dim", "epochs", "burn_in_epochs", "negatives_k", "seed"):
            val = getattr(self, key)
            if isinstance(val, bool) or not isinstance(val, int):
                bad(key, f"expected integer, got {val!r}")
        for key in ("directed", "include_self_in_denominator"):
            if not isinstance(getattr(self, key), bool):
                bad(key, f"expected boolean, got {getattr(self, key)!r}")
        if self.dim < 2:
            bad("dim", "must be >= 2")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.burn_in_epochs < 0:
            bad("burn_in_epochs", "must be >= 0")
        if self.burn_in_epochs > self.epochs:
            bad("burn_in_epochs", f"burn_in_epochs ({self.burn_in_epochs}) exceeds epochs ({self.epochs})")
        if self.negatives_k < 1:
            bad("negatives_k", "must be >= 1")
        if not self.learning_rate > 0:
            bad("learning_rate", "must be positive")
        if not 0 < self.init_range < 0.1:
            bad("init_range", "must lie in (0, 0.1)")
        if not 0 < self.epsilon < 0.5:
            bad("epsilon", "must lie in (0, 0.5)")
        if not -(2**63) <= self.seed < 2**64:
            bad("seed", "must fit in 64 bits")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"invalid config key {key!r}: unknown key")
        data = dict(data)
        for key in ("learning_rate", "init_range", "epsilon"):
            if key in data and isinstance(data[key], int) and not isinstance(data[key], bool):
                data[key] = float(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "TrainingConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_(self, **changes) -> "TrainingConfig":
        return replace(self, **changes)
