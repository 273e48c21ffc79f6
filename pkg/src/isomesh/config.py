"""Pipeline configuration: JSON round-trip and the desk/full profiles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Union

from .nn import TrainConfig


def _desk_global() -> TrainConfig:
    return TrainConfig(epochs=300, learning_rate=1e-3)


def _desk_local() -> TrainConfig:
    return TrainConfig(epochs=150, learning_rate=1e-3)


@dataclass
class PipelineConfig:
    reference_frequency: int = 16
    tau_a: float = 0.55
    beta1: float = 1.2
    beta2: float = 1.1
    beta3: float = 1.05
    alpha: float = 0.5
    tau_e: Union[float, str] = "auto"  # in input units, or 1% of the bounding-box diagonal
    n1: int = 10
    seed: int = 0
    lloyd_iterations: int = 10
    penalty_every: int = 50
    penalty_until: int = 500
    max_restarts: int = 5
    fill: float = 0.9  # normalized cloud's max norm as a fraction of the reference radius
    global_train: TrainConfig = field(default_factory=_desk_global)
    coarse_train: TrainConfig = field(default_factory=_desk_local)
    fine_train: TrainConfig = field(default_factory=_desk_local)

    def __post_init__(self):
        for key in ("global_train", "coarse_train", "fine_train"):
            val = getattr(self, key)
            if isinstance(val, dict):
                setattr(self, key, TrainConfig(**val))
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.reference_frequency <= 64:
            raise ValueError("reference_frequency must lie in 1..64")
        for name in ("tau_a", "beta1", "beta2", "beta3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.tau_e != "auto" and not (isinstance(self.tau_e, (int, float)) and self.tau_e > 0):
            raise ValueError("tau_e must be a positive number or 'auto'")
        if not 0 < self.fill < 1:
            raise ValueError("fill must lie in (0, 1)")
        if self.n1 < 1:
            raise ValueError("n1 must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def desk_profile() -> PipelineConfig:
    """2,562-vertex reference and reduced epochs; minutes on one CPU core."""
    return PipelineConfig()


def full_profile() -> PipelineConfig:
    """36,002-vertex reference with long training; meant for a workstation."""
    return PipelineConfig(
        reference_frequency=60,
        global_train=TrainConfig(epochs=2000, sinkhorn_refresh_iterations=100),
        coarse_train=TrainConfig(epochs=1000),
        fine_train=TrainConfig(epochs=1000),
    )


PROFILES = {"desk": desk_profile, "full": full_profile}
