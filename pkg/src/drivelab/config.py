"""Experiment configuration: one validated document for the whole pipeline.

Sections mirror the moving parts (frame spec, network, optimizer, dataset,
seeds, metric thresholds). Loading rejects unknown keys so typos fail fast.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .frames import FrameKind, FrameSpec
from .nn import NetworkConfig


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 10_000
    batch_size: int = 128
    steps: int = 10_000
    aux_weight: float = 0.3
    weight_decay: float = 1e-4
    toy_learning_rate: float = 1e-4
    toy_batch_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.learning_rate <= 0.0 or self.toy_learning_rate <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.steps < 1 or self.batch_size < 1 or self.toy_batch_size < 1:
            raise ValueError("steps and batch sizes must be >= 1")


@dataclass(frozen=True)
class DatasetConfig:
    path: str | None = None
    scenes: int = 200
    steps: int = 100
    radius_min: float = 10.0
    radius_max: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 10.0 <= self.radius_min <= self.radius_max <= 100.0:
            raise ValueError("radius range must lie within [10, 100]")
        if self.scenes < 1 or self.steps < 1:
            raise ValueError("scenes and steps must be >= 1")


@dataclass(frozen=True)
class MetricThresholds:
    off_road_m: float = 2.0
    discomfort_accel: float = 3.0
    toy_off_route_m: float = 2.0

    def __post_init__(self):
        for name in ("off_road_m", "discomfort_accel", "toy_off_route_m"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    frame: FrameSpec = FrameSpec()
    network: NetworkConfig = NetworkConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    dataset: DatasetConfig = DatasetConfig()
    seeds: tuple = (0, 1, 2)
    thresholds: MetricThresholds = MetricThresholds()

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")

    def to_json(self) -> dict:
        return {
            "frame": self.frame.to_json(),
            "network": self.network.to_json(),
            "optimizer": asdict(self.optimizer),
            "dataset": asdict(self.dataset),
            "seeds": list(self.seeds),
            "thresholds": asdict(self.thresholds),
        }

    @staticmethod
    def from_json(doc: dict) -> "ExperimentConfig":
        known = {"frame", "network", "optimizer", "dataset", "seeds", "thresholds"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        def section(name, cls, defaults):
            sub = doc.get(name)
            if sub is None:
                return defaults
            extra = set(sub) - set(asdict(defaults))
            if extra:
                raise ValueError(f"unknown keys in config section {name!r}: {sorted(extra)}")
            return cls(**sub)

        frame = FrameSpec.from_json(doc["frame"]) if "frame" in doc else FrameSpec()
        network = NetworkConfig.from_json(doc["network"]) if "network" in doc else NetworkConfig()
        if "network" in doc:
            extra = set(doc["network"]) - set(NetworkConfig().to_json())
            if extra:
                raise ValueError(f"unknown keys in config section 'network': {sorted(extra)}")
        if "frame" in doc:
            extra = set(doc["frame"]) - {"kind", "perturb_std", "seed"}
            if extra:
                raise ValueError(f"unknown keys in config section 'frame': {sorted(extra)}")
        return ExperimentConfig(
            frame=frame,
            network=network,
            optimizer=section("optimizer", OptimizerConfig, OptimizerConfig()),
            dataset=section("dataset", DatasetConfig, DatasetConfig()),
            seeds=tuple(doc.get("seeds", (0, 1, 2))),
            thresholds=section("thresholds", MetricThresholds, MetricThresholds()),
        )
