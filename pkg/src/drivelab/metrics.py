"""Closed-loop evaluation metrics over recorded rollouts.

A scene collides if the ego box overlaps any agent box at any step (touching
counts). A scene is off-road when the executed position deviates laterally
from the ground-truth path by more than 2 m at any step; the ring-road
variant replaces the path distance with |distance-from-center - radius|.
Discomfort is the fraction of steps whose positional acceleration magnitude
strictly exceeds 3 m/s^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    OrientedBox,
    finite_difference_derivatives,
    obb_intersects,
    point_to_polyline_distance,
)
from .sim import RolloutRecord, ScenarioLog

OFF_ROAD_THRESHOLD = 2.0
DISCOMFORT_THRESHOLD = 3.0


@dataclass(frozen=True)
class SceneMetrics:
    collided: bool
    off_road: bool
    discomfort_rate: float
    l2_error: float
    max_radial_deviation: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.discomfort_rate <= 1.0:
            raise ValueError("discomfort_rate must lie in [0, 1]")
        if self.l2_error < 0.0:
            raise ValueError("l2_error must be non-negative")

    def to_json(self) -> dict:
        return {
            "collided": self.collided,
            "off_road": self.off_road,
            "discomfort_rate": self.discomfort_rate,
            "l2_error": self.l2_error,
            "max_radial_deviation": self.max_radial_deviation,
        }


def collision(rollout: RolloutRecord, log: ScenarioLog) -> bool:
    """True iff the ego box overlaps any agent box at any step."""
    if not log.agents:
        return False
    for t, pose in enumerate(rollout.executed.poses):
        ego_box = OrientedBox(pose, log.ego_length, log.ego_width)
        for agent in log.agents:
            other = OrientedBox(agent.trajectory.poses[t], agent.length, agent.width)
            if obb_intersects(ego_box, other):
                return True
    return False


def off_road(rollout: RolloutRecord, log: ScenarioLog, threshold: float = OFF_ROAD_THRESHOLD) -> bool:
    """Lateral deviation from the ground-truth path above the threshold."""
    deviations = point_to_polyline_distance(rollout.executed.positions(), log.ego.positions())
    return bool(np.any(deviations > threshold))


def discomfort(rollout: RolloutRecord, threshold: float = DISCOMFORT_THRESHOLD) -> float:
    """Fraction of steps whose positional |acceleration| strictly exceeds 3."""
    if len(rollout.executed) < 3:
        raise ValueError("discomfort needs at least 3 steps")
    _, acc = finite_difference_derivatives(rollout.executed)
    return fraction_above(np.linalg.norm(acc[:, :2], axis=1), threshold)


def fraction_above(magnitudes, threshold: float) -> float:
    """Strictly-above counting rule shared by the discomfort metric."""
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    return float(np.count_nonzero(magnitudes > threshold)) / magnitudes.size


def l2(rollout: RolloutRecord, log: ScenarioLog) -> float:
    """Mean Euclidean position error against the ground truth."""
    a = rollout.executed.positions()
    b = log.ego.positions()
    if a.shape[0] != b.shape[0]:
        warnings.warn("trajectory lengths differ; truncating to the shorter")
        n = min(a.shape[0], b.shape[0])
        a, b = a[:n], b[:n]
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def max_radial_deviation(rollout: RolloutRecord, radius: float) -> float:
    """Ring-road lateral deviation: max |(distance from center) - radius|."""
    r = np.linalg.norm(rollout.executed.positions(), axis=1)
    return float(np.max(np.abs(r - radius)))


def off_route(rollout: RolloutRecord, radius: float, threshold: float = OFF_ROAD_THRESHOLD) -> bool:
    return max_radial_deviation(rollout, radius) > threshold


def evaluate_scene(rollout: RolloutRecord, log: ScenarioLog, ring_radius: float | None = None) -> SceneMetrics:
    return SceneMetrics(
        collided=collision(rollout, log),
        off_road=off_road(rollout, log),
        discomfort_rate=discomfort(rollout),
        l2_error=l2(rollout, log),
        max_radial_deviation=None if ring_radius is None else max_radial_deviation(rollout, ring_radius),
    )


@dataclass(frozen=True)
class DatasetReport:
    """Across-seed aggregation: each metric as mean +/- sample std in percent
    (collision/off-road/discomfort) or meters (L2)."""

    n_seeds: int
    n_scenes: int
    collision_mean: float
    collision_std: float
    off_road_mean: float
    off_road_std: float
    discomfort_mean: float
    discomfort_std: float
    l2_mean: float
    l2_std: float

    def to_json(self) -> dict:
        return {
            "n_seeds": self.n_seeds,
            "n_scenes": self.n_scenes,
            "collision_pct": [self.collision_mean, self.collision_std],
            "off_road_pct": [self.off_road_mean, self.off_road_std],
            "discomfort_pct": [self.discomfort_mean, self.discomfort_std],
            "l2_m": [self.l2_mean, self.l2_std],
        }


def _mean_std(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def aggregate(per_seed) -> DatasetReport:
    """per_seed: mapping seed -> sequence of SceneMetrics for that seed."""
    if not per_seed:
        raise ValueError("nothing to aggregate")
    coll, off, disc, l2s = [], [], [], []
    n_scenes = 0
    for seed in sorted(per_seed):
        scenes = list(per_seed[seed])
        if not scenes:
            raise ValueError(f"seed {seed} has no scenes")
        n_scenes += len(scenes)
        coll.append(100.0 * np.mean([s.collided for s in scenes]))
        off.append(100.0 * np.mean([s.off_road for s in scenes]))
        disc.append(100.0 * np.mean([s.discomfort_rate for s in scenes]))
        l2s.append(np.mean([s.l2_error for s in scenes]))
    cm, cs = _mean_std(coll)
    om, os_ = _mean_std(off)
    dm, ds = _mean_std(disc)
    lm, ls = _mean_std(l2s)
    return DatasetReport(
        n_seeds=len(per_seed),
        n_scenes=n_scenes,
        collision_mean=cm,
        collision_std=cs,
        off_road_mean=om,
        off_road_std=os_,
        discomfort_mean=dm,
        discomfort_std=ds,
        l2_mean=lm,
        l2_std=ls,
    )


def write_scene_csv(path, scenes):
    """Per-scene metric rows as CSV."""
    with open(path, "w") as fh:
        fh.write("scene,collided,off_road,discomfort_rate,l2_error,max_radial_deviation\n")
        for i, s in enumerate(scenes):
            rad = "" if s.max_radial_deviation is None else repr(s.max_radial_deviation)
            fh.write(f"{i},{int(s.collided)},{int(s.off_road)},{s.discomfort_rate!r},{s.l2_error!r},{rad}\n")
