"""Ego-perturbed coordinate frames.

A frame's origin is the ego position plus independent zero-mean Gaussian
noise per axis; its x-axis points from the origin toward an anchor point
(the mission goal, or the ring center in the toy variant). The perturbation
blurs the ego's exact position out of the observation; the anchor supplies
the orientation so the frame never depends on the ego heading. The plain
ego-centric frame (origin at the ego, x-axis along the heading) is kept as
the ablation baseline.

Randomness uses numpy's Philox counter-based bit generator so per-scene and
per-step streams can be split deterministically, independent of scheduling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose2,
    heading_from_frame,
    heading_to_frame,
    transform_from_frame,
    transform_to_frame,
)

DEGENERATE_TOL = 1e-9


def _entropy(seed):
    """Normalize int / str / nested tuple seeds into SeedSequence entropy."""
    if isinstance(seed, str):
        import hashlib

        return int.from_bytes(hashlib.sha256(seed.encode()).digest()[:16], "little")
    if isinstance(seed, (tuple, list)):
        flat = []
        for part in seed:
            e = _entropy(part)
            flat.extend(e if isinstance(e, list) else [e])
        return flat
    return int(seed)


def make_rng(seed) -> np.random.Generator:
    """Seeded Philox generator; the package-wide RNG contract."""
    ss = np.random.SeedSequence(_entropy(seed))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def split_rng(seed, n: int) -> list[np.random.Generator]:
    """n independent child streams derived from one seed."""
    children = np.random.SeedSequence(_entropy(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(key=c.generate_state(2, np.uint64))) for c in children]


class FrameKind(enum.Enum):
    EGO_PERTURBED_GOAL_ORIENTED = "ego_perturbed_goal_oriented"
    EGO_PERTURBED_CENTER_ORIENTED = "ego_perturbed_center_oriented"
    EGO_CENTRIC = "ego_centric"


@dataclass(frozen=True)
class FrameSpec:
    kind: FrameKind = FrameKind.EGO_PERTURBED_GOAL_ORIENTED
    perturb_std: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FrameKind(self.kind))
        object.__setattr__(self, "perturb_std", float(self.perturb_std))
        if self.perturb_std < 0.0:
            raise ValueError("perturb_std must be non-negative")

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "perturb_std": self.perturb_std, "seed": self.rng_seed}

    @staticmethod
    def from_json(doc: dict) -> "FrameSpec":
        return FrameSpec(
            kind=FrameKind(doc["kind"]),
            perturb_std=float(doc["perturb_std"]),
            rng_seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class Frame:
    """Resolved frame: origin plus unit x-axis, with transform helpers."""

    origin: tuple
    x_axis: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "x_axis", (float(self.x_axis[0]), float(self.x_axis[1])))

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.x_axis[1], self.x_axis[0]))

    def to_frame(self, points) -> np.ndarray:
        return transform_to_frame(points, self.origin, self.x_axis)

    def from_frame(self, points) -> np.ndarray:
        return transform_from_frame(points, self.origin, self.x_axis)

    def heading_to_frame(self, heading):
        return heading_to_frame(heading, self.x_axis)

    def heading_from_frame(self, heading):
        return heading_from_frame(heading, self.x_axis)


def _ego_position(ego) -> np.ndarray:
    if isinstance(ego, Pose2):
        return ego.position
    return np.asarray(ego, dtype=np.float64)[:2]


def make_frame(spec: FrameSpec, ego, anchor=None, rng: np.random.Generator | None = None) -> Frame:
    """Construct one frame for the given ego state.

    For the perturbed kinds, `ego` may be a bare (x, y) position; the heading
    is never read. For the ego-centric kind, `ego` must be a Pose2 and
    `anchor` is ignored. `rng` defaults to a fresh stream from spec.rng_seed.
    """
    if spec.kind is FrameKind.EGO_CENTRIC:
        if not isinstance(ego, Pose2):
            raise TypeError("ego_centric frames need a full Pose2 because the heading sets the x-axis")
        return Frame(origin=tuple(ego.position), x_axis=tuple(ego.direction()))

    if anchor is None:
        raise ValueError("perturbed frames need an anchor point (goal or ring center)")
    if rng is None:
        rng = make_rng(spec.rng_seed)
    position = _ego_position(ego)
    origin = position + rng.normal(0.0, spec.perturb_std, size=2)
    direction = np.asarray(anchor, dtype=np.float64) - origin
    norm = float(np.linalg.norm(direction))
    if norm < DEGENERATE_TOL:
        raise ValueError("frame origin coincides with the anchor; direction undefined")
    return Frame(origin=tuple(origin), x_axis=tuple(direction / norm))


def frame_per_history_step(
    spec: FrameSpec, ego_states, anchor=None, rng: np.random.Generator | None = None
) -> list[Frame]:
    """One independently perturbed frame per history step (oldest first)."""
    ego_states = list(ego_states)
    if len(ego_states) < 1:
        raise ValueError("need at least one history step")
    if rng is None:
        rng = make_rng(spec.rng_seed)
    return [make_frame(spec, ego, anchor, rng) for ego in ego_states]
