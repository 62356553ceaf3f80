"""Policy formulations and their observation assembly.

The central idea: the context-only policy never sees the ego vehicle's own
track. Its observation is the map neighborhood, the other agents, and the
goal, all expressed in a perturbed frame whose origin is the ego position
plus Gaussian noise and whose x-axis points at an anchor (goal or ring
center). The behavior-cloning baselines additionally consume the ego
history in an ego-centric frame; they exist to demonstrate the compounding
error the context-only formulation avoids.

Two model families:

* ContextPolicyNetwork: spatial encoder (vector-level attention within each
  polyline, max-pool to polyline tokens, global attention over goal +
  agents + map tokens) feeding a causal temporal encoder over the history
  steps; every temporal position decodes pose predictions for its own
  future, which supplies the auxiliary training targets.
* ToyMlpPolicy: the small MLP used on the ring road, one per policy kind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .frames import Frame, FrameKind, FrameSpec, frame_per_history_step, make_frame
from .geometry import Pose2, normalize_angle
from .mapgraph import Neighborhood, PolygonKind, TrafficLight, VectorMapGraph

POLYLINE_FEATURES = 12
POLYGON_FEATURES = 10
AGENT_STEP_FEATURES = 9
AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
MISSING = -1.0  # sentinel for absent widths / unreachable distances

TOY_HISTORY = 10
TOY_CONTEXT_POINTS = 10


class PolicyKind(enum.Enum):
    CONTEXT_ONLY = "context_only"  # future trajectory from context alone
    BC = "bc"  # ego history + context -> next displacement
    BC_PERTURB = "bc_perturb"  # BC with jitter augmentation, 10-step output


@dataclass(frozen=True)
class ObservationLimits:
    max_polylines: int = 30
    max_polygons: int = 20
    max_agents: int = 30
    map_radius: float = 35.0
    agent_radius: float = 50.0
    max_vectors_per_polyline: int = 32
    polygon_vectors: int = 20
    agent_steps: int = 3  # past 2 + current


@dataclass(frozen=True)
class AgentState:
    """One agent's pose at the current and recent steps (oldest first)."""

    agent_id: str
    kind: str
    length: float
    width: float
    poses: np.ndarray  # (agent_steps, 3) global

    def __post_init__(self):
        object.__setattr__(self, "poses", np.asarray(self.poses, dtype=np.float64))


@dataclass(frozen=True)
class SceneState:
    """Everything observable at one time step, in global coordinates."""

    graph: VectorMapGraph
    goal_point: tuple
    goal_vector: int | None
    agents: tuple = ()
    ego_history: np.ndarray | None = None  # (N, 3), newest last
    dt: float = 1.0


@dataclass(frozen=True)
class ObservationFrame:
    """Fixed-size, masked, frame-local feature tensors for one step."""

    polyline_features: np.ndarray  # (P, V, POLYLINE_FEATURES)
    polyline_vector_mask: np.ndarray  # (P, V) bool
    polygon_features: np.ndarray  # (G, Vp, POLYGON_FEATURES)
    polygon_vector_mask: np.ndarray  # (G, Vp) bool
    agent_features: np.ndarray  # (A, S, AGENT_STEP_FEATURES)
    agent_mask: np.ndarray  # (A,) bool
    goal: np.ndarray  # (2,)
    frame: Frame
    ego_history: np.ndarray | None = None  # (N, 3) frame-local, BC kinds only

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (
            self.polyline_features,
            self.polyline_vector_mask,
            self.polygon_features,
            self.polygon_vector_mask,
            self.agent_features,
            self.agent_mask,
            self.goal,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.ego_history is not None:
            h.update(np.ascontiguousarray(self.ego_history).tobytes())
        return h.hexdigest()


def _traffic_light_onehot(state: TrafficLight) -> tuple:
    return (
        1.0 if state is TrafficLight.NONE else 0.0,
        1.0 if state is TrafficLight.RED else 0.0,
        1.0 if state is TrafficLight.GREEN else 0.0,
    )


def _polygon_kind_onehot(kind: PolygonKind) -> tuple:
    return tuple(1.0 if kind is k else 0.0 for k in PolygonKind)


def _agent_type_onehot(kind: str) -> tuple:
    return tuple(1.0 if kind == k else 0.0 for k in AGENT_TYPES)


def assemble_observation(
    scene: SceneState,
    frame: Frame,
    kind: PolicyKind = PolicyKind.CONTEXT_ONLY,
    limits: ObservationLimits = ObservationLimits(),
) -> ObservationFrame:
    """Select neighborhoods, express them in the frame, pad and mask.

    Padding rows are exact zeros and the masks mark precisely the real rows.
    The ego track is never written into the observation for the
    context-only kind; for the BC kinds it is attached in frame coordinates.
    """
    hood: Neighborhood = scene.graph.query_neighborhood(
        frame.origin,
        goal_vector=scene.goal_vector,
        limits=_neighborhood_limits(limits),
    )

    P, V = limits.max_polylines, limits.max_vectors_per_polyline
    pl_feat = np.zeros((P, V, POLYLINE_FEATURES))
    pl_mask = np.zeros((P, V), dtype=bool)
    starts = scene.graph.start_points()
    for i, selected in enumerate(hood.polylines[:P]):
        for j, vec in enumerate(selected.vectors[:V]):
            s = frame.to_frame(vec.start)
            e = frame.to_frame(vec.end)
            d_goal = vec.dist_to_goal
            if d_goal is None or not np.isfinite(d_goal):
                d_goal = MISSING
            d_left = _neighbor_distance(vec.left_neighbor, vec, starts)
            d_right = _neighbor_distance(vec.right_neighbor, vec, starts)
            width = MISSING if vec.lane_width is None else vec.lane_width
            pl_feat[i, j] = (
                s[0],
                s[1],
                e[0],
                e[1],
                float(vec.sequence_order),
                width,
                *_traffic_light_onehot(vec.traffic_light),
                d_goal,
                d_left,
                d_right,
            )
            pl_mask[i, j] = True

    G, Vp = limits.max_polygons, limits.polygon_vectors
    pg_feat = np.zeros((G, Vp, POLYGON_FEATURES))
    pg_mask = np.zeros((G, Vp), dtype=bool)
    for i, selected in enumerate(hood.polygons[:G]):
        onehot = _polygon_kind_onehot(selected.kind)
        for j, vec in enumerate(selected.vectors[:Vp]):
            s = frame.to_frame(vec.start)
            e = frame.to_frame(vec.end)
            pg_feat[i, j] = (s[0], s[1], e[0], e[1], float(vec.sequence_order), *onehot)
            pg_mask[i, j] = True

    A, S = limits.max_agents, limits.agent_steps
    ag_feat = np.zeros((A, S, AGENT_STEP_FEATURES))
    ag_mask = np.zeros(A, dtype=bool)
    origin = np.asarray(frame.origin)
    in_range = [
        (float(np.linalg.norm(ag.poses[-1, :2] - origin)), idx, ag)
        for idx, ag in enumerate(scene.agents)
        if np.linalg.norm(ag.poses[-1, :2] - origin) <= limits.agent_radius
    ]
    in_range.sort(key=lambda item: (item[0], item[1]))
    for i, (_, _, ag) in enumerate(in_range[:A]):
        steps = ag.poses[-S:]
        offset = S - steps.shape[0]
        for j, pose in enumerate(steps):
            local = frame.to_frame(pose[:2])
            yaw = frame.heading_to_frame(pose[2])
            rel_time = (offset + j - (S - 1)) * scene.dt
            ag_feat[i, offset + j] = (
                local[0],
                local[1],
                float(yaw),
                ag.length,
                ag.width,
                *_agent_type_onehot(ag.kind),
                rel_time,
            )
        ag_mask[i] = True

    goal_local = frame.to_frame(scene.goal_point)

    ego_local = None
    if kind is not PolicyKind.CONTEXT_ONLY and scene.ego_history is not None:
        ego_local = np.zeros((scene.ego_history.shape[0], 3))
        ego_local[:, :2] = frame.to_frame(scene.ego_history[:, :2])
        ego_local[:, 2] = frame.heading_to_frame(scene.ego_history[:, 2])

    return ObservationFrame(
        polyline_features=pl_feat,
        polyline_vector_mask=pl_mask,
        polygon_features=pg_feat,
        polygon_vector_mask=pg_mask,
        agent_features=ag_feat,
        agent_mask=ag_mask,
        goal=np.asarray(goal_local, dtype=np.float64),
        frame=frame,
        ego_history=ego_local,
    )


def _neighborhood_limits(limits: ObservationLimits):
    from .mapgraph import NeighborhoodLimits

    return NeighborhoodLimits(
        max_polylines=limits.max_polylines,
        max_polygons=limits.max_polygons,
        radius=limits.map_radius,
    )


def _neighbor_distance(neighbor_id, vec, starts) -> float:
    if neighbor_id is None:
        return MISSING
    return float(np.linalg.norm(starts[neighbor_id] - np.asarray(vec.start)))


@dataclass(frozen=True)
class PosePrediction:
    """Per-history-step future pose predictions, shape (H, T, 3).

    Index h counts backwards in time: h = 0 is the prediction made at the
    current step, h = 1 the prediction made history_interval steps ago, ...
    Each row is expressed in that step's own frame.
    """

    poses: np.ndarray

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=np.float64)
        if poses.ndim != 3 or poses.shape[2] != 3:
            raise ValueError("predictions must have shape (H, T, 3)")
        object.__setattr__(self, "poses", poses)

    @property
    def current(self) -> np.ndarray:
        """The T-step plan from the current step's frame."""
        return self.poses[0]


class ContextPolicyNetwork(nn.Module):
    """Spatial encoder -> causal temporal encoder -> pose decoder."""

    def __init__(self, config: nn.NetworkConfig, rng: np.random.Generator, limits: ObservationLimits = ObservationLimits()):
        d = config.hidden_size
        self.config = config
        self.limits = limits
        self.poly_proj = nn.Dense(POLYLINE_FEATURES, d, rng)
        self.polygon_proj = nn.Dense(POLYGON_FEATURES, d, rng)
        self.local_encoder = nn.TransformerEncoder(d, config.heads, config.local_layers, config.dropout_rate, rng)
        self.agent_mlp = nn.MLP([limits.agent_steps * AGENT_STEP_FEATURES, d, d], rng)
        self.goal_mlp = nn.MLP([2, d, d], rng)
        self.global_encoder = nn.TransformerEncoder(d, config.heads, config.global_layers, config.dropout_rate, rng)
        self.temporal_encoder = nn.TransformerEncoder(d, config.heads, config.causal_layers, config.dropout_rate, rng)
        self.step_embedding = nn.Embedding(config.history_len, d, rng)
        self.decoder = nn.Dense(d, config.future_len * 3, rng)

    def _spatial(self, obs: ObservationFrame, rng) -> nn.Tensor:
        """One observation -> one feature vector (the goal token)."""
        d = self.config.hidden_size

        poly_tokens = self._group_tokens(
            self.poly_proj, obs.polyline_features, obs.polyline_vector_mask, rng
        )
        polygon_tokens = self._group_tokens(
            self.polygon_proj, obs.polygon_features, obs.polygon_vector_mask, rng
        )
        agents = nn.reshape(
            nn.constant(obs.agent_features), (obs.agent_features.shape[0], -1)
        )
        agent_tokens = self.agent_mlp(agents)
        goal_token = self.goal_mlp(nn.constant(obs.goal.reshape(1, 2)))

        tokens = nn.concat([goal_token, agent_tokens, poly_tokens, polygon_tokens], axis=0)
        token_mask = np.concatenate(
            [
                [True],
                obs.agent_mask,
                obs.polyline_vector_mask.any(axis=1),
                obs.polygon_vector_mask.any(axis=1),
            ]
        )
        encoded = self.global_encoder(
            nn.reshape(tokens, (1, tokens.shape[0], d)), key_mask=token_mask[None, :], rng=rng
        )
        return nn.take_rows(nn.reshape(encoded, (tokens.shape[0], d)), [0])  # (1, d)

    def _group_tokens(self, proj, features, mask, rng) -> nn.Tensor:
        """(G, V, F) vector groups -> (G, d) pooled tokens; empty groups -> 0."""
        g, v, f = features.shape
        h = proj(nn.constant(features.reshape(g * v, f)))
        h = nn.reshape(h, (g, v, self.config.hidden_size))
        h = self.local_encoder(h, key_mask=mask, rng=rng)
        return nn.masked_max(h, mask[..., None], axis=-2, allow_empty=True)

    def forward(self, observations, rng=None) -> nn.Tensor:
        """Observations oldest -> newest; returns (H, T, 3) indexed by age h."""
        H = self.config.history_len
        if len(observations) != H:
            raise ValueError(f"expected {H} observations, got {len(observations)}")
        feats = nn.concat([self._spatial(o, rng) for o in observations], axis=0)  # (H, d)
        feats = nn.add(feats, self.step_embedding(np.arange(H)))
        encoded = self.temporal_encoder(
            nn.reshape(feats, (1, H, self.config.hidden_size)), causal=True, rng=rng
        )
        decoded = self.decoder(nn.reshape(encoded, (H, self.config.hidden_size)))
        # sequence runs oldest -> newest; report newest first so index 0 is "now"
        decoded = nn.take_rows(decoded, np.arange(H - 1, -1, -1))
        return nn.reshape(decoded, (H, self.config.future_len, 3))

    def predict(self, observations) -> PosePrediction:
        self.set_training(False)
        return PosePrediction(self.forward(observations).value)


class ToyMlpPolicy(nn.Module):
    """Small MLP policy for the ring road, one instance per policy kind.

    Inputs (frame-local, float64):
      context_only: the nearest TOY_CONTEXT_POINTS lane points at each of
        TOY_HISTORY past steps, each step in its own perturbed
        center-oriented frame -> (H * P * 2,). Output: next pose relative to
        the current step's frame.
      bc / bc_perturb: the ego poses of the past TOY_HISTORY steps in the
        current ego frame plus the TOY_CONTEXT_POINTS nearest lane points
        -> (H * 3 + P * 2,). Output: next pose in the ego frame (bc) or the
        next 10 poses (bc_perturb).
    """

    def __init__(self, kind: PolicyKind, config: nn.NetworkConfig, rng: np.random.Generator):
        self.kind = kind
        self.config = config
        sizes = [toy_input_dim(kind)] + [config.toy_hidden] * (config.toy_layers - 1) + [toy_output_dim(kind)]
        self.mlp = nn.MLP(sizes, rng)

    def forward(self, features) -> nn.Tensor:
        return self.mlp(features)

    def predict(self, features: np.ndarray) -> np.ndarray:
        out = self.mlp(nn.constant(np.atleast_2d(features))).value
        return out[0] if np.ndim(features) == 1 else out


def toy_input_dim(kind: PolicyKind) -> int:
    if kind is PolicyKind.CONTEXT_ONLY:
        return TOY_HISTORY * TOY_CONTEXT_POINTS * 2
    return TOY_HISTORY * 3 + TOY_CONTEXT_POINTS * 2


def toy_output_dim(kind: PolicyKind) -> int:
    return 30 if kind is PolicyKind.BC_PERTURB else 3


def nearest_lane_points(lane_points: np.ndarray, origin, count: int = TOY_CONTEXT_POINTS) -> np.ndarray:
    """The `count` lane points nearest to origin, closest first (ties by index)."""
    d = np.linalg.norm(lane_points - np.asarray(origin, dtype=np.float64), axis=1)
    order = np.lexsort((np.arange(len(d)), d))[:count]
    return lane_points[order]


def toy_context_features(
    lane_points: np.ndarray,
    history_positions: np.ndarray,
    anchor,
    frame_spec: FrameSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, Frame]:
    """Context-only toy input: per-step perturbed frames over lane points.

    history_positions: (TOY_HISTORY, 2) ego positions, oldest first. Returns
    the flattened features and the current (newest) step's frame, which the
    prediction is expressed in.
    """
    if history_positions.shape != (TOY_HISTORY, 2):
        raise ValueError(f"expected ({TOY_HISTORY}, 2) history, got {history_positions.shape}")
    frames = frame_per_history_step(frame_spec, history_positions, anchor, rng)
    feats = np.empty((TOY_HISTORY, TOY_CONTEXT_POINTS, 2))
    for i, f in enumerate(frames):
        feats[i] = f.to_frame(nearest_lane_points(lane_points, f.origin))
    return feats.reshape(-1), frames[-1]


def toy_bc_features(lane_points: np.ndarray, history_poses: np.ndarray) -> tuple[np.ndarray, Frame]:
    """BC toy input: ego history plus lane points in the current ego frame."""
    if history_poses.shape != (TOY_HISTORY, 3):
        raise ValueError(f"expected ({TOY_HISTORY}, 3) history, got {history_poses.shape}")
    current = Pose2(*history_poses[-1])
    frame = Frame(origin=tuple(current.position), x_axis=tuple(current.direction()))
    ego = np.zeros((TOY_HISTORY, 3))
    ego[:, :2] = frame.to_frame(history_poses[:, :2])
    ego[:, 2] = frame.heading_to_frame(history_poses[:, 2])
    ctx = frame.to_frame(nearest_lane_points(lane_points, current.position))
    return np.concatenate([ego.reshape(-1), ctx.reshape(-1)]), frame


def toy_decode_step(prediction: np.ndarray, frame: Frame) -> Pose2:
    """Relative (dx, dy, dyaw) in `frame` -> the next global pose."""
    pos = frame.from_frame(prediction[:2])
    return Pose2(pos[0], pos[1], frame.heading_from_frame(prediction[2]))
