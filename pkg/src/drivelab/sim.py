"""Closed-loop execution: the log-replay simulator and the ring-road toy.

In log replay, the ego advances one step along its freshly planned
trajectory each tick while every other agent replays its recorded track
verbatim. Rollouts are deterministic given (log, policy parameters, seed)
and never terminate early on collisions; the metrics module flags those
afterwards.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .frames import FrameKind, FrameSpec, frame_per_history_step, make_rng
from .geometry import Pose2, Trajectory, normalize_angle
from .lqr import LqrProblem, LqrWeights, prepare_initial_state, solve
from .mapgraph import MapData, VectorMapGraph, build_graph, map_from_json, map_to_json, ring_map
from .policy import (
    TOY_HISTORY,
    AgentState,
    ContextPolicyNetwork,
    ObservationLimits,
    PolicyKind,
    SceneState,
    ToyMlpPolicy,
    assemble_observation,
    toy_bc_features,
    toy_context_features,
    toy_decode_step,
)


class PlannerError(RuntimeError):
    """Raised by a planner when it cannot produce a plan mid-scene."""


@dataclass(frozen=True)
class AgentTrack:
    agent_id: str
    kind: str  # vehicle | pedestrian | cyclist
    length: float
    width: float
    trajectory: Trajectory


@dataclass(frozen=True)
class ScenarioLog:
    """Recorded scene: map, ego ground truth, agent tracks, and the goal."""

    map_data: MapData
    ego: Trajectory
    goal: tuple
    agents: tuple = ()
    frequency: float = 10.0
    map_interval: float = 3.0
    ego_length: float = 4.87
    ego_width: float = 1.85

    def __post_init__(self):
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        object.__setattr__(self, "agents", tuple(self.agents))
        if abs(self.ego.dt - 1.0 / self.frequency) > 1e-12:
            raise ValueError("ego trajectory dt must equal 1/frequency")
        for agent in self.agents:
            if len(agent.trajectory) != len(self.ego) or agent.trajectory.dt != self.ego.dt:
                raise ValueError("agent tracks must share the ego time base")

    @property
    def n_steps(self) -> int:
        return len(self.ego) - 1

    @property
    def duration(self) -> float:
        return self.n_steps / self.frequency

    def build_graph(self) -> VectorMapGraph:
        return build_graph(self.map_data.polylines, self.map_data.polygons, interval=self.map_interval)


@dataclass(frozen=True)
class RolloutRecord:
    executed: Trajectory
    plans: tuple  # per planned step: (T, 3) global target/plan poses
    observation_digests: tuple
    seed: int
    policy_kind: str
    start_step: int
    agents: tuple  # replayed agent tracks, bitwise equal to the log's
    truncated_reason: str | None = None


# ---------------------------------------------------------------------------
# Planners.


class OraclePlanner:
    """Plans the recorded ground-truth future; the identity roll-out."""

    kind = "oracle"

    def __init__(self, horizon: int = 10):
        self.horizon = horizon
        self.min_history = 1

    def plan(self, log, graph, executed, step, rng):
        future = []
        for k in range(1, self.horizon + 1):
            idx = min(step + k, len(log.ego) - 1)
            future.append(log.ego.poses[idx].as_array())
        targets = np.asarray(future)
        digest = hashlib.sha256(targets.tobytes()).hexdigest()
        return targets, digest


class NoisyOraclePlanner(OraclePlanner):
    """Ground-truth future with i.i.d. positional noise; a jagged predictor."""

    kind = "noisy_oracle"

    def __init__(self, horizon: int = 10, noise_std: float = 0.3):
        super().__init__(horizon)
        self.noise_std = noise_std

    def plan(self, log, graph, executed, step, rng):
        targets, _ = super().plan(log, graph, executed, step, rng)
        targets = targets.copy()
        targets[:, :2] += rng.normal(0.0, self.noise_std, size=(targets.shape[0], 2))
        digest = hashlib.sha256(targets.tobytes()).hexdigest()
        return targets, digest


class ToyPlanner:
    """Drives a toy MLP policy of any kind on the ring road."""

    def __init__(self, policy: ToyMlpPolicy, frame_spec: FrameSpec | None = None):
        self.policy = policy
        self.kind = policy.kind.value
        self.frame_spec = frame_spec or FrameSpec(
            kind=FrameKind.EGO_PERTURBED_CENTER_ORIENTED, perturb_std=1.0
        )
        self.horizon = 10 if policy.kind is PolicyKind.BC_PERTURB else 1
        self.min_history = TOY_HISTORY

    def plan(self, log, graph, executed, step, rng):
        history = np.asarray([p.as_array() for p in executed[-TOY_HISTORY:]])
        lane_points = graph.start_points()
        if self.policy.kind is PolicyKind.CONTEXT_ONLY:
            feats, frame = toy_context_features(
                lane_points, history[:, :2], log.goal, self.frame_spec, rng
            )
        else:
            feats, frame = toy_bc_features(lane_points, history)
        out = self.policy.predict(feats)
        if not np.all(np.isfinite(out)):
            raise PlannerError("non-finite policy output")
        steps = out.reshape(-1, 3)
        targets = np.asarray([toy_decode_step(row, frame).as_array() for row in steps])
        digest = hashlib.sha256(feats.tobytes()).hexdigest()
        return targets, digest


def history_observations(
    log,
    graph,
    executed,
    step: int,
    history_len: int,
    history_interval: int,
    frame_spec: FrameSpec,
    limits: ObservationLimits = ObservationLimits(),
    rng: np.random.Generator | None = None,
) -> list:
    """Assemble one observation per history step (oldest first).

    History step j observes the scene at executed index
    step - (history_len - 1 - j) * history_interval, in its own
    independently perturbed frame. Agents come from the log (they replay)
    while the ego positions anchoring the frames come from `executed`.
    """
    idxs = [step - (history_len - 1 - j) * history_interval for j in range(history_len)]
    if idxs[0] < 0:
        raise ValueError(f"step {step} lacks {history_len}x{history_interval} history")
    positions = np.asarray([executed[i].position for i in idxs])
    frames = frame_per_history_step(frame_spec, positions, log.goal, rng)
    goal_vector = graph.nearest_vector(log.goal) if len(graph) else None
    obs = []
    for i, frame in zip(idxs, frames):
        agents = tuple(
            AgentState(
                agent_id=a.agent_id,
                kind=a.kind,
                length=a.length,
                width=a.width,
                poses=np.asarray(
                    [
                        a.trajectory.poses[max(0, i - k)].as_array()
                        for k in range(limits.agent_steps - 1, -1, -1)
                    ]
                ),
            )
            for a in log.agents
        )
        scene = SceneState(
            graph=graph,
            goal_point=log.goal,
            goal_vector=goal_vector,
            agents=agents,
            ego_history=None,
            dt=log.ego.dt,
        )
        obs.append(assemble_observation(scene, frame, kind=PolicyKind.CONTEXT_ONLY, limits=limits))
    return obs


class ContextPolicyPlanner:
    """Full pipeline: per-step perturbed frames, observation assembly,
    spatial-temporal network, current-step plan decoded back to global."""

    def __init__(
        self,
        network: ContextPolicyNetwork,
        frame_spec: FrameSpec,
        limits: ObservationLimits = ObservationLimits(),
    ):
        self.network = network
        self.frame_spec = frame_spec
        self.limits = limits
        self.kind = PolicyKind.CONTEXT_ONLY.value
        cfg = network.config
        self.horizon = cfg.future_len
        self.min_history = (cfg.history_len - 1) * cfg.history_interval + 1

    def observations(self, log, graph, executed, step, rng):
        cfg = self.network.config
        return history_observations(
            log,
            graph,
            executed,
            step,
            cfg.history_len,
            cfg.history_interval,
            self.frame_spec,
            self.limits,
            rng,
        )

    def plan(self, log, graph, executed, step, rng):
        obs = self.observations(log, graph, executed, step, rng)
        prediction = self.network.predict(obs)
        current = prediction.current  # (T, 3) in the newest frame
        frame = obs[-1].frame
        targets = np.zeros_like(current)
        targets[:, :2] = frame.from_frame(current[:, :2])
        targets[:, 2] = frame.heading_from_frame(current[:, 2])
        if not np.all(np.isfinite(targets)):
            raise PlannerError("non-finite policy output")
        digest = hashlib.sha256("".join(o.digest() for o in obs).encode()).hexdigest()
        return targets, digest


# ---------------------------------------------------------------------------
# Execution engines.


def run_log_replay(
    log: ScenarioLog,
    planner,
    use_lqr: bool = True,
    seed: int = 0,
    lqr_weights: LqrWeights = LqrWeights(),
    rng: np.random.Generator | None = None,
    graph: VectorMapGraph | None = None,
) -> RolloutRecord:
    """Close the loop: plan, advance one step, replay agents, repeat."""
    if rng is None:
        rng = make_rng(seed)
    if graph is None:
        graph = log.build_graph()
    total = len(log.ego)
    warmup = max(planner.min_history, 2 if use_lqr else 1)
    if total <= warmup:
        raise ValueError(f"scenario too short: {total} poses, planner needs {warmup}")
    executed = list(log.ego.poses[:warmup])
    plans: list[np.ndarray] = []
    digests: list[str] = []
    truncated = None
    dt = log.ego.dt

    while len(executed) < total:
        step = len(executed) - 1
        try:
            targets, digest = planner.plan(log, graph, executed, step, rng)
        except PlannerError as err:
            truncated = str(err)
            break
        if use_lqr:
            history = Trajectory(executed[-3:], dt) if len(executed) >= 3 else Trajectory(executed[-2:], dt)
            p0, v0, a0 = prepare_initial_state(history)
            problem = LqrProblem(
                dt=dt,
                initial_pose=tuple(p0),
                initial_velocity=tuple(v0),
                initial_acceleration=tuple(a0),
                targets=targets,
                weights=lqr_weights,
            )
            plan_poses = solve(problem).poses
        else:
            plan_poses = targets
        executed.append(Pose2(*plan_poses[0]))
        plans.append(plan_poses)
        digests.append(digest)

    return RolloutRecord(
        executed=Trajectory(executed, dt),
        plans=tuple(plans),
        observation_digests=tuple(digests),
        seed=seed,
        policy_kind=planner.kind,
        start_step=warmup - 1,
        agents=log.agents,
        truncated_reason=truncated,
    )


def make_ring_scenario(
    radius: float,
    steps: int = 100,
    rng: np.random.Generator | None = None,
    start_angle: float | None = None,
    frequency: float = 1.0,
    map_interval: float = 1.0,
) -> ScenarioLog:
    """Ego circles counterclockwise at 1 m/s; one lane-point loop, no agents.

    The goal is the ring center, which anchors the toy frame's x-axis.
    `steps` counts transitions, so the log holds steps + 1 poses.
    """
    if not 10.0 <= radius <= 100.0:
        raise ValueError("ring radius must lie in [10, 100] m")
    if start_angle is None:
        start_angle = float(rng.uniform(0.0, 2.0 * np.pi)) if rng is not None else 0.0
    dt = 1.0 / frequency
    angle_step = 1.0 * dt / radius  # 1 m/s along the arc
    angles = start_angle + angle_step * np.arange(steps + 1)
    poses = [
        Pose2(radius * np.cos(a), radius * np.sin(a), normalize_angle(a + np.pi / 2.0))
        for a in angles
    ]
    return ScenarioLog(
        map_data=ring_map(radius, interval=map_interval),
        ego=Trajectory(poses, dt),
        goal=(0.0, 0.0),
        agents=(),
        frequency=frequency,
        map_interval=map_interval,
    )


def make_corridor_scenario(
    rng: np.random.Generator,
    length: float = 150.0,
    n_agents: int = 3,
    frequency: float = 10.0,
    duration: float = 4.0,
    speed: float = 8.0,
) -> ScenarioLog:
    """Straight two-lane drive with parked/slow agents on the other lane."""
    from .mapgraph import corridor_map

    dt = 1.0 / frequency
    n = int(round(duration * frequency))
    x0 = float(rng.uniform(2.0, 10.0))
    xs = x0 + speed * dt * np.arange(n + 1)
    ego = Trajectory([Pose2(x, 0.0, 0.0) for x in xs], dt)
    agents = []
    for i in range(n_agents):
        ax = float(rng.uniform(5.0, length - 5.0))
        moving = bool(rng.random() < 0.5)
        v = float(rng.uniform(1.0, 4.0)) if moving else 0.0
        track = Trajectory([Pose2(ax + v * dt * k, 3.5, 0.0) for k in range(n + 1)], dt)
        agents.append(
            AgentTrack(agent_id=f"agent{i}", kind="vehicle", length=4.5, width=1.9, trajectory=track)
        )
    return ScenarioLog(
        map_data=corridor_map(length, n_lanes=2, with_crosswalk=True),
        ego=ego,
        goal=(length, 0.0),
        agents=tuple(agents),
        frequency=frequency,
        map_interval=3.0,
    )


def run_toy_rollout(
    policy: ToyMlpPolicy,
    radius: float = 50.0,
    steps: int = 100,
    seed: int = 0,
    frame_spec: FrameSpec | None = None,
) -> tuple[ScenarioLog, RolloutRecord]:
    """Closed-loop unroll on the ring from a random start, no smoother.

    The log carries TOY_HISTORY - 1 extra warm-up transitions so the policy
    has a full history window at the random starting point.
    """
    rng = make_rng(seed)
    start = float(rng.uniform(0.0, 2.0 * np.pi))
    log = make_ring_scenario(radius, steps=steps + TOY_HISTORY - 1, start_angle=start)
    planner = ToyPlanner(policy, frame_spec)
    record = run_log_replay(log, planner, use_lqr=False, seed=seed, rng=rng)
    return log, record


# ---------------------------------------------------------------------------
# Serialization: scenario JSON-lines and rollout JSON/CSV.


def _trajectory_to_json(traj: Trajectory) -> dict:
    return {"dt": traj.dt, "poses": traj.as_array().tolist()}


def _trajectory_from_json(doc: dict) -> Trajectory:
    return Trajectory.from_array(np.asarray(doc["poses"], dtype=np.float64), float(doc["dt"]))


def scenario_to_json(log: ScenarioLog) -> dict:
    return {
        "map": map_to_json(log.map_data),
        "map_interval": log.map_interval,
        "ego": _trajectory_to_json(log.ego),
        "goal": list(log.goal),
        "agents": [
            {
                "id": a.agent_id,
                "kind": a.kind,
                "length": a.length,
                "width": a.width,
                "trajectory": _trajectory_to_json(a.trajectory),
            }
            for a in log.agents
        ],
        "frequency": log.frequency,
        "ego_length": log.ego_length,
        "ego_width": log.ego_width,
    }


def scenario_from_json(doc: dict) -> ScenarioLog:
    return ScenarioLog(
        map_data=map_from_json(doc["map"]),
        ego=_trajectory_from_json(doc["ego"]),
        goal=tuple(doc["goal"]),
        agents=tuple(
            AgentTrack(
                agent_id=a["id"],
                kind=a["kind"],
                length=float(a["length"]),
                width=float(a["width"]),
                trajectory=_trajectory_from_json(a["trajectory"]),
            )
            for a in doc.get("agents", ())
        ),
        frequency=float(doc["frequency"]),
        map_interval=float(doc.get("map_interval", 3.0)),
        ego_length=float(doc.get("ego_length", 4.87)),
        ego_width=float(doc.get("ego_width", 1.85)),
    )


def save_scenarios(path, logs):
    with open(path, "w") as fh:
        for log in logs:
            fh.write(json.dumps(scenario_to_json(log)) + "\n")


def load_scenarios(path) -> list[ScenarioLog]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(scenario_from_json(json.loads(line)))
    return out


def rollout_to_json(record: RolloutRecord) -> dict:
    return {
        "executed": _trajectory_to_json(record.executed),
        "plans": [p.tolist() for p in record.plans],
        "observation_digests": list(record.observation_digests),
        "seed": record.seed,
        "policy_kind": record.policy_kind,
        "start_step": record.start_step,
        "truncated_reason": record.truncated_reason,
    }


def rollout_from_json(doc: dict, log: ScenarioLog | None = None) -> RolloutRecord:
    return RolloutRecord(
        executed=_trajectory_from_json(doc["executed"]),
        plans=tuple(np.asarray(p, dtype=np.float64) for p in doc["plans"]),
        observation_digests=tuple(doc["observation_digests"]),
        seed=doc["seed"],
        policy_kind=doc["policy_kind"],
        start_step=int(doc["start_step"]),
        agents=() if log is None else log.agents,
        truncated_reason=doc.get("truncated_reason"),
    )


def load_rollout(path, log: ScenarioLog | None = None) -> RolloutRecord:
    with open(path) as fh:
        return rollout_from_json(json.load(fh), log)


def save_rollout(json_path, record: RolloutRecord, csv_path=None):
    with open(json_path, "w") as fh:
        json.dump(rollout_to_json(record), fh)
    if csv_path is not None:
        arr = record.executed.as_array()
        with open(csv_path, "w") as fh:
            fh.write("step,x,y,heading\n")
            for i, row in enumerate(arr):
                fh.write(f"{i},{row[0]!r},{row[1]!r},{row[2]!r}\n")
