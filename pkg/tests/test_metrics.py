import numpy as np
import pytest

from drivelab.frames import make_rng
from drivelab.geometry import Pose2, Trajectory, transform_from_frame
from drivelab.mapgraph import MapData, PolylineSpec
from drivelab.metrics import (
    DatasetReport,
    SceneMetrics,
    aggregate,
    collision,
    discomfort,
    evaluate_scene,
    fraction_above,
    l2,
    max_radial_deviation,
    off_road,
    off_route,
    write_scene_csv,
)
from drivelab.sim import (
    AgentTrack,
    OraclePlanner,
    RolloutRecord,
    ScenarioLog,
    make_corridor_scenario,
    make_ring_scenario,
    run_log_replay,
)


def _straight_log(n=20, agents=()):
    poses = [Pose2(float(k), 0.0, 0.0) for k in range(n)]
    data = MapData(polylines=(PolylineSpec("lane", [(-5.0, 0.0), (n + 5.0, 0.0)]),))
    return ScenarioLog(
        map_data=data,
        ego=Trajectory(poses, 1.0),
        goal=(n + 5.0, 0.0),
        agents=agents,
        frequency=1.0,
        map_interval=3.0,
    )


def _record(traj, log, kind="test"):
    return RolloutRecord(
        executed=traj,
        plans=(),
        observation_digests=(),
        seed=0,
        policy_kind=kind,
        start_step=0,
        agents=log.agents,
    )


def _offset_traj(log, dy):
    return Trajectory([Pose2(p.x, p.y + dy, p.heading) for p in log.ego.poses], log.ego.dt)


def test_collision_no_agents():
    log = _straight_log()
    assert collision(_record(log.ego, log), log) is False


def test_collision_single_step_counts():
    n = 20
    still = [Pose2(100.0, 100.0, 0.0)] * n
    still[17] = Pose2(17.0, 0.5, 0.0)  # overlaps the ego box at step 17 only
    agent = AgentTrack("a", "vehicle", 4.0, 2.0, Trajectory(still, 1.0))
    log = _straight_log(n, agents=(agent,))
    assert collision(_record(log.ego, log), log) is True


def test_collision_touching_edges_count():
    n = 5
    # ego box is 4.87 x 1.85 around y=0; agent box edge exactly touches
    y_touch = 1.85 / 2.0 + 1.0  # agent half-width 1.0
    agent = AgentTrack("a", "vehicle", 4.0, 2.0, Trajectory([Pose2(2.0, y_touch, 0.0)] * n, 1.0))
    log = _straight_log(n, agents=(agent,))
    assert collision(_record(log.ego, log), log) is True


def test_off_road_thresholds():
    log = _straight_log()
    assert off_road(_record(log.ego, log), log) is False
    assert off_road(_record(_offset_traj(log, 2.5), log), log) is True
    assert off_road(_record(_offset_traj(log, 1.9), log), log) is False


def test_discomfort_uniform_motion():
    log = _straight_log()
    assert discomfort(_record(log.ego, log)) == 0.0


def test_discomfort_counting_rule():
    assert fraction_above([0.0, 4.0, 0.0], 3.0) == pytest.approx(1.0 / 3.0)
    assert fraction_above([3.0, 3.0], 3.0) == 0.0  # boundary not counted


def test_discomfort_needs_three_steps():
    log = _straight_log()
    short = Trajectory(log.ego.poses[:2], 1.0)
    with pytest.raises(ValueError):
        discomfort(_record(short, log))


def test_discomfort_invariant_to_constant_velocity():
    rng = make_rng(70)
    xs = np.cumsum(rng.uniform(-1.0, 3.0, size=30))
    log = _straight_log(30)
    a = Trajectory([Pose2(x, 0.0, 0.0) for x in xs], 1.0)
    b = Trajectory([Pose2(x + 5.0 * k, 0.0, 0.0) for k, x in enumerate(xs)], 1.0)
    assert discomfort(_record(a, log)) == pytest.approx(discomfort(_record(b, log)))


def test_l2_examples():
    log = _straight_log()
    assert l2(_record(log.ego, log), log) == 0.0
    assert l2(_record(_offset_traj(log, 1.0), log), log) == pytest.approx(1.0)
    poses = [Pose2(p.x, p.y + dy, 0.0) for p, dy in zip(log.ego.poses[:3], [0.0, 1.0, 2.0])]
    with pytest.warns(UserWarning):
        val = l2(_record(Trajectory(poses, 1.0), log), log)
    assert val == pytest.approx(1.0)


def test_radial_deviation_and_off_route():
    log = make_ring_scenario(50.0, steps=20)
    rec = run_log_replay(log, OraclePlanner(horizon=1), use_lqr=False, seed=0)
    assert max_radial_deviation(rec, 50.0) < 1e-9
    assert off_route(rec, 50.0) is False
    shifted = Trajectory([Pose2(p.x + 3.0, p.y, p.heading) for p in rec.executed.poses], rec.executed.dt)
    assert off_route(_record(shifted, log), 50.0) is True


def test_aggregate_rates_and_seed_stats():
    clean = SceneMetrics(False, False, 0.0, 0.0)
    hit = SceneMetrics(True, False, 0.0, 0.0)
    report = aggregate({0: [clean, clean, clean, hit]})
    assert report.collision_mean == pytest.approx(25.0)
    assert report.collision_std == 0.0

    def seed_with_rate(pct, n=100):
        k = round(pct / 100.0 * n)
        return [hit] * k + [clean] * (n - k)

    report = aggregate({0: seed_with_rate(2), 1: seed_with_rate(3), 2: seed_with_rate(4)})
    assert report.collision_mean == pytest.approx(3.0)
    assert report.collision_std == pytest.approx(1.0)
    assert report.n_seeds == 3 and report.n_scenes == 300


def test_aggregate_all_clean():
    clean = SceneMetrics(False, False, 0.0, 0.0)
    report = aggregate({0: [clean] * 5})
    assert report.collision_mean == 0.0
    assert report.off_road_mean == 0.0
    assert report.discomfort_mean == 0.0


def test_aggregate_validation():
    with pytest.raises(ValueError):
        aggregate({})
    with pytest.raises(ValueError):
        aggregate({0: []})


def test_metrics_invariant_under_rigid_transform():
    rng = make_rng(71)
    log = make_corridor_scenario(rng, n_agents=2, duration=2.0)
    noisy = run_log_replay(
        log,
        OraclePlanner(horizon=4),
        use_lqr=False,
        seed=0,
    )
    # jitter the executed trajectory so the metrics are nontrivial
    jitter = rng.normal(0.0, 0.7, size=(len(noisy.executed), 2))
    executed = Trajectory(
        [Pose2(p.x + j[0], p.y + j[1], p.heading) for p, j in zip(noisy.executed.poses, jitter)],
        noisy.executed.dt,
    )
    base = evaluate_scene(_record(executed, log), log)

    angle, shift = 1.1, np.array([37.0, -12.0])
    axis = np.array([np.cos(angle), np.sin(angle)])

    def move_pose(p):
        q = transform_from_frame(p.position, shift, axis)
        return Pose2(q[0], q[1], p.heading + angle)

    def move_traj(t):
        return Trajectory([move_pose(p) for p in t.poses], t.dt)

    moved_log = ScenarioLog(
        map_data=log.map_data,  # metrics below never read the map
        ego=move_traj(log.ego),
        goal=tuple(transform_from_frame(log.goal, shift, axis)),
        agents=tuple(
            AgentTrack(a.agent_id, a.kind, a.length, a.width, move_traj(a.trajectory))
            for a in log.agents
        ),
        frequency=log.frequency,
        map_interval=log.map_interval,
    )
    moved = evaluate_scene(_record(move_traj(executed), moved_log), moved_log)
    assert moved.collided == base.collided
    assert moved.off_road == base.off_road
    assert moved.discomfort_rate == pytest.approx(base.discomfort_rate, abs=1e-12)
    assert moved.l2_error == pytest.approx(base.l2_error, abs=1e-9)


def test_scene_csv(tmp_path):
    scenes = [SceneMetrics(False, True, 0.25, 1.5, 0.4), SceneMetrics(True, False, 0.0, 0.1)]
    path = tmp_path / "scenes.csv"
    write_scene_csv(path, scenes)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("scene,")


def test_report_json():
    clean = SceneMetrics(False, False, 0.0, 0.0)
    doc = aggregate({0: [clean]}).to_json()
    assert set(doc) == {"n_seeds", "n_scenes", "collision_pct", "off_road_pct", "discomfort_pct", "l2_m"}
