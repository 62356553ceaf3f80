import numpy as np
import pytest

from drivelab.frames import Frame, FrameKind, FrameSpec, make_rng
from drivelab.geometry import Pose2, Trajectory, normalize_angle
from drivelab.mapgraph import MapData, build_graph
from drivelab.nn import NetworkConfig
from drivelab.policy import (
    AgentState,
    ContextPolicyNetwork,
    ObservationLimits,
    PolicyKind,
    PosePrediction,
    SceneState,
    ToyMlpPolicy,
    assemble_observation,
    nearest_lane_points,
    toy_bc_features,
    toy_context_features,
    toy_decode_step,
    toy_input_dim,
    toy_output_dim,
)
from drivelab.sim import make_corridor_scenario, make_ring_scenario

TINY = NetworkConfig(
    hidden_size=16,
    heads=2,
    dropout_rate=0.0,
    local_layers=1,
    global_layers=1,
    causal_layers=1,
    history_len=3,
    history_interval=1,
    future_len=2,
    toy_hidden=8,
    toy_layers=2,
)

IDENTITY_FRAME = Frame(origin=(0.0, 0.0), x_axis=(1.0, 0.0))


def _empty_scene():
    graph = build_graph([])
    return SceneState(graph=graph, goal_point=(5.0, 0.0), goal_vector=None)


def test_empty_map_observation_all_masked_goal_present():
    obs = assemble_observation(_empty_scene(), IDENTITY_FRAME)
    assert not obs.polyline_vector_mask.any()
    assert not obs.polygon_vector_mask.any()
    assert not obs.agent_mask.any()
    assert np.all(obs.polyline_features == 0.0)
    assert np.all(obs.polygon_features == 0.0)
    assert np.allclose(obs.goal, [5.0, 0.0])


def test_agent_radius_cut():
    near = AgentState("a", "vehicle", 4.0, 2.0, np.tile([40.0, 0.0, 0.0], (3, 1)))
    far = AgentState("b", "vehicle", 4.0, 2.0, np.tile([60.0, 0.0, 0.0], (3, 1)))
    scene = SceneState(
        graph=build_graph([]), goal_point=(5.0, 0.0), goal_vector=None, agents=(near, far)
    )
    obs = assemble_observation(scene, IDENTITY_FRAME)
    assert obs.agent_mask.sum() == 1
    assert obs.agent_features[0, -1, 0] == pytest.approx(40.0)
    # padded agent rows stay exactly zero
    assert np.all(obs.agent_features[1:] == 0.0)


def test_context_only_ignores_ego_history_field():
    scene = _empty_scene()
    a = assemble_observation(
        SceneState(
            graph=scene.graph,
            goal_point=scene.goal_point,
            goal_vector=None,
            ego_history=np.zeros((4, 3)),
        ),
        IDENTITY_FRAME,
        kind=PolicyKind.CONTEXT_ONLY,
    )
    b = assemble_observation(
        SceneState(
            graph=scene.graph,
            goal_point=scene.goal_point,
            goal_vector=None,
            ego_history=np.ones((4, 3)) * 99.0,
        ),
        IDENTITY_FRAME,
        kind=PolicyKind.CONTEXT_ONLY,
    )
    assert a.ego_history is None and b.ego_history is None
    assert a.digest() == b.digest()
    # the BC kinds do attach it
    c = assemble_observation(
        SceneState(
            graph=scene.graph,
            goal_point=scene.goal_point,
            goal_vector=None,
            ego_history=np.ones((4, 3)),
        ),
        IDENTITY_FRAME,
        kind=PolicyKind.BC,
    )
    assert c.ego_history is not None


def test_masks_mark_exactly_the_written_rows():
    log = make_corridor_scenario(make_rng(33), n_agents=2)
    graph = log.build_graph()
    scene = SceneState(
        graph=graph,
        goal_point=log.goal,
        goal_vector=graph.nearest_vector(log.goal),
        agents=tuple(
            AgentState(a.agent_id, a.kind, a.length, a.width, np.tile(a.trajectory.poses[0].as_array(), (3, 1)))
            for a in log.agents
        ),
        dt=log.ego.dt,
    )
    frame = Frame(origin=(10.0, 0.0), x_axis=(1.0, 0.0))
    obs = assemble_observation(scene, frame)
    # every masked-off row is exactly zero, every masked-on polyline row nonzero somewhere
    assert np.all(obs.polyline_features[~obs.polyline_vector_mask] == 0.0)
    assert np.all(obs.polygon_features[~obs.polygon_vector_mask] == 0.0)
    assert np.all(obs.agent_features[~obs.agent_mask] == 0.0)


def test_assembly_deterministic_at_zero_std():
    log = make_corridor_scenario(make_rng(34), n_agents=1)
    graph = log.build_graph()
    frame = Frame(origin=(12.0, 0.5), x_axis=(0.0, 1.0))
    scene = SceneState(graph=graph, goal_point=log.goal, goal_vector=graph.nearest_vector(log.goal))
    assert assemble_observation(scene, frame).digest() == assemble_observation(scene, frame).digest()


def _tiny_network(seed=0):
    return ContextPolicyNetwork(TINY, make_rng(seed))


def _observations_for(log, seed=1):
    from drivelab.sim import history_observations

    graph = log.build_graph()
    spec = FrameSpec(kind=FrameKind.EGO_PERTURBED_GOAL_ORIENTED, perturb_std=0.0)
    step = (TINY.history_len - 1) * TINY.history_interval
    return history_observations(
        log, graph, list(log.ego.poses), step + 2, TINY.history_len, TINY.history_interval, spec, rng=make_rng(seed)
    )


def test_predict_output_shape():
    log = make_corridor_scenario(make_rng(35), n_agents=2)
    net = _tiny_network()
    pred = net.predict(_observations_for(log))
    assert pred.poses.shape == (TINY.history_len, TINY.future_len, 3)
    assert pred.current.shape == (TINY.future_len, 3)


def test_predict_causal_in_history():
    log = make_corridor_scenario(make_rng(36), n_agents=2)
    net = _tiny_network()
    obs = _observations_for(log)
    base = net.predict(obs).poses
    # perturb the NEWEST observation only; predictions made at older steps
    # (ages h >= 1) must be bitwise unchanged
    bumped = list(obs)
    mutated = np.array(bumped[-1].goal) + 3.0
    from dataclasses import replace

    bumped[-1] = replace(bumped[-1], goal=mutated)
    after = net.predict(bumped).poses
    assert np.array_equal(base[1:], after[1:])
    assert not np.array_equal(base[0], after[0])


def test_predict_rejects_wrong_history_count():
    log = make_corridor_scenario(make_rng(37), n_agents=0)
    net = _tiny_network()
    with pytest.raises(ValueError):
        net.predict(_observations_for(log)[:2])


def test_pose_prediction_validation():
    with pytest.raises(ValueError):
        PosePrediction(np.zeros((2, 3)))


def test_nearest_lane_points_ordering():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    out = nearest_lane_points(pts, (1.2, 0.0), count=2)
    assert np.allclose(out, [[1.0, 0.0], [2.0, 0.0]])
    # exact tie broken by index order
    out = nearest_lane_points(pts, (0.5, 0.0), count=1)
    assert np.allclose(out, [[0.0, 0.0]])


def test_toy_dims():
    assert toy_input_dim(PolicyKind.CONTEXT_ONLY) == 200
    assert toy_input_dim(PolicyKind.BC) == 50
    assert toy_output_dim(PolicyKind.BC) == 3
    assert toy_output_dim(PolicyKind.BC_PERTURB) == 30


def test_toy_context_features_shape_and_frame():
    rng = make_rng(38)
    lane = rng.uniform(-20, 20, size=(50, 2))
    hist = np.linspace([0, 0], [9, 0], 10)
    spec = FrameSpec(kind=FrameKind.EGO_PERTURBED_CENTER_ORIENTED, perturb_std=0.0)
    feats, frame = toy_context_features(lane, hist, (100.0, 0.0), spec, rng)
    assert feats.shape == (200,)
    assert np.allclose(frame.origin, [9.0, 0.0])
    assert np.allclose(frame.x_axis, [1.0, 0.0])


def test_toy_bc_features_current_pose_is_origin():
    rng = make_rng(39)
    lane = rng.uniform(-20, 20, size=(50, 2))
    hist = np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], axis=1)
    feats, frame = toy_bc_features(lane, hist)
    ego = feats[:30].reshape(10, 3)
    assert np.allclose(ego[-1], 0.0)  # current pose is the frame origin
    assert np.allclose(ego[0], [-9.0, 0.0, 0.0])


def test_toy_decode_step_round_trip():
    frame = Frame(origin=(3.0, -2.0), x_axis=(0.0, 1.0))
    pose = toy_decode_step(np.array([1.0, 0.5, 0.25]), frame)
    local = frame.to_frame(pose.position)
    assert np.allclose(local, [1.0, 0.5])
    assert frame.heading_to_frame(pose.heading) == pytest.approx(0.25)


def test_toy_policy_forward_shapes():
    rng = make_rng(40)
    for kind in PolicyKind:
        policy = ToyMlpPolicy(kind, TINY, rng)
        x = rng.standard_normal(toy_input_dim(kind))
        out = policy.predict(x)
        assert out.shape == (toy_output_dim(kind),)
        batch = policy.predict(np.tile(x, (4, 1)))
        assert batch.shape == (4, toy_output_dim(kind))
        assert np.allclose(batch[0], out)
