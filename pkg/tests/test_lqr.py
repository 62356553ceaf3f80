import numpy as np
import pytest

from drivelab.geometry import Pose2, Trajectory
from drivelab.lqr import LqrProblem, LqrWeights, prepare_initial_state, solve
from oracles import dense_lqr_cost


def _problem(targets, dt=1.0, p0=(0, 0, 0), v0=(0, 0, 0), a0=(0, 0, 0), weights=LqrWeights()):
    return LqrProblem(
        dt=dt,
        initial_pose=p0,
        initial_velocity=v0,
        initial_acceleration=a0,
        targets=targets,
        weights=weights,
    )


def _oracle_matrices(dt, weights):
    # oracle-side construction of the stacked system, written independently
    eye = np.eye(3)
    zero = np.zeros((3, 3))
    A = np.block([[eye, dt * eye, dt * dt * eye], [zero, eye, dt * eye], [zero, zero, eye]])
    B = np.vstack([dt**3 * eye, dt**2 * eye, dt * eye])
    Q = np.diag([1, 1, 1, 0, 0, weights.omega, weights.accel, weights.accel, weights.alpha]).astype(float)
    R = np.diag([weights.jerk, weights.jerk, 0.0])
    return A, B, Q, R


def test_already_at_rest_on_target():
    plan = solve(_problem([(1.0, -2.0, 0.3)] * 4, p0=(1.0, -2.0, 0.3)))
    assert np.allclose(plan.inputs, 0.0, atol=1e-12)
    assert plan.cost == pytest.approx(0.0, abs=1e-18)
    assert np.allclose(plan.poses, [(1.0, -2.0, 0.3)] * 4)


def test_one_step_closed_form():
    # x-channel only: minimize (u - 1)^2 + 0.1 u^2 + 0.01 u^2 -> u* = 2/2.22
    plan = solve(_problem([(1.0, 0.0, 0.0)], weights=LqrWeights(omega=0.1, alpha=0.1, accel=0.1, jerk=0.01)))
    assert plan.inputs[0, 0] == pytest.approx(2.0 / 2.22, rel=1e-9)
    assert np.allclose(plan.inputs[0, 1:], 0.0, atol=1e-12)
    expected_cost = (2.0 / 2.22 - 1.0) ** 2 + 0.11 * (2.0 / 2.22) ** 2
    assert plan.cost == pytest.approx(expected_cost, rel=1e-12)


def _random_problem(rng, dt):
    T = int(rng.integers(1, 6))
    targets = rng.uniform(-3, 3, size=(T, 3))
    targets[:, 2] = rng.uniform(-0.5, 0.5, size=T)
    return _problem(
        targets,
        dt=dt,
        p0=rng.uniform(-1, 1, 3) * np.array([1, 1, 0.3]),
        v0=rng.uniform(-1, 1, 3),
        a0=rng.uniform(-0.5, 0.5, 3),
    )


def test_riccati_matches_dense_oracle():
    rng = np.random.default_rng(40)
    for trial in range(100):
        dt = 0.1 if trial % 2 == 0 else 1.0
        prob = _random_problem(rng, dt)
        plan = solve(prob)
        A, B, Q, R = _oracle_matrices(dt, prob.weights)
        x0 = np.concatenate([prob.initial_pose, prob.initial_velocity, prob.initial_acceleration])
        refs = np.zeros((prob.horizon, 9))
        refs[:, :3] = np.asarray(prob.targets)
        oracle_cost, _ = dense_lqr_cost(A, B, Q, R, x0, refs)
        assert plan.cost == pytest.approx(oracle_cost, abs=1e-6)
        assert plan.dynamics_residual(dt) < 1e-9


def test_dynamics_feasibility_residual():
    rng = np.random.default_rng(41)
    for _ in range(20):
        prob = _random_problem(rng, 0.1)
        assert solve(prob).dynamics_residual(0.1) < 1e-9


def test_more_jerk_weight_never_increases_jerk():
    rng = np.random.default_rng(42)
    for _ in range(100):
        prob = _random_problem(rng, 0.5)
        low = solve(prob)
        high = solve(
            _problem(
                prob.targets,
                dt=prob.dt,
                p0=prob.initial_pose,
                v0=prob.initial_velocity,
                a0=prob.initial_acceleration,
                weights=LqrWeights(
                    omega=prob.weights.omega,
                    alpha=prob.weights.alpha,
                    accel=prob.weights.accel,
                    jerk=2.0 * prob.weights.jerk,
                ),
            )
        )
        jerk2 = lambda plan: float(np.sum(plan.inputs[:, :2] ** 2))
        assert jerk2(high) <= jerk2(low) + 1e-9


def test_zero_weights_give_best_tracking():
    rng = np.random.default_rng(43)
    for _ in range(30):
        prob = _random_problem(rng, 1.0)
        free = solve(
            _problem(
                prob.targets,
                dt=prob.dt,
                p0=prob.initial_pose,
                v0=prob.initial_velocity,
                a0=prob.initial_acceleration,
                weights=LqrWeights(0.0, 0.0, 0.0, 0.0),
            )
        )
        weighted = solve(prob)
        track = lambda plan: float(np.sum((plan.poses - np.asarray(prob.targets)) ** 2))
        assert track(free) <= track(weighted) + 1e-9


def test_heading_targets_unwrap_across_seam():
    # targets hop across +/- pi; the planner must not chase a 2*pi jump
    targets = [(0.0, 0.0, np.pi - 0.05), (0.0, 0.0, -np.pi + 0.05), (0.0, 0.0, -np.pi + 0.1)]
    plan = solve(_problem(targets, p0=(0.0, 0.0, np.pi - 0.1)))
    assert np.max(np.abs(plan.velocities[:, 2])) < 1.0


def test_rejects_bad_problems():
    with pytest.raises(ValueError):
        _problem([(np.nan, 0, 0)])
    with pytest.raises(ValueError):
        _problem(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        LqrProblem(
            dt=0.0,
            initial_pose=(0, 0, 0),
            initial_velocity=(0, 0, 0),
            initial_acceleration=(0, 0, 0),
            targets=[(0, 0, 0)],
        )
    with pytest.raises(ValueError):
        LqrWeights(jerk=-1.0)


def test_prepare_initial_state_rules():
    two = Trajectory([Pose2(0, 0, 0), Pose2(1, 0, 0)], dt=0.1)
    p0, v0, a0 = prepare_initial_state(two)
    assert v0[0] == pytest.approx(10.0)
    assert np.allclose(a0, 0.0)

    still = Trajectory([Pose2(2, 3, 0.5)] * 4, dt=0.1)
    _, v0, a0 = prepare_initial_state(still)
    assert np.allclose(v0, 0.0) and np.allclose(a0, 0.0)

    three = Trajectory([Pose2(0, 0, 0), Pose2(1, 0, 0), Pose2(3, 0, 0)], dt=1.0)
    p0, v0, a0 = prepare_initial_state(three)
    assert v0[0] == pytest.approx(2.0)
    assert a0[0] == pytest.approx(1.0)
    assert np.allclose(p0, [3.0, 0.0, 0.0])

    with pytest.raises(ValueError):
        prepare_initial_state(Trajectory([Pose2(0, 0, 0)], dt=1.0))


def test_problem_json_round_trip():
    prob = _problem([(1.0, 2.0, 0.1), (2.0, 3.0, 0.2)], dt=0.1, v0=(1, 0, 0))
    assert LqrProblem.from_json(prob.to_json()) == prob
