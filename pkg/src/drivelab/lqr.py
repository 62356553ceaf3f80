"""Finite-horizon LQR smoothing of predicted poses.

The state stacks pose, pose rate, and pose acceleration (channels x, y,
heading); one linear system drives all three channels through a shared
triple-integrator update

    [p; p'; p'']_{t+1} = [[I, D, D^2], [0, I, D], [0, 0, I]] [p; p'; p'']_t
                         + [D^3; D^2; D] u_t,      D = dt * I.

The stage cost tracks the predicted poses and penalizes angular velocity,
angular acceleration, positional acceleration, and positional jerk (the
angular jerk input and the linear speed are deliberately free):

    J = sum_t ||p_t - target_t||^2 + eta_omega * w_t^2 + eta_alpha * al_t^2
        + eta_accel * ||a_t||^2 + eta_jerk * ||j_t||^2.

Solved exactly by a backward Riccati recursion with an affine tracking
term; there is no separate terminal cost, and target t is compared against
the state reached after t inputs. The heading channel is unwrapped against
the initial pose before the solve and re-normalized afterwards, which keeps
the problem exactly linear-quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Trajectory, normalize_angle, unwrap_angles

# state layout: [x, y, th, vx, vy, w, ax, ay, al]
_POS = slice(0, 3)
_VEL = slice(3, 6)
_ACC = slice(6, 9)


@dataclass(frozen=True)
class LqrWeights:
    omega: float = 0.1  # angular velocity
    alpha: float = 0.1  # angular acceleration
    accel: float = 0.1  # positional acceleration
    jerk: float = 0.01  # positional jerk

    def __post_init__(self):
        for name in ("omega", "alpha", "accel", "jerk"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"weight {name} must be non-negative")

    def to_json(self) -> dict:
        return {"omega": self.omega, "alpha": self.alpha, "accel": self.accel, "jerk": self.jerk}

    @staticmethod
    def from_json(doc: dict) -> "LqrWeights":
        return LqrWeights(**doc)


@dataclass(frozen=True)
class LqrProblem:
    """Tracking problem: initial kinematic state plus T target poses."""

    dt: float
    initial_pose: tuple
    initial_velocity: tuple
    initial_acceleration: tuple
    targets: tuple  # T rows of (x, y, heading)
    weights: LqrWeights = LqrWeights()

    def __post_init__(self):
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "initial_pose", tuple(float(v) for v in self.initial_pose))
        object.__setattr__(self, "initial_velocity", tuple(float(v) for v in self.initial_velocity))
        object.__setattr__(
            self, "initial_acceleration", tuple(float(v) for v in self.initial_acceleration)
        )
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim != 2 or targets.shape[1] != 3 or targets.shape[0] < 1:
            raise ValueError("targets must be a (T, 3) array with T >= 1")
        if not np.all(np.isfinite(targets)):
            raise ValueError("targets must be finite")
        object.__setattr__(self, "targets", tuple(tuple(row) for row in targets))
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        for tup in (self.initial_pose, self.initial_velocity, self.initial_acceleration):
            if len(tup) != 3:
                raise ValueError("initial state vectors must have 3 channels (x, y, heading)")

    @property
    def horizon(self) -> int:
        return len(self.targets)

    def to_json(self) -> dict:
        return {
            "dt": self.dt,
            "initial_pose": list(self.initial_pose),
            "initial_velocity": list(self.initial_velocity),
            "initial_acceleration": list(self.initial_acceleration),
            "targets": [list(t) for t in self.targets],
            "weights": self.weights.to_json(),
        }

    @staticmethod
    def from_json(doc: dict) -> "LqrProblem":
        return LqrProblem(
            dt=doc["dt"],
            initial_pose=doc["initial_pose"],
            initial_velocity=doc["initial_velocity"],
            initial_acceleration=doc["initial_acceleration"],
            targets=doc["targets"],
            weights=LqrWeights.from_json(doc.get("weights", LqrWeights().to_json())),
        )


@dataclass(frozen=True)
class SmoothPlan:
    """Solved plan: poses plus the kinematic profile that reaches them."""

    poses: np.ndarray  # (T, 3), headings normalized
    velocities: np.ndarray  # (T, 3): vx, vy, angular rate
    accelerations: np.ndarray  # (T, 3)
    inputs: np.ndarray  # (T, 3): positional jerk x/y, angular jerk
    cost: float
    gains: tuple  # per-step (K, d) feedback terms
    states: np.ndarray = field(repr=False, default=None)  # (T, 9) raw solver states
    initial_state: np.ndarray = field(repr=False, default=None)  # (9,)

    def dynamics_residual(self, dt: float) -> float:
        """Max abs violation of the triple-integrator recursion."""
        A, B = dynamics_matrices(dt)
        prev = self.initial_state
        worst = 0.0
        for t in range(self.states.shape[0]):
            pred = A @ prev + B @ self.inputs[t]
            worst = max(worst, float(np.max(np.abs(pred - self.states[t]))))
            prev = self.states[t]
        return worst


def dynamics_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """The (A, B) pair of the shared triple-integrator, D = dt * I."""
    eye = np.eye(3)
    D = dt * eye
    A = np.block([[eye, D, D @ D], [np.zeros((3, 3)), eye, D], [np.zeros((3, 6)), eye]])
    B = np.vstack([D @ D @ D, D @ D, D])
    return A, B


def cost_matrices(weights: LqrWeights) -> tuple[np.ndarray, np.ndarray]:
    """State cost Q (tracking + rate penalties) and input cost R."""
    Q = np.diag([1.0, 1.0, 1.0, 0.0, 0.0, weights.omega, weights.accel, weights.accel, weights.alpha])
    R = np.diag([weights.jerk, weights.jerk, 0.0])
    return Q, R


def solve(problem: LqrProblem) -> SmoothPlan:
    """Backward Riccati recursion with affine tracking term, then rollout."""
    T = problem.horizon
    dt = problem.dt
    A, B = dynamics_matrices(dt)
    Q, R = cost_matrices(problem.weights)

    targets = np.asarray(problem.targets, dtype=np.float64).copy()
    targets[:, 2] = unwrap_angles(targets[:, 2], start=problem.initial_pose[2])
    refs = np.zeros((T, 9))
    refs[:, _POS] = targets

    # value function V_t(s) = s^T P s - 2 q^T s + c, with V_T = 0
    P = np.zeros((9, 9))
    q = np.zeros(9)
    gains: list[tuple[np.ndarray, np.ndarray]] = []
    for t in range(T - 1, -1, -1):
        M = Q + P
        m = Q @ refs[t] + q
        G = R + B.T @ M @ B
        Ginv_Bt = np.linalg.solve(G, B.T)
        K = -Ginv_Bt @ (M @ A)
        d = Ginv_Bt @ m
        gains.append((K, d))
        AtM = A.T @ M
        P = AtM @ A + A.T @ (M @ B) @ K
        q = A.T @ (m - M @ B @ (Ginv_Bt @ m))
        P = 0.5 * (P + P.T)  # keep the recursion symmetric against roundoff
    gains.reverse()

    s = np.concatenate(
        [problem.initial_pose, problem.initial_velocity, problem.initial_acceleration]
    )
    initial_state = s.copy()
    states = np.zeros((T, 9))
    inputs = np.zeros((T, 3))
    cost = 0.0
    for t in range(T):
        K, d = gains[t]
        u = K @ s + d
        s = A @ s + B @ u
        states[t] = s
        inputs[t] = u
        err = s - refs[t]
        cost += float(err @ Q @ err + u @ R @ u)

    poses = states[:, _POS].copy()
    poses[:, 2] = normalize_angle(poses[:, 2])
    return SmoothPlan(
        poses=poses,
        velocities=states[:, _VEL].copy(),
        accelerations=states[:, _ACC].copy(),
        inputs=inputs,
        cost=cost,
        gains=tuple(gains),
        states=states,
        initial_state=initial_state,
    )


def prepare_initial_state(history: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kinematic state from logged poses, for seeding the smoother.

    Velocity is the backward difference of the last two poses (heading
    unwrapped); acceleration is the backward second difference, or zero when
    only two poses are available.
    """
    if len(history) < 2:
        raise ValueError("need at least 2 past poses")
    tail = history.as_array()[-3:]
    tail[:, 2] = unwrap_angles(tail[:, 2])
    dt = history.dt
    p0 = history.poses[-1].as_array()
    v0 = (tail[-1] - tail[-2]) / dt
    if tail.shape[0] < 3:
        a0 = np.zeros(3)
    else:
        a0 = (tail[-1] - 2.0 * tail[-2] + tail[-3]) / dt**2
    return p0, v0, a0
