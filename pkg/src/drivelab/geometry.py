"""SE(2) poses, trajectories, rigid transforms, and oriented-box collision.

Everything here is pure and operates on float64 arrays; angles are radians
and are kept normalized to (-pi, pi].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
UNIT_AXIS_TOL = 1e-9


def normalize_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]; +pi maps to +pi."""
    wrapped = -((np.pi - np.asarray(theta, dtype=np.float64)) % TWO_PI - np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def unwrap_angles(angles, start: float | None = None) -> np.ndarray:
    """Remove 2*pi jumps by nearest-multiple continuation.

    With `start` given, the first angle is also continued against it, so the
    returned sequence connects smoothly to an existing unwrapped value.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if start is None:
        return np.unwrap(angles)
    return np.unwrap(np.concatenate(([float(start)], angles)))[1:]


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, heading); heading normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def direction(self) -> np.ndarray:
        """Unit vector pointing along the heading."""
        return np.array([np.cos(self.heading), np.sin(self.heading)])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Pose2":
        a = np.asarray(a, dtype=np.float64)
        return Pose2(a[0], a[1], a[2])


@dataclass(frozen=True)
class Trajectory:
    """Uniformly timed pose sequence with step duration dt > 0."""

    poses: tuple
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "dt", float(self.dt))
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.poses) == 0:
            raise ValueError("trajectory must contain at least one pose")
        if not all(isinstance(p, Pose2) for p in self.poses):
            raise TypeError("trajectory poses must be Pose2 instances")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trajectory(self.poses[idx], self.dt)
        return self.poses[idx]

    def positions(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses], dtype=np.float64)

    def headings(self) -> np.ndarray:
        return np.array([p.heading for p in self.poses], dtype=np.float64)

    def as_array(self) -> np.ndarray:
        return np.array([p.as_array() for p in self.poses], dtype=np.float64)

    @staticmethod
    def from_array(a, dt: float) -> "Trajectory":
        a = np.asarray(a, dtype=np.float64)
        return Trajectory(tuple(Pose2(*row) for row in a), dt)

    @property
    def duration(self) -> float:
        """Time span covered by the steps between the poses."""
        return (len(self.poses) - 1) * self.dt


def _check_unit_axis(axis: np.ndarray):
    norm = float(np.hypot(axis[0], axis[1]))
    if abs(norm - 1.0) > UNIT_AXIS_TOL:
        raise ValueError(f"frame x-axis must have unit norm, got {norm!r}")


def transform_to_frame(point, frame_origin, frame_x_axis) -> np.ndarray:
    """Express a point (or (N, 2) array of points) in a local frame.

    The frame has its origin at `frame_origin` and its x-axis along the unit
    vector `frame_x_axis`; the y-axis is the x-axis rotated +90 degrees.
    """
    point = np.asarray(point, dtype=np.float64)
    origin = np.asarray(frame_origin, dtype=np.float64)
    axis = np.asarray(frame_x_axis, dtype=np.float64)
    _check_unit_axis(axis)
    d = point - origin
    ax, ay = axis
    x = d[..., 0] * ax + d[..., 1] * ay
    y = -d[..., 0] * ay + d[..., 1] * ax
    return np.stack([x, y], axis=-1)


def transform_from_frame(point, frame_origin, frame_x_axis) -> np.ndarray:
    """Inverse of transform_to_frame: local frame coordinates back to global."""
    point = np.asarray(point, dtype=np.float64)
    origin = np.asarray(frame_origin, dtype=np.float64)
    axis = np.asarray(frame_x_axis, dtype=np.float64)
    _check_unit_axis(axis)
    ax, ay = axis
    x = point[..., 0] * ax - point[..., 1] * ay
    y = point[..., 0] * ay + point[..., 1] * ax
    return np.stack([x, y], axis=-1) + origin


def heading_to_frame(heading, frame_x_axis):
    """Heading expressed relative to the frame's x-axis direction."""
    axis = np.asarray(frame_x_axis, dtype=np.float64)
    _check_unit_axis(axis)
    return normalize_angle(np.asarray(heading, dtype=np.float64) - np.arctan2(axis[1], axis[0]))


def heading_from_frame(heading, frame_x_axis):
    """Inverse of heading_to_frame."""
    axis = np.asarray(frame_x_axis, dtype=np.float64)
    _check_unit_axis(axis)
    return normalize_angle(np.asarray(heading, dtype=np.float64) + np.arctan2(axis[1], axis[0]))


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle centered on a pose; length runs along the heading."""

    center: Pose2
    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("box extents must be positive")

    def corners(self) -> np.ndarray:
        """Counterclockwise corner coordinates, shape (4, 2)."""
        c, s = np.cos(self.center.heading), np.sin(self.center.heading)
        half = np.array(
            [
                [self.length / 2.0, self.width / 2.0],
                [-self.length / 2.0, self.width / 2.0],
                [-self.length / 2.0, -self.width / 2.0],
                [self.length / 2.0, -self.width / 2.0],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return half @ rot.T + self.center.position

    def contains_points(self, points) -> np.ndarray:
        """Vectorized point-in-box test; boundary points count as inside."""
        local = transform_to_frame(points, self.center.position, self.center.direction())
        return (np.abs(local[..., 0]) <= self.length / 2.0) & (
            np.abs(local[..., 1]) <= self.width / 2.0
        )


def obb_intersects(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis overlap test; touching edges count as intersecting."""
    ca, cb = a.corners(), b.corners()
    # Face normals of both rectangles: each box contributes two distinct axes.
    axes = np.array(
        [
            a.center.direction(),
            [-a.center.direction()[1], a.center.direction()[0]],
            b.center.direction(),
            [-b.center.direction()[1], b.center.direction()[0]],
        ]
    )
    for axis in axes:
        pa = ca @ axis
        pb = cb @ axis
        if pa.min() > pb.max() or pb.min() > pa.max():
            return False
    return True


def point_to_polyline_distance(points, vertices) -> np.ndarray:
    """Distance from each point to a polyline given by its vertices.

    points: (2,) or (N, 2); vertices: (M, 2) with M >= 2. Returns the minimum
    over all segments of the clamped point-to-segment distance.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape[0] < 2:
        return np.linalg.norm(points - vertices[0], axis=-1)
    a = vertices[:-1]
    d = vertices[1:] - a
    seg_len2 = np.maximum(np.sum(d * d, axis=-1), 1e-300)
    # t[i, j]: projection parameter of point i onto segment j, clamped to [0, 1]
    diff = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(diff * d[None, :, :], axis=-1) / seg_len2, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * d[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=-1)
    out = dist.min(axis=1)
    return out if out.shape[0] > 1 else out


def finite_difference_derivatives(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-step velocity and acceleration estimates, shape (N, 3) each.

    Channels are (x, y, heading); the heading channel is unwrapped before
    differencing. Velocities use central differences with one-sided stencils
    at the boundaries; accelerations use the central second difference, with
    boundary values copied from the nearest interior step (zero when only two
    poses are available).
    """
    if len(traj) < 2:
        raise ValueError("need at least 2 poses to differentiate")
    vals = traj.as_array()
    vals[:, 2] = unwrap_angles(vals[:, 2])
    vel = np.gradient(vals, traj.dt, axis=0)
    acc = np.zeros_like(vals)
    if len(traj) >= 3:
        acc[1:-1] = (vals[2:] - 2.0 * vals[1:-1] + vals[:-2]) / traj.dt**2
        acc[0] = acc[1]
        acc[-1] = acc[-2]
    return vel, acc
