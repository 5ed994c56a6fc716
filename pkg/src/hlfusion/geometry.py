"""Frames, rigid transforms, pinhole projection and frustum culling.

Conventions: the LiDAR/sensor frame is x forward, y left, z up, with yaw
measured about +z from +x. The camera frame is the usual optical frame
(x right, y down, z along the optical axis).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateBox, InvalidInput

DEFAULT_NEAR = 0.5
DEFAULT_FAR = 80.0


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.remainder(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w <= -math.pi, w + 2.0 * math.pi, w)


def quat_multiply(q: Sequence[float], r: Sequence[float]) -> Tuple[float, float, float, float]:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> Tuple[float, float, float, float]:
    # Shepperd's method, picking the numerically largest pivot
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    if q[0] < 0:
        q = tuple(-c for c in q)
    return _normalized(q)


def _normalized(q: Sequence[float]) -> Tuple[float, float, float, float]:
    n = math.sqrt(sum(c * c for c in q))
    if not n > 0 or not math.isfinite(n):
        raise InvalidInput(f"quaternion {tuple(q)} has no direction")
    return tuple(float(c) / n for c in q)


@dataclass(frozen=True)
class RigidTransform:
    """Maps points from a source frame into a destination frame.

    ``rotation`` is a unit quaternion in (w, x, y, z) order; it is
    renormalized on construction.
    """

    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q = _normalized(tuple(float(c) for c in self.rotation))
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3 or not all(math.isfinite(c) for c in t):
            raise InvalidInput(f"bad translation {self.translation!r}")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        m = quat_to_matrix(q)
        m.setflags(write=False)
        object.__setattr__(self, "_matrix", m)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls((math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)), translation)

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(matrix_to_quat(rotation), tuple(translation))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def yaw(self) -> float:
        """Heading of the rotated +x axis in the destination ground plane."""
        m = self._matrix
        return math.atan2(m[1, 0], m[0, 0])

    def apply(self, points) -> np.ndarray:
        """Transform an (n, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        m = self._matrix
        t = self.translation
        # written per component so a point's result never depends on batch size
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        out = np.empty((p.shape[0], 3))
        out[:, 0] = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + t[0]
        out[:, 1] = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + t[1]
        out[:, 2] = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + t[2]
        return out[0] if single else out

    def rotate(self, vectors) -> np.ndarray:
        """Rotate directions (translation ignored)."""
        return RigidTransform(self.rotation).apply(vectors)

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        conj = (w, -x, -y, -z)
        t = -(self._matrix.T @ np.asarray(self.translation))
        return RigidTransform(conj, tuple(t))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.apply(np.asarray(other.translation))
        return RigidTransform(q, tuple(t))

    def is_identity(self, tol: float = 1e-9) -> bool:
        return (
            np.allclose(self._matrix, np.eye(3), atol=tol, rtol=0)
            and np.allclose(self.translation, 0.0, atol=tol, rtol=0)
        )


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise InvalidInput("image size must be positive")

    def unproject(self, u: float, v: float, depth: float) -> np.ndarray:
        return np.array([(u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth])


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def is_valid(self) -> bool:
        return self.x_min < self.x_max and self.y_min < self.y_max

    def clamped(self, cam: CameraModel) -> "Box2D":
        return Box2D(
            min(max(self.x_min, 0.0), cam.width),
            min(max(self.y_min, 0.0), cam.height),
            min(max(self.x_max, 0.0), cam.width),
            min(max(self.y_max, 0.0), cam.height),
        )

    def contains(self, other: "Box2D") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and other.x_max <= self.x_max and other.y_max <= self.y_max)

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Box3D:
    """Oriented box: l runs along the heading axis, w across it, h vertical."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]  # (w, l, h)
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(c) for c in self.size))
        object.__setattr__(self, "yaw", float(self.yaw))
        if len(self.center) != 3 or len(self.size) != 3:
            raise InvalidInput("center and size need three components")
        if not all(s > 0 for s in self.size):
            raise InvalidInput(f"box sizes must be positive, got {self.size}")

    @property
    def w(self) -> float:
        return self.size[0]

    @property
    def l(self) -> float:  # noqa: E743
        return self.size[1]

    @property
    def h(self) -> float:
        return self.size[2]

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def footprint(self) -> np.ndarray:
        """Ground-plane corners, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def corners(self) -> np.ndarray:
        """All eight corners, shape (8, 3)."""
        fp = self.footprint()
        zc, hh = self.center[2], self.h / 2
        return np.vstack([np.column_stack([fp, np.full(4, zc - hh)]),
                          np.column_stack([fp, np.full(4, zc + hh)])])

    def to_local(self, points) -> np.ndarray:
        """Express sensor-frame points in the box frame (origin at center)."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.column_stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1], p[:, 2]])

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        loc = self.to_local(points)
        half = np.array([self.l, self.w, self.h]) / 2 + margin
        return np.all(np.abs(loc) <= half, axis=1)


@dataclass
class PointCloud:
    """(n, 4) float32 array of x, y, z, intensity in the sensor frame."""

    points: np.ndarray
    frame: str = "sensor"

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            pts = pts.reshape(-1, 4)
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3].astype(float)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class Frustum:
    """Region of sensor space that projects into ``box`` between near and far.

    ``pose`` maps camera-frame points into the sensor frame.
    """

    pose: RigidTransform
    box: Box2D
    camera: CameraModel
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        cam_pts = self.pose.inverse().apply(pts[:, :3])
        u, v, depth = project_points(cam_pts, self.camera)
        b = self.box
        return ((depth > self.near) & (depth <= self.far)
                & (u >= b.x_min) & (u <= b.x_max) & (v >= b.y_min) & (v <= b.y_max))


def project_point(p, cam: CameraModel) -> Optional[Tuple[float, float, float]]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        return None
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy, z)


def project_points(points: np.ndarray, cam: CameraModel):
    """Vectorized ``project_point``; entries with depth <= 0 come back as NaN."""
    p = np.asarray(points, dtype=float)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u = np.where(front, cam.fx * x / zs + cam.cx, np.nan)
    v = np.where(front, cam.fy * y / zs + cam.cy, np.nan)
    depth = np.where(front, z, np.nan)
    return u, v, depth


def frustum_from_box2d(box: Box2D, cam: CameraModel, pose: RigidTransform,
                       near: float = DEFAULT_NEAR, far: float = DEFAULT_FAR) -> Frustum:
    if not 0 < near < far:
        raise InvalidInput(f"need 0 < near < far, got near={near}, far={far}")
    clamped = box.clamped(cam)
    if clamped.area <= 0:
        raise DegenerateBox(f"box {box.as_list()} has zero area after clamping")
    return Frustum(pose, clamped, cam, float(near), float(far))


def cull_points(cloud, f: Frustum) -> np.ndarray:
    """Ascending indices of the cloud points inside the frustum."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(f.contains(np.asarray(pts, dtype=float)[:, :3]))


# sensor frame (x fwd, y left, z up) -> optical frame (x right, y down, z fwd)
SENSOR_TO_OPTICAL = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def camera_pose_looking(position, yaw: float = 0.0) -> RigidTransform:
    """camera<-sensor transform for a forward camera at ``position`` rotated by ``yaw``."""
    r_world_cam = RigidTransform.from_yaw(yaw).matrix @ SENSOR_TO_OPTICAL.T
    sensor_from_cam = RigidTransform.from_matrix(r_world_cam, position)
    return sensor_from_cam.inverse()
