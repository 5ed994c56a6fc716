"""Global cluster descriptor and regression-target encoding.

Everything here is expressed in the frustum-canonical frame: the sensor
frame yawed so the frustum's central ray points along +x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCluster
from .geometry import Box2D, Box3D, CameraModel, Frustum, RigidTransform, wrap_angle

FEATURE_ORDER_VERSION = "v1"
N_FEATURES = 23
FEATURE_NAMES = (
    "log_count",
    "centroid_x", "centroid_y", "centroid_z",
    "min_x", "max_x", "min_y", "max_y", "min_z", "max_z",
    "eig_0", "eig_1", "eig_2",
    "principal_yaw",
    "planar_range",
    "frustum_azimuth",
    "box2d_width", "box2d_height",
    "box2d_center_u", "box2d_center_v",
    "sensor_min_z", "sensor_max_z",
    "density",
)
BOX2D_SLICE = slice(16, 20)
TARGET_NAMES = ("dx", "dy", "dz", "w", "l", "h", "yaw")
MIN_SIZE = 0.1
MIN_VOLUME = 1e-6


@dataclass(frozen=True)
class CanonicalFrame:
    transform: RigidTransform  # sensor -> canonical, pure yaw
    azimuth: float


def frustum_azimuth(frustum: Frustum) -> float:
    u, v = frustum.box.center
    ray = frustum.camera.unproject(u, v, 1.0)
    d = frustum.pose.rotate(ray)
    return math.atan2(d[1], d[0])


def canonical_frame(frustum: Frustum) -> CanonicalFrame:
    az = frustum_azimuth(frustum)
    return CanonicalFrame(RigidTransform.from_yaw(-az), az)


def _principal_yaw(planar: np.ndarray) -> float:
    cov = np.cov(planar.T, bias=True) if planar.shape[0] > 1 else np.zeros((2, 2))
    _, vecs = np.linalg.eigh(cov)
    v = vecs[:, -1]
    a = math.atan2(v[1], v[0])
    # direction is sign-free: fold into (-pi/2, pi/2]
    if a <= -math.pi / 2:
        a += math.pi
    elif a > math.pi / 2:
        a -= math.pi
    return a


def extract_features(cluster_points, frustum: Frustum, box2d: Box2D, cam: CameraModel,
                     canon: CanonicalFrame | None = None, use_box2d: bool = True) -> np.ndarray:
    pts = np.asarray(cluster_points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        raise EmptyCluster("cannot describe an empty cluster")
    if canon is None:
        canon = canonical_frame(frustum)

    local = canon.transform.apply(pts)
    centroid = local.mean(axis=0)
    rel = local - centroid
    lo, hi = rel.min(axis=0), rel.max(axis=0)
    cov = (rel.T @ rel) / n
    eig = np.linalg.eigvalsh(cov)[::-1].clip(min=0.0)
    extent = hi - lo
    volume = max(float(np.prod(extent)), MIN_VOLUME)
    sensor_centroid = pts.mean(axis=0)

    f = np.empty(N_FEATURES)
    f[0] = math.log1p(n)
    f[1:4] = centroid
    f[4:10] = [lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]]
    f[10:13] = eig
    f[13] = _principal_yaw(rel[:, :2])
    f[14] = math.hypot(sensor_centroid[0], sensor_centroid[1])
    f[15] = canon.azimuth
    if use_box2d:
        f[16] = box2d.width / cam.width
        f[17] = box2d.height / cam.height
        f[18] = box2d.center[0] / cam.width
        f[19] = box2d.center[1] / cam.height
    else:
        f[BOX2D_SLICE] = 0.0
    f[20] = pts[:, 2].min()
    f[21] = pts[:, 2].max()
    f[22] = n / volume
    return f


def encode_target(gt: Box3D, cluster_centroid, canon: CanonicalFrame) -> np.ndarray:
    delta = np.asarray(gt.center) - np.asarray(cluster_centroid, dtype=float)
    d = canon.transform.rotate(delta)
    return np.array([d[0], d[1], d[2], gt.w, gt.l, gt.h, wrap_angle(gt.yaw - canon.azimuth)])


def decode_target(t, cluster_centroid, canon: CanonicalFrame) -> Box3D:
    t = np.asarray(t, dtype=float)
    offset = canon.transform.inverse().rotate(t[:3])
    center = np.asarray(cluster_centroid, dtype=float) + offset
    size = tuple(max(float(s), MIN_SIZE) for s in t[3:6])
    return Box3D(tuple(center), size, wrap_angle(float(t[6]) + canon.azimuth))
