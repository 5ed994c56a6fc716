"""Seeded synthetic camera+LiDAR scenes with exact labels.

Vehicles are cuboids standing on the ground plane z = 0 of the sensor
frame. The LiDAR sits ``lidar_height`` above the origin and scans a
regular azimuth/elevation grid over the camera's forward sector; returns
come from ray-casting that grid against the cuboids and the ground.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .dataio import Annotation, Frame
from .errors import PlacementFailure
from .geometry import (
    Box2D,
    Box3D,
    CameraModel,
    PointCloud,
    RigidTransform,
    camera_pose_looking,
    project_points,
    wrap_angle,
)

CAMERA = CameraModel(fx=1266.0, fy=1266.0, cx=800.0, cy=450.0, width=1600, height=900)
CAMERA_POSITION = (1.0, 0.0, 1.6)
GROUND_ID = -1
CLUTTER_ID = -2
MAX_PLACEMENT_ATTEMPTS = 100
MAX_FRAME_ATTEMPTS = 20


@dataclass(frozen=True)
class GenParams:
    frames: int = 1000
    seed: int = 7
    vehicles_per_frame: Tuple[int, int] = (1, 3)
    width_range: Tuple[float, float] = (1.6, 2.1)
    length_range: Tuple[float, float] = (3.8, 5.2)
    height_range: Tuple[float, float] = (1.4, 1.9)
    range_band: Tuple[float, float] = (6.0, 35.0)
    yaw_range: Tuple[float, float] = (-math.pi, math.pi)
    lidar_height: float = 1.8
    elevation_deg: Tuple[float, float] = (-16.0, 2.0)
    beams: int = 32
    azimuth_res_deg: float = 0.33
    azimuth_fov_deg: float = 40.0
    max_range: float = 80.0
    noise_sigma: float = 0.02
    ground_keep: float = 0.25
    clutter_per_frame: int = 40
    min_returns: int = 5
    min_box_area: float = 100.0
    near: float = 0.5

    def __post_init__(self):
        for name in ("vehicles_per_frame", "width_range", "length_range", "height_range",
                     "range_band", "yaw_range", "elevation_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.vehicles_per_frame[0] < 1:
            raise ValueError("at least one vehicle per frame is required")
        if self.frames < 0:
            raise ValueError("frame count must be non-negative")


def camera_pose() -> RigidTransform:
    return camera_pose_looking(CAMERA_POSITION)


@dataclass
class Scan:
    points: np.ndarray  # (n, 3) float64, noise applied
    exact: np.ndarray  # (n, 3) float64, noiseless hit points
    hit_id: np.ndarray  # vehicle index, GROUND_ID or CLUTTER_ID
    intensity: np.ndarray


def ray_grid(p: GenParams) -> np.ndarray:
    half = p.azimuth_fov_deg
    n_az = int(round(2 * half / p.azimuth_res_deg)) + 1
    az = np.radians(np.linspace(-half, half, n_az))
    el = np.radians(np.linspace(p.elevation_deg[0], p.elevation_deg[1], p.beams))
    A, E = np.meshgrid(az, el, indexing="xy")
    A, E = A.ravel(), E.ravel()
    return np.column_stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)])


def ray_box_distance(origin: np.ndarray, dirs: np.ndarray, box: Box3D) -> np.ndarray:
    """Entry distance of each ray into ``box`` (slab test); inf on a miss."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    o = np.asarray(origin) - np.asarray(box.center)
    o_l = np.array([c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]])
    d_l = np.column_stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]])
    half = np.array([box.l, box.w, box.h]) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o_l) / d_l
        t2 = (half - o_l) / d_l
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (t_far >= t_near) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def raycast(boxes: List[Box3D], p: GenParams, rng: np.random.Generator) -> Scan:
    origin = np.array([0.0, 0.0, p.lidar_height])
    dirs = ray_grid(p)
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    owner = np.full(n, GROUND_ID, dtype=np.int64)

    down = dirs[:, 2] < 0
    t_ground = np.full(n, np.inf)
    t_ground[down] = -origin[2] / dirs[down, 2]
    best = np.minimum(best, t_ground)
    for k, box in enumerate(boxes):
        t = ray_box_distance(origin, dirs, box)
        closer = t < best
        best[closer] = t[closer]
        owner[closer] = k

    valid = best <= p.max_range
    is_ground = owner == GROUND_ID
    keep_ground = rng.random(n) < p.ground_keep
    valid &= ~is_ground | keep_ground

    exact = origin + best[valid, None] * dirs[valid]
    hit_id = owner[valid]
    if hit_id.size:
        # ground hits sit on z = 0 by construction
        exact[hit_id == GROUND_ID, 2] = 0.0
    intensity = np.where(hit_id == GROUND_ID, 0.1 + 0.1 * rng.random(hit_id.size),
                         0.4 + 0.5 * rng.random(hit_id.size))

    m = p.clutter_per_frame
    if m:
        half = math.radians(p.azimuth_fov_deg)
        az = rng.uniform(-half, half, m)
        r = rng.uniform(p.range_band[0], p.max_range, m)
        clutter = np.column_stack([r * np.cos(az), r * np.sin(az), rng.uniform(0.3, 2.5, m)])
        exact = np.vstack([exact, clutter])
        hit_id = np.concatenate([hit_id, np.full(m, CLUTTER_ID)])
        intensity = np.concatenate([intensity, rng.random(m)])

    noisy = exact + rng.normal(0.0, p.noise_sigma, exact.shape) if p.noise_sigma > 0 else exact.copy()
    return Scan(noisy, exact, hit_id, intensity)


def box2d_of(box: Box3D, cam: CameraModel, T_cam_from_sensor: RigidTransform):
    """Pixel bounding rectangle of the projected corners, or None if any corner is behind the camera."""
    corners = T_cam_from_sensor.apply(box.corners())
    if np.any(corners[:, 2] <= 0):
        return None
    u, v, _ = project_points(corners, cam)
    return Box2D(float(u.min()), float(v.min()), float(u.max()), float(v.max()))


def _fits_in_image(box: Box3D, pose: RigidTransform, near: float) -> bool:
    corners = pose.apply(box.corners())
    if np.any(corners[:, 2] <= near):
        return False
    u, v, _ = project_points(corners, CAMERA)
    return bool(u.min() >= 0 and v.min() >= 0 and u.max() <= CAMERA.width and v.max() <= CAMERA.height)


def _separated(box: Box3D, others: List[Box3D], margin: float = 0.5) -> bool:
    r = math.hypot(box.l, box.w) / 2
    for o in others:
        d = math.hypot(box.center[0] - o.center[0], box.center[1] - o.center[1])
        if d < r + math.hypot(o.l, o.w) / 2 + margin:
            return False
    return True


def place_vehicles(p: GenParams, rng: np.random.Generator, pose: RigidTransform) -> List[Box3D]:
    count = int(rng.integers(p.vehicles_per_frame[0], p.vehicles_per_frame[1] + 1))
    half_fov = math.atan2(CAMERA.width / 2, CAMERA.fx)
    boxes: List[Box3D] = []
    for k in range(count):
        placed = None
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            w = rng.uniform(*p.width_range)
            l = rng.uniform(*p.length_range)
            h = rng.uniform(*p.height_range)
            rng_m = rng.uniform(*p.range_band)
            az = rng.uniform(-half_fov, half_fov)
            yaw = wrap_angle(rng.uniform(*p.yaw_range))
            cand = Box3D((rng_m * math.cos(az), rng_m * math.sin(az), h / 2), (w, l, h), yaw)
            if _fits_in_image(cand, pose, p.near) and _separated(cand, boxes):
                placed = cand
                break
        if placed is None:
            if k < p.vehicles_per_frame[0]:
                raise PlacementFailure(f"could only place {k} of {p.vehicles_per_frame[0]} required vehicles")
            break
        boxes.append(placed)
    return boxes


def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def simulate_frame(p: GenParams, index: int):
    """Returns (frame, scan, placed boxes); the scan keeps per-return vehicle ids."""
    rng = frame_rng(p.seed, index)
    pose = camera_pose()
    for _ in range(MAX_FRAME_ATTEMPTS):
        boxes = place_vehicles(p, rng, pose)
        scan = raycast(boxes, p, rng)
        anns = []
        for k, box in enumerate(boxes):
            b2 = box2d_of(box, CAMERA, pose)
            if b2 is None:
                continue
            b2 = b2.clamped(CAMERA)
            if int((scan.hit_id == k).sum()) >= p.min_returns and b2.area >= p.min_box_area:
                anns.append(Annotation(b2, box, "vehicle"))
        if anns:
            break
    else:
        raise PlacementFailure(f"frame {index}: no visible vehicle after {MAX_FRAME_ATTEMPTS} tries")
    pts = np.column_stack([scan.points, scan.intensity]).astype(np.float32)
    fid = f"{index:06d}"
    frame = Frame(fid, PointCloud(pts), CAMERA, pose, anns, f"clouds/{fid}.bin")
    return frame, scan, boxes


def generate_scene(p: GenParams, index: int) -> Frame:
    return simulate_frame(p, index)[0]


def generate_dataset(p: GenParams) -> List[Frame]:
    return [generate_scene(p, i) for i in range(p.frames)]
