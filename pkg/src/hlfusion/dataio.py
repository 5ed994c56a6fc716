"""On-disk dataset format and train/test splitting.

Layout::

    <root>/dataset.json        manifest (frames, calibration, labels)
    <root>/<cloud path>.bin    little-endian float32 x, y, z, intensity; no header
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidFraction, InvalidInput, InvariantViolation, ParseError
from .geometry import Box2D, Box3D, CameraModel, PointCloud, RigidTransform

MANIFEST = "dataset.json"
MANIFEST_VERSION = 1
CLOUD_DTYPE = np.dtype("<f4")


@dataclass
class Annotation:
    box2d: Box2D
    box3d: Box3D
    category: str = "vehicle"


@dataclass
class Frame:
    id: str
    cloud: PointCloud
    camera: CameraModel
    T_cam_from_sensor: RigidTransform
    annotations: List[Annotation] = field(default_factory=list)
    cloud_path: str = ""

    @property
    def sensor_from_cam(self) -> RigidTransform:
        return self.T_cam_from_sensor.inverse()


def read_cloud(path) -> np.ndarray:
    raw = np.fromfile(path, dtype=CLOUD_DTYPE)
    if raw.size % 4:
        raise ParseError(path, f"{raw.size * 4} bytes is not a whole number of 16-byte points")
    return raw.reshape(-1, 4).astype(np.float32)


def write_cloud(path, points: np.ndarray) -> None:
    np.ascontiguousarray(points, dtype=CLOUD_DTYPE).tofile(path)


def _frame_to_json(fr: Frame) -> dict:
    cam = fr.camera
    pose = fr.T_cam_from_sensor
    return {
        "id": fr.id,
        "cloud": fr.cloud_path,
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                   "width": cam.width, "height": cam.height},
        "T_cam_from_sensor": {"q": list(pose.rotation), "t": list(pose.translation)},
        "annotations": [
            {
                "box2d": a.box2d.as_list(),
                "box3d": {"center": list(a.box3d.center), "size": list(a.box3d.size),
                          "yaw": a.box3d.yaw},
                "category": a.category,
            }
            for a in fr.annotations
        ],
    }


def _cloud_path_for(fr: Frame) -> str:
    return fr.cloud_path or f"clouds/{fr.id}.bin"


def save_dataset(frames: Sequence[Frame], path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for fr in frames:
        rel = _cloud_path_for(fr)
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        write_cloud(target, fr.cloud.points)
        rec = _frame_to_json(fr)
        rec["cloud"] = rel
        records.append(rec)
    doc = {"version": MANIFEST_VERSION, "frames": records}
    with open(root / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _parse_frame(rec: dict, root: Path, manifest: Path) -> Frame:
    fid = str(rec["id"])
    c = rec["camera"]
    try:
        cam = CameraModel(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                          int(c["width"]), int(c["height"]))
        pose = RigidTransform(tuple(rec["T_cam_from_sensor"]["q"]),
                              tuple(rec["T_cam_from_sensor"]["t"]))
    except InvalidInput as exc:
        raise InvariantViolation(fid, str(exc)) from None

    rel = rec["cloud"]
    cloud_file = root / rel
    if not cloud_file.is_file():
        raise ParseError(cloud_file, f"cloud file for frame {fid!r} not found")
    pts = read_cloud(cloud_file)
    if not np.all(np.isfinite(pts)):
        raise InvariantViolation(fid, "cloud has non-finite values")
    if pts.shape[0] and (pts[:, 3].max() > 1.0 or pts[:, 3].min() < 0.0):
        # raw 8-bit intensities (nuScenes style) are rescaled to [0, 1]
        pts[:, 3] = np.clip(pts[:, 3] / 255.0, 0.0, 1.0)

    anns = []
    for a in rec.get("annotations", []):
        b2 = Box2D(*(float(v) for v in a["box2d"])).clamped(cam)
        if not b2.is_valid():
            raise InvariantViolation(fid, f"2D box {a['box2d']} is empty inside the image")
        b3 = a["box3d"]
        yaw = float(b3["yaw"])
        if not (-math.pi < yaw <= math.pi):
            raise InvariantViolation(fid, f"yaw {yaw} outside (-pi, pi]")
        try:
            box3d = Box3D(tuple(b3["center"]), tuple(b3["size"]), yaw)
        except InvalidInput as exc:
            raise InvariantViolation(fid, str(exc)) from None
        anns.append(Annotation(b2, box3d, a.get("category", "vehicle")))
    return Frame(fid, PointCloud(pts), cam, pose, anns, rel)


def load_dataset(path) -> List[Frame]:
    root = Path(path)
    manifest = root / MANIFEST if root.is_dir() else root
    root = manifest.parent
    if not manifest.is_file():
        raise ParseError(manifest, "manifest not found")
    text = manifest.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(manifest, exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ParseError(manifest, "missing 'frames' list")
    frames = []
    for k, rec in enumerate(doc["frames"]):
        try:
            frames.append(_parse_frame(rec, root, manifest))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(manifest, f"frame #{k}: malformed record ({exc!r})") from None
    return frames


def split_dataset(frames: Sequence, train_fraction: float = 0.8, seed: int = 0) -> Tuple[list, list]:
    if not 0.0 < train_fraction < 1.0:
        raise InvalidFraction(f"train fraction {train_fraction} outside (0, 1)")
    order = np.random.default_rng(seed).permutation(len(frames))
    n_train = int(round(train_fraction * len(frames)))
    shuffled = [frames[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]

