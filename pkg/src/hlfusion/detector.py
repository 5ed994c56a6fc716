"""End-to-end detector: frustum -> clusters -> features -> seven SVRs -> boxes."""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import features as feat
from .dataio import Frame
from .errors import CalibrationMissing, DegenerateBox, NoTrainingData, VersionMismatch
from .geometry import DEFAULT_FAR, DEFAULT_NEAR, Box3D, cull_points, frustum_from_box2d
from .regression import SvrModel, SvrParams, fit_svr
from .segmentation import (
    DEFAULT_Z_THRESHOLD,
    DbscanParams,
    dbscan,
    remove_ground,
    select_object_cluster,
)

MODEL_VERSION = 1
STAGES = ("instance_segmentation", "feature_extraction", "regression")
YAW_TARGET = feat.TARGET_NAMES.index("yaw")


@dataclass(frozen=True)
class PipelineParams:
    dbscan: DbscanParams = DbscanParams()
    svr: SvrParams = SvrParams()
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR
    z_threshold: float = DEFAULT_Z_THRESHOLD
    use_box2d_features: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineParams":
        return cls(
            dbscan=DbscanParams(**d["dbscan"]),
            svr=SvrParams(**d["svr"]),
            near=float(d["near"]),
            far=float(d["far"]),
            z_threshold=float(d["z_threshold"]),
            use_box2d_features=bool(d.get("use_box2d_features", True)),
        )


class StageTimer:
    """Accumulates monotonic wall time per pipeline stage."""

    def __init__(self):
        self.totals: Dict[str, float] = {s: 0.0 for s in STAGES}

    def add(self, stage: str, seconds: float) -> None:
        self.totals[stage] += seconds

    @property
    def total(self) -> float:
        return sum(self.totals.values())


@dataclass
class ObjectSample:
    features: np.ndarray
    centroid: np.ndarray
    canon: feat.CanonicalFrame


def segment_object(frame: Frame, box2d, p: PipelineParams, xyz: Optional[np.ndarray] = None):
    """Points of the selected cluster inside the frustum of ``box2d`` (or None) and the frustum."""
    if frame.camera is None or frame.T_cam_from_sensor is None:
        raise CalibrationMissing(f"frame {frame.id!r} lacks calibration")
    try:
        fr = frustum_from_box2d(box2d, frame.camera, frame.sensor_from_cam, p.near, p.far)
    except DegenerateBox:
        return None, None
    if xyz is None:
        xyz = frame.cloud.xyz
    idx = cull_points(xyz, fr)
    pts = xyz[idx]
    pts = pts[remove_ground(pts, p.z_threshold)]
    clustering = dbscan(pts, p.dbscan)
    members = select_object_cluster(clustering, pts)
    if members is None:
        return None, fr
    return pts[members], fr


def describe_object(cluster: np.ndarray, fr, box2d, camera, p: PipelineParams) -> ObjectSample:
    canon = feat.canonical_frame(fr)
    f = feat.extract_features(cluster, fr, fr.box, camera, canon, use_box2d=p.use_box2d_features)
    return ObjectSample(f, cluster.mean(axis=0), canon)


@dataclass
class DetectorModel:
    models: List[SvrModel]
    params: PipelineParams
    feature_order: str = feat.FEATURE_ORDER_VERSION

    def __post_init__(self):
        if len(self.models) != len(feat.TARGET_NAMES):
            raise ValueError(f"need {len(feat.TARGET_NAMES)} sub-models, got {len(self.models)}")

    def predict_targets(self, f: np.ndarray) -> np.ndarray:
        return np.array([m.predict(f) for m in self.models])

    def to_json(self) -> str:
        doc = {
            "version": MODEL_VERSION,
            "feature_order": self.feature_order,
            "hyperparams": self.params.to_dict(),
            "models": [m.to_dict() for m in self.models],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DetectorModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_VERSION or doc.get("feature_order") != feat.FEATURE_ORDER_VERSION:
            raise VersionMismatch(
                f"model file has version={doc.get('version')!r}, feature_order={doc.get('feature_order')!r}; "
                f"expected {MODEL_VERSION}, {feat.FEATURE_ORDER_VERSION!r}")
        models = [SvrModel.from_dict(m) for m in doc["models"]]
        return cls(models, PipelineParams.from_dict(doc["hyperparams"]), doc["feature_order"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "DetectorModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass
class TrainingResult:
    model: DetectorModel
    n_objects: int
    n_skipped: int
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    per_object_ms: Dict[str, List[float]] = field(default_factory=dict)


def build_training_set(frames: Sequence[Frame], p: PipelineParams, timer: Optional[StageTimer] = None):
    timer = timer or StageTimer()
    X, Y = [], []
    seg_ms, feat_ms = [], []
    skipped = total = 0
    for frame in frames:
        xyz = frame.cloud.xyz
        for ann in frame.annotations:
            total += 1
            t0 = time.perf_counter()
            cluster, fr = segment_object(frame, ann.box2d, p, xyz)
            t1 = time.perf_counter()
            timer.add("instance_segmentation", t1 - t0)
            seg_ms.append((t1 - t0) * 1e3)
            if cluster is None:
                skipped += 1
                continue
            t1 = time.perf_counter()
            obj = describe_object(cluster, fr, ann.box2d, frame.camera, p)
            Y.append(feat.encode_target(ann.box3d, obj.centroid, obj.canon))
            X.append(obj.features)
            t2 = time.perf_counter()
            timer.add("feature_extraction", t2 - t1)
            feat_ms.append((t2 - t1) * 1e3)
    return np.array(X).reshape(-1, feat.N_FEATURES), np.array(Y).reshape(-1, 7), total, skipped, seg_ms, feat_ms


def fit_targets(X: np.ndarray, Y: np.ndarray, svr: SvrParams, threads: int = 1) -> List[SvrModel]:
    def fit_one(k):
        return fit_svr(X, Y[:, k], svr, normalize_target=(k != YAW_TARGET),
                       target=feat.TARGET_NAMES[k])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fit_one, range(Y.shape[1])))
    return [fit_one(k) for k in range(Y.shape[1])]


def train_detector(frames: Sequence[Frame], p: PipelineParams = PipelineParams(),
                   threads: int = 1) -> TrainingResult:
    timer = StageTimer()
    X, Y, total, skipped, seg_ms, feat_ms = build_training_set(frames, p, timer)
    if X.shape[0] == 0:
        raise NoTrainingData(f"none of {total} annotated objects produced a cluster")
    t0 = time.perf_counter()
    models = fit_targets(X, Y, p.svr, threads)
    timer.add("regression", time.perf_counter() - t0)
    seconds = dict(timer.totals)
    seconds["total"] = timer.total
    return TrainingResult(DetectorModel(models, p), total, skipped, seconds,
                          {"instance_segmentation": seg_ms, "feature_extraction": feat_ms})


def predict_box(model: DetectorModel, frame: Frame, box2d, xyz=None,
                timer: Optional[StageTimer] = None) -> Optional[Box3D]:
    p = model.params
    t0 = time.perf_counter()
    cluster, fr = segment_object(frame, box2d, p, xyz)
    t1 = time.perf_counter()
    if timer:
        timer.add("instance_segmentation", t1 - t0)
    if cluster is None:
        return None
    obj = describe_object(cluster, fr, box2d, frame.camera, p)
    t2 = time.perf_counter()
    if timer:
        timer.add("feature_extraction", t2 - t1)
    targets = model.predict_targets(obj.features)
    box = feat.decode_target(targets, obj.centroid, obj.canon)
    if timer:
        timer.add("regression", time.perf_counter() - t2)
    return box


def predict_frame(model: DetectorModel, frame: Frame, boxes2d=None,
                  timer: Optional[StageTimer] = None) -> List[Optional[Box3D]]:
    """One prediction slot per 2D box (annotation boxes by default)."""
    if frame.camera is None or frame.T_cam_from_sensor is None:
        raise CalibrationMissing(f"frame {frame.id!r} lacks calibration")
    if boxes2d is None:
        boxes2d = [a.box2d for a in frame.annotations]
    if not boxes2d:
        return []
    xyz = frame.cloud.xyz
    return [predict_box(model, frame, b, xyz, timer) for b in boxes2d]
