"""High-level camera-LiDAR fusion for 3D vehicle boxes with classical ML."""

from .detector import DetectorModel, PipelineParams, predict_frame, train_detector
from .geometry import Box2D, Box3D, CameraModel, Frustum, PointCloud, RigidTransform
from .metrics import EvalReport, build_report, iou_3d, iou_bev

__version__ = "0.1.0"

__all__ = [
    "Box2D",
    "Box3D",
    "CameraModel",
    "DetectorModel",
    "EvalReport",
    "Frustum",
    "PipelineParams",
    "PointCloud",
    "RigidTransform",
    "build_report",
    "iou_3d",
    "iou_bev",
    "predict_frame",
    "train_detector",
]
