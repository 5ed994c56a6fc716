"""Box overlap measures and the evaluation report."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import EmptyEvaluation, MismatchedLengths
from .geometry import Box3D, wrap_angle

SLIVER_AREA = 1e-12
PARAMETERS = ("x", "y", "z", "yaw", "w", "l", "h")
HIST_BINS = 10


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip ``subject`` by each edge of the CCW convex polygon ``clip``."""
    out = [tuple(p) for p in subject]
    m = len(clip)
    for k in range(m):
        if not out:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % m]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    t = s_prev / (s_prev - s_cur)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif s_prev >= 0:
                t = s_prev / (s_prev - s_cur)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, s_prev = cur, s_cur
    return np.array(out, dtype=float).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_convex(a.footprint(), b.footprint())
    area = polygon_area(inter)
    return area if area >= SLIVER_AREA else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    union = a.w * a.l + b.w * b.l - inter
    return min(1.0, max(0.0, inter / union)) if union > 0 else 0.0


def iou_3d(a: Box3D, b: Box3D) -> float:
    inter_area = bev_intersection_area(a, b)
    top = min(a.center[2] + a.h / 2, b.center[2] + b.h / 2)
    bottom = max(a.center[2] - a.h / 2, b.center[2] - b.h / 2)
    inter = inter_area * max(0.0, top - bottom)
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union)) if union > 0 else 0.0


def ase(pred: Box3D, gt: Box3D) -> float:
    inter = float(np.prod(np.minimum(pred.size, gt.size)))
    return 1.0 - inter / (pred.volume + gt.volume - inter)


def aoe(pred: Box3D, gt: Box3D) -> float:
    return abs(wrap_angle(pred.yaw - gt.yaw))


def parameter_accuracy(preds: Sequence[Box3D], gts: Sequence[Box3D]) -> np.ndarray:
    """Bounded relative-error score per parameter, percent, ordered x, y, z, yaw, w, l, h."""
    if len(preds) != len(gts):
        raise MismatchedLengths(f"{len(preds)} predictions vs {len(gts)} ground-truth boxes")
    if not preds:
        return np.full(7, np.nan)
    scores = np.empty((len(preds), 7))
    for k, (p, g) in enumerate(zip(preds, gts)):
        for j in range(3):
            scores[k, j] = 1 - abs(p.center[j] - g.center[j]) / max(abs(g.center[j]), 1.0)
        scores[k, 3] = 1 - aoe(p, g) / math.pi
        for j in range(3):
            scores[k, 4 + j] = 1 - abs(p.size[j] - g.size[j]) / g.size[j]
    return np.clip(scores, 0.0, None).mean(axis=0) * 100.0


@dataclass
class EvalReport:
    accuracy: dict
    avg: float
    avg_3d: float
    avg_bev: float
    frac_iou_over_50: float
    ase: float
    aoe: float
    matched: int
    skipped: int
    hist_edges: List[float]
    hist_counts: List[int]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
            w.writerow([f"{lo:.1f}", f"{hi:.1f}", c])
        return buf.getvalue()

    def table_row(self, label: str = "Test") -> str:
        cols = [self.accuracy[p] for p in PARAMETERS] + [self.avg, self.avg_3d, self.avg_bev]
        head = "Set      " + " ".join(f"{h:>7}" for h in (*PARAMETERS, "Avg", "Avg3D", "AvgBEV"))
        return head + "\n" + f"{label:<8} " + " ".join(f"{c:7.1f}" for c in cols)


def summarize_accuracies(acc) -> float:
    return float(np.mean(acc))


def build_report(preds: Sequence[Optional[Box3D]], gts: Sequence[Box3D]) -> EvalReport:
    """Score identity-matched pairs; ``None`` predictions count as skipped."""
    if len(preds) != len(gts):
        raise MismatchedLengths(f"{len(preds)} predictions vs {len(gts)} ground-truth boxes")
    pairs = [(p, g) for p, g in zip(preds, gts) if p is not None]
    if not pairs:
        raise EmptyEvaluation("no matched prediction/ground-truth pairs")
    mp, mg = [p for p, _ in pairs], [g for _, g in pairs]
    acc = parameter_accuracy(mp, mg)
    ious = np.array([iou_3d(p, g) for p, g in pairs])
    bevs = np.array([iou_bev(p, g) for p, g in pairs])
    counts, edges = np.histogram(ious, bins=HIST_BINS, range=(0.0, 1.0))
    return EvalReport(
        accuracy={name: float(v) for name, v in zip(PARAMETERS, acc)},
        avg=summarize_accuracies(acc),
        avg_3d=float(ious.mean() * 100),
        avg_bev=float(bevs.mean() * 100),
        frac_iou_over_50=float((ious > 0.5).mean()),
        ase=float(np.mean([ase(p, g) for p, g in pairs])),
        aoe=float(np.mean([aoe(p, g) for p, g in pairs])),
        matched=len(pairs),
        skipped=len(preds) - len(pairs),
        hist_edges=[float(e) for e in edges],
        hist_counts=[int(c) for c in counts],
    )

