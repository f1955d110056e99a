"""Detection-stream conditioning: score thresholding and 3D-IoU NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon

from .state import Detection


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box: BEV center + z center, (l, w, h) extents, yaw."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    score: float = 1.0

    def bev_polygon(self) -> Polygon:
        cx, cy, _ = self.center
        l, w, _ = self.size
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        half = np.array(
            [[l / 2, w / 2], [l / 2, -w / 2], [-l / 2, -w / 2], [-l / 2, w / 2]]
        )
        rot = np.array([[c, -s], [s, c]])
        corners = half @ rot.T + np.array([cx, cy])
        return Polygon(corners)

    def z_interval(self) -> tuple[float, float]:
        h = self.size[2]
        return self.center[2] - h / 2, self.center[2] + h / 2

    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h


def detection_box(det: Detection) -> Box3D:
    p = det.passthrough
    return Box3D(
        center=(det.center[0], det.center[1], p.z),
        size=p.size,
        yaw=p.yaw,
        score=p.detection_score,
    )


def score_filter(detections: Sequence[Detection], threshold: float) -> list[Detection]:
    """Keep detections scoring strictly above the threshold, order preserved."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"score threshold {threshold} outside [0, 1]")
    return [d for d in detections if d.score > threshold]


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Rotated-BEV intersection area x vertical overlap, over union volume.

    Exact for upright boxes; degenerate boxes give 0 by convention.
    """
    va, vb = a.volume(), b.volume()
    if va <= 0 or vb <= 0:
        return 0.0
    za0, za1 = a.z_interval()
    zb0, zb1 = b.z_interval()
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0:
        return 0.0
    area = a.bev_polygon().intersection(b.bev_polygon()).area
    inter = area * dz
    union = va + vb - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def nms(detections: Sequence[Detection], nms_threshold: float) -> list[Detection]:
    """Greedy score-descending suppression with 3D IoU.

    A box is removed iff its IoU with an already-kept box exceeds the
    threshold; output is sorted by score descending (input order breaks
    score ties).
    """
    if not 0.0 <= nms_threshold <= 1.0:
        raise ValueError(f"NMS threshold {nms_threshold} outside [0, 1]")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[int] = []
    kept_boxes: list[Box3D] = []
    for i in order:
        box = detection_box(detections[i])
        if all(iou_3d(box, kb) <= nms_threshold for kb in kept_boxes):
            kept.append(i)
            kept_boxes.append(box)
    return [detections[i] for i in kept]
