"""Teacher-side fusion: merge box-detector and pose-derived detections with
NMS, apply the confidence threshold and the temporal quality gate, and emit
low-resolution training annotations."""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .evaluation import iou
from .geometry import OmniGeometry, PixelMap, RectifyPoly, pano_to_omni_box, scale_box
from .images import downscale_area
from .model import (
    SOURCE_FUSED,
    Detection,
    FrameAnnotation,
    FrameDetections,
    annotation_from_detections,
    pose_to_detection,
    retag,
)


@dataclass
class FusionConfig:
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    pose_box_margin: float = 0.25
    pose_margin_per_side: bool = False
    pose_min_keypoints: int = 5
    target_resolutions: tuple[tuple[int, int], ...] = ((96, 96),)

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if not 0.0 < self.nms_iou_threshold < 1.0:
            raise ValueError("nms_iou_threshold must lie in (0, 1)")
        if self.pose_box_margin < 0:
            raise ValueError("pose_box_margin must be >= 0")
        if self.pose_min_keypoints < 0:
            raise ValueError("pose_min_keypoints must be >= 0")
        self.target_resolutions = tuple((int(w), int(h)) for w, h in self.target_resolutions)
        if any(w <= 0 or h <= 0 for w, h in self.target_resolutions):
            raise ValueError("target resolutions must be positive")


class TemporalGate:
    """Per-frame accept/drop rule rejecting sudden drops in detection count.

    A frame is dropped iff the window is full and its count falls below
    median(window) - drop_margin; accepted counts advance the window,
    dropped ones leave it untouched.
    """

    def __init__(self, window: int = 15, drop_margin: int = 1):
        if window < 1:
            raise ValueError("window must hold at least one frame")
        self.capacity = window
        self.drop_margin = drop_margin
        self._counts: deque[int] = deque(maxlen=window)

    def update(self, count: int) -> bool:
        """True = accept (count pushed), False = drop (window unchanged)."""
        if len(self._counts) == self.capacity and count < statistics.median(self._counts) - self.drop_margin:
            return False
        self._counts.append(count)
        return True

    @property
    def window(self) -> tuple[int, ...]:
        return tuple(self._counts)


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Keeps the highest-confidence remaining detection and discards every
    other detection overlapping it with IoU > iou_threshold; ties in
    confidence break by larger area, then input order, for determinism.
    Output is ordered by descending confidence.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, -dets[i].box.area, i))
    kept: list[int] = []
    suppressed = [False] * len(dets)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        for j in order:
            if not suppressed[j] and j != i and iou(dets[i].box, dets[j].box) > iou_threshold:
                suppressed[j] = True
    return [dets[i] for i in kept]


def fuse_frame(frame: FrameDetections, cfg: FusionConfig) -> list[Detection]:
    """Combine the box and pose streams into one detection per person."""
    pose_dets = []
    for pose in frame.poses:
        det = pose_to_detection(
            pose,
            margin_fraction=cfg.pose_box_margin,
            min_keypoints=cfg.pose_min_keypoints,
            per_side=cfg.pose_margin_per_side,
        )
        if det is not None:
            pose_dets.append(det)
    candidates = [
        d for d in list(frame.boxes) + pose_dets if d.confidence >= cfg.confidence_threshold
    ]
    return [retag(d, SOURCE_FUSED) for d in nms(candidates, cfg.nms_iou_threshold)]


@dataclass
class AnnotatedFrame:
    """One accepted frame: fused omni boxes plus per-resolution outputs."""

    frame_id: str
    fused: list[Detection]
    omni_boxes: list[Detection]
    outputs: list[tuple[tuple[int, int], np.ndarray, FrameAnnotation]] = field(default_factory=list)


def map_fused_to_omni(fused: list[Detection], geom: OmniGeometry, poly: RectifyPoly) -> list[Detection]:
    return [
        Detection(pano_to_omni_box(geom, poly, d.box), d.confidence, d.class_id, d.source)
        for d in fused
    ]


def annotate_frame(
    omni_image: np.ndarray,
    frame_dets: FrameDetections,
    geom: OmniGeometry,
    poly: RectifyPoly,
    cfg: FusionConfig,
    gate: TemporalGate,
) -> AnnotatedFrame | None:
    """Run fuse -> gate -> back-project -> downscale for one frame.

    Returns None when the gate drops the frame.  The caller must feed frames
    in temporal order; the gate is stateful.
    """
    if omni_image.shape[0] != geom.image_height or omni_image.shape[1] != geom.image_width:
        raise ValueError(
            f"frame {frame_dets.frame_id}: image is "
            f"{omni_image.shape[1]}x{omni_image.shape[0]}, geometry expects "
            f"{geom.image_width}x{geom.image_height}"
        )
    fused = fuse_frame(frame_dets, cfg)
    if not gate.update(len(fused)):
        return None
    omni_dets = map_fused_to_omni(fused, geom, poly)
    result = AnnotatedFrame(frame_dets.frame_id, fused, omni_dets)
    omni_dims = (geom.image_width, geom.image_height)
    for res in cfg.target_resolutions:
        small = downscale_area(omni_image, res)
        scaled = [
            Detection(scale_box(d.box, omni_dims, res), d.confidence, d.class_id, d.source)
            for d in omni_dets
        ]
        ann = annotation_from_detections(scaled, res, frame_id=frame_dets.frame_id)
        result.outputs.append((res, small, ann))
    return result
