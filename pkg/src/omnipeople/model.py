"""Detection data model, the per-frame detection wire format and the
plain-text annotation format consumed by detector retraining.

A frame's detections travel as one JSON document (conventional suffix
``.det``) with top-level fields ``frame_id``, ``width``, ``height``,
``space`` ("omni" or "pano"), ``boxes`` and ``poses``.  Annotations are
emitted one text file per frame, one object per line::

    class_id cx cy w h

with all four geometry values normalized to [0, 1] and center-based, plus a
JSON-lines manifest mapping frame_id to image path and dimensions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

SPACE_OMNI = "omni"
SPACE_PANO = "pano"

SOURCE_BOX = "box_detector"
SOURCE_POSE = "pose_derived"
SOURCE_FUSED = "fused"

# Boxes thinner than this after any conversion are inflated; degenerate
# boxes break IoU.
MIN_BOX_SIZE = 2.0


class WireFormatError(ValueError):
    """A detection document violates the wire schema."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with subpixel top-left corner and extents.

    ``space`` tags the coordinate system ("omni", "pano" or "<W>x<H>" for a
    downscaled frame); it is advisory and not compared by the geometry ops.
    In pano space ``x + w`` may exceed the pano width, meaning the box wraps
    across the 360-degree seam.
    """

    x: float
    y: float
    w: float
    h: float
    space: str | None = None

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.w, self.h))):
            raise ValueError("box coordinates must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box extents must be positive")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    class_id: int = 0
    source: str = SOURCE_BOX

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range ({self.confidence})")


@dataclass(frozen=True)
class Keypoint:
    part_id: int
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range ({self.confidence})")


@dataclass(frozen=True)
class Pose:
    """Named 2D keypoints of one person; only detected parts are present."""

    keypoints: tuple[Keypoint, ...]
    person_score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        ids = [k.part_id for k in self.keypoints]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate part_id within a pose")
        if self.person_score is not None and not 0.0 <= self.person_score <= 1.0:
            raise ValueError(f"person_score out of range ({self.person_score})")

    @property
    def confidence(self) -> float:
        """person_score, or the mean keypoint confidence when absent."""
        if self.person_score is not None:
            return self.person_score
        if not self.keypoints:
            return 0.0
        return sum(k.confidence for k in self.keypoints) / len(self.keypoints)


@dataclass
class FrameDetections:
    frame_id: str
    width: int
    height: int
    space: str = SPACE_PANO
    boxes: list[Detection] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)


@dataclass
class FrameAnnotation:
    """Per-frame ground truth: (class_id, cx, cy, w, h) normalized tuples."""

    frame_id: str
    width: int = 0
    height: int = 0
    objects: list[tuple[int, float, float, float, float]] = field(default_factory=list)


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise WireFormatError(f"{where}: missing field '{key}'")
    return record[key]


def _clip_box(x, y, w, h, width, height, where: str) -> tuple[float, float, float, float]:
    x0 = max(float(x), 0.0)
    y0 = max(float(y), 0.0)
    x1 = min(float(x) + float(w), float(width))
    y1 = min(float(y) + float(h), float(height))
    if x1 <= x0 or y1 <= y0:
        raise WireFormatError(f"{where}: box lies outside the image bounds")
    return x0, y0, x1 - x0, y1 - y0


def parse_frame_detections(document: str, name: str = "document") -> FrameDetections:
    """Parse and validate one detection wire document.

    Boxes are clipped to the image bounds; malformed records raise
    WireFormatError naming the offending entry.
    """
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise WireFormatError(f"{name}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise WireFormatError(f"{name}: top level must be an object")

    frame_id = str(_require(data, "frame_id", name))
    width = _require(data, "width", name)
    height = _require(data, "height", name)
    if not isinstance(width, int) or not isinstance(height, int) or width <= 0 or height <= 0:
        raise WireFormatError(f"{name}: width/height must be positive integers")
    space = _require(data, "space", name)
    if space not in (SPACE_OMNI, SPACE_PANO):
        raise WireFormatError(f"{name}: space must be 'omni' or 'pano', got {space!r}")

    boxes = []
    for i, rec in enumerate(data.get("boxes", [])):
        where = f"{name}: boxes[{i}]"
        try:
            x = float(_require(rec, "x", where))
            y = float(_require(rec, "y", where))
            w = float(_require(rec, "w", where))
            h = float(_require(rec, "h", where))
            conf = float(_require(rec, "confidence", where))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, WireFormatError):
                raise
            raise WireFormatError(f"{where}: non-numeric field ({exc})") from exc
        if not all(map(math.isfinite, (x, y, w, h))):
            raise WireFormatError(f"{where}: non-finite coordinate")
        if w <= 0 or h <= 0:
            raise WireFormatError(f"{where}: nonpositive box ({w} x {h})")
        if not 0.0 <= conf <= 1.0:
            raise WireFormatError(f"{where}: confidence out of range ({conf})")
        cx, cy, cw, ch = _clip_box(x, y, w, h, width, height, where)
        boxes.append(
            Detection(
                box=BoundingBox(cx, cy, cw, ch, space=space),
                confidence=conf,
                class_id=int(rec.get("class_id", 0)),
                source=SOURCE_BOX,
            )
        )

    poses = []
    for i, rec in enumerate(data.get("poses", [])):
        where = f"{name}: poses[{i}]"
        kps = []
        for j, kp in enumerate(_require(rec, "keypoints", where)):
            kwhere = f"{where}.keypoints[{j}]"
            try:
                part = int(_require(kp, "part_id", kwhere))
                x = float(_require(kp, "x", kwhere))
                y = float(_require(kp, "y", kwhere))
                conf = float(_require(kp, "confidence", kwhere))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, WireFormatError):
                    raise
                raise WireFormatError(f"{kwhere}: non-numeric field ({exc})") from exc
            if not 0.0 <= conf <= 1.0:
                raise WireFormatError(f"{kwhere}: confidence out of range ({conf})")
            if not math.isfinite(x) or not math.isfinite(y):
                raise WireFormatError(f"{kwhere}: non-finite coordinate")
            # Keypoints are clipped rather than rejected: a limb may stick out.
            kps.append(Keypoint(part, min(max(x, 0.0), width), min(max(y, 0.0), height), conf))
        score = rec.get("person_score")
        if score is not None:
            score = float(score)
            if not 0.0 <= score <= 1.0:
                raise WireFormatError(f"{where}: person_score out of range ({score})")
        try:
            poses.append(Pose(tuple(kps), person_score=score))
        except ValueError as exc:
            raise WireFormatError(f"{where}: {exc}") from exc

    return FrameDetections(frame_id, width, height, space, boxes, poses)


def serialize_frame_detections(frame: FrameDetections) -> str:
    """Inverse of parse_frame_detections (identity up to float formatting)."""
    doc = {
        "frame_id": frame.frame_id,
        "width": frame.width,
        "height": frame.height,
        "space": frame.space,
        "boxes": [
            {
                "x": d.box.x,
                "y": d.box.y,
                "w": d.box.w,
                "h": d.box.h,
                "confidence": d.confidence,
                "class_id": d.class_id,
            }
            for d in frame.boxes
        ],
        "poses": [
            {
                **({"person_score": p.person_score} if p.person_score is not None else {}),
                "keypoints": [
                    {"part_id": k.part_id, "x": k.x, "y": k.y, "confidence": k.confidence}
                    for k in p.keypoints
                ],
            }
            for p in frame.poses
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_frame_detections(path) -> FrameDetections:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_frame_detections(fh.read(), name=str(path))


def pose_to_detection(
    pose: Pose,
    margin_fraction: float = 0.25,
    min_keypoints: int = 5,
    *,
    per_side: bool = False,
    min_size: float = MIN_BOX_SIZE,
) -> Detection | None:
    """Convert a pose to a person box, or None if it has too few keypoints.

    The tight box over the keypoints is expanded by ``margin_fraction`` per
    dimension (total, half on each side); ``per_side=True`` switches to the
    alternate reading where the margin is added on each side.  Strictly more
    than ``min_keypoints`` keypoints are required.
    """
    if len(pose.keypoints) <= min_keypoints:
        return None
    xs = [k.x for k in pose.keypoints]
    ys = [k.y for k in pose.keypoints]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    w, h = x1 - x0, y1 - y0
    grow = margin_fraction * (2.0 if per_side else 1.0)
    x0 -= w * grow / 2.0
    y0 -= h * grow / 2.0
    w *= 1.0 + grow
    h *= 1.0 + grow
    if w < min_size:
        x0 -= (min_size - w) / 2.0
        w = min_size
    if h < min_size:
        y0 -= (min_size - h) / 2.0
        h = min_size
    return Detection(
        box=BoundingBox(x0, y0, w, h),
        confidence=pose.confidence,
        source=SOURCE_POSE,
    )


def annotation_from_detections(dets: list[Detection], dims: tuple[int, int], frame_id: str = "") -> FrameAnnotation:
    """Convert same-space detections to a normalized, center-based annotation."""
    width, height = dims
    objects = []
    for d in dets:
        b = d.box
        x0 = max(b.x, 0.0)
        y0 = max(b.y, 0.0)
        x1 = min(b.x2, float(width))
        y1 = min(b.y2, float(height))
        if x1 <= x0 or y1 <= y0:
            continue
        objects.append(
            (
                d.class_id,
                (x0 + x1) / 2.0 / width,
                (y0 + y1) / 2.0 / height,
                (x1 - x0) / width,
                (y1 - y0) / height,
            )
        )
    return FrameAnnotation(frame_id, width, height, objects)


def annotation_to_boxes(ann: FrameAnnotation, dims: tuple[int, int] | None = None) -> list[BoundingBox]:
    """Denormalize annotation objects to boxes; defaults to the stored dims."""
    if dims is None:
        dims = (ann.width, ann.height)
    width, height = dims
    space = f"{width}x{height}"
    return [
        BoundingBox((cx - w / 2.0) * width, (cy - h / 2.0) * height, w * width, h * height, space=space)
        for _, cx, cy, w, h in ann.objects
    ]


def format_annotation(ann: FrameAnnotation) -> str:
    return "".join(
        f"{cls:d} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n" for cls, cx, cy, w, h in ann.objects
    )


def parse_annotation(text: str, frame_id: str = "", dims: tuple[int, int] = (0, 0)) -> FrameAnnotation:
    objects = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise WireFormatError(f"annotation line {lineno}: expected 5 fields, got {len(parts)}")
        cls = int(parts[0])
        cx, cy, w, h = map(float, parts[1:])
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and 0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise WireFormatError(f"annotation line {lineno}: values outside the normalized range")
        objects.append((cls, cx, cy, w, h))
    return FrameAnnotation(frame_id, dims[0], dims[1], objects)


def load_annotation(path, frame_id: str = "", dims: tuple[int, int] = (0, 0)) -> FrameAnnotation:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_annotation(fh.read(), frame_id=frame_id, dims=dims)


def write_manifest(entries: list[dict], path) -> None:
    """JSON-lines manifest: {"frame_id", "image", "width", "height"} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def retag(det: Detection, source: str) -> Detection:
    return replace(det, source=source)
