"""Pipeline configuration: one YAML file is the source of truth for every
geometry, fusion, gating and evaluation parameter."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .fusion import FusionConfig
from .geometry import OmniGeometry, RectifyPoly


class ConfigError(ValueError):
    pass


@dataclass
class GateParams:
    window: int = 15
    drop_margin: int = 1


@dataclass
class PipelineConfig:
    geometry: OmniGeometry
    poly: RectifyPoly
    fusion: FusionConfig
    gate: GateParams
    eval_ious: tuple[float, ...] = (0.4, 0.5)
    interpolation: str = "bilinear"
    fill_value: int = 0
    frames_dir: str = "frames"
    detections_dir: str = "detections"
    output_dir: str = "output"


def default_config() -> PipelineConfig:
    """The recording setup this toolkit was built around: 876x876 donut
    frames, 0.5 degree unwarp columns, quadratic row rectification."""
    return PipelineConfig(
        geometry=OmniGeometry(876, 876, 438.0, 438.0, 438.0, 0.5),
        poly=RectifyPoly(-0.001387, 1.247, -2.007, y_min=2.0, y_max=438.0),
        fusion=FusionConfig(),
        gate=GateParams(),
    )


def _section(data: dict, key: str) -> dict:
    value = data.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{key}' must be a mapping")
    return value


def _known(section: dict, name: str, keys: set[str]):
    unknown = set(section) - keys
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {', '.join(sorted(unknown))}")


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _known(data, "config", {"geometry", "rectify", "fusion", "gate", "annotate", "evaluate", "paths"})
    try:
        g = _section(data, "geometry")
        _known(g, "geometry", {"image_width", "image_height", "center_x", "center_y", "radius", "angular_step"})
        geometry = OmniGeometry(
            int(g.get("image_width", 876)),
            int(g.get("image_height", 876)),
            float(g.get("center_x", 438.0)),
            float(g.get("center_y", 438.0)),
            float(g.get("radius", 438.0)),
            float(g.get("angular_step", 0.5)),
        )
        r = _section(data, "rectify")
        _known(r, "rectify", {"a", "b", "c", "valid_range"})
        y_min, y_max = r.get("valid_range", [2.0, 438.0])
        poly = RectifyPoly(
            float(r.get("a", -0.001387)),
            float(r.get("b", 1.247)),
            float(r.get("c", -2.007)),
            y_min=float(y_min),
            y_max=float(y_max),
        )
        f = _section(data, "fusion")
        _known(
            f,
            "fusion",
            {
                "confidence_threshold",
                "nms_iou_threshold",
                "pose_box_margin",
                "pose_margin_per_side",
                "pose_min_keypoints",
            },
        )
        a = _section(data, "annotate")
        _known(a, "annotate", {"target_resolutions", "interpolation", "fill_value"})
        fusion = FusionConfig(
            confidence_threshold=float(f.get("confidence_threshold", 0.25)),
            nms_iou_threshold=float(f.get("nms_iou_threshold", 0.45)),
            pose_box_margin=float(f.get("pose_box_margin", 0.25)),
            pose_margin_per_side=bool(f.get("pose_margin_per_side", False)),
            pose_min_keypoints=int(f.get("pose_min_keypoints", 5)),
            target_resolutions=tuple(
                (int(w), int(h)) for w, h in a.get("target_resolutions", [[96, 96]])
            ),
        )
        gate_sec = _section(data, "gate")
        _known(gate_sec, "gate", {"window", "drop_margin"})
        gate = GateParams(int(gate_sec.get("window", 15)), int(gate_sec.get("drop_margin", 1)))
        e = _section(data, "evaluate")
        _known(e, "evaluate", {"iou_thresholds"})
        eval_ious = tuple(float(t) for t in e.get("iou_thresholds", [0.4, 0.5]))
        p = _section(data, "paths")
        _known(p, "paths", {"frames_dir", "detections_dir", "output_dir"})
        interpolation = str(a.get("interpolation", "bilinear"))
        if interpolation not in ("bilinear", "nearest"):
            raise ConfigError(f"interpolation must be bilinear or nearest, got {interpolation!r}")
        return PipelineConfig(
            geometry=geometry,
            poly=poly,
            fusion=fusion,
            gate=gate,
            eval_ious=eval_ious,
            interpolation=interpolation,
            fill_value=int(a.get("fill_value", 0)),
            frames_dir=str(p.get("frames_dir", "frames")),
            detections_dir=str(p.get("detections_dir", "detections")),
            output_dir=str(p.get("output_dir", "output")),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "geometry": {
            "image_width": cfg.geometry.image_width,
            "image_height": cfg.geometry.image_height,
            "center_x": cfg.geometry.center_x,
            "center_y": cfg.geometry.center_y,
            "radius": cfg.geometry.radius,
            "angular_step": cfg.geometry.angular_step,
        },
        "rectify": {
            "a": cfg.poly.a,
            "b": cfg.poly.b,
            "c": cfg.poly.c,
            "valid_range": [cfg.poly.y_min, cfg.poly.y_max],
        },
        "fusion": {
            "confidence_threshold": cfg.fusion.confidence_threshold,
            "nms_iou_threshold": cfg.fusion.nms_iou_threshold,
            "pose_box_margin": cfg.fusion.pose_box_margin,
            "pose_margin_per_side": cfg.fusion.pose_margin_per_side,
            "pose_min_keypoints": cfg.fusion.pose_min_keypoints,
        },
        "gate": {"window": cfg.gate.window, "drop_margin": cfg.gate.drop_margin},
        "annotate": {
            "target_resolutions": [list(res) for res in cfg.fusion.target_resolutions],
            "interpolation": cfg.interpolation,
            "fill_value": cfg.fill_value,
        },
        "evaluate": {"iou_thresholds": list(cfg.eval_ious)},
        "paths": {
            "frames_dir": cfg.frames_dir,
            "detections_dir": cfg.detections_dir,
            "output_dir": cfg.output_dir,
        },
    }


def parse_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(data or {})


def serialize_config(cfg: PipelineConfig) -> str:
    """Normalized form: sorted keys, block style."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


def write_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")
