"""Coordinate transforms between the omni-directional (donut) frame and the
unwarped panorama, including the quadratic row rectification.

Conventions, fixed here because they are not universal:

* Angle 0 lies along the +x axis and grows counter-clockwise, so panorama
  column ``c`` samples the ray at ``theta = c * angular_step`` degrees.
  Image y grows downward, hence the minus sign in the sin term below.
* Panorama row ``r`` samples the radial distance ``rho = inverse_rectify(r)``:
  row 0 lies at the innermost usable radius and rows grow outward.  Rows
  whose inverse-rectified radius falls outside ``[0, radius]`` are marked
  out-of-image; by monotonicity they form one contiguous band at an edge.
* A pano-space box whose right edge exceeds the pano width wraps across the
  360-degree seam; angles wrap naturally when mapping back to omni space.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .model import BoundingBox

_MAP_MAGIC = b"OPIX"
_MAP_VERSION = 1
_MAP_HEADER = struct.Struct("<4sHxxIIII11d")


class GeometryError(ValueError):
    """Invalid geometry or rectification parameters."""


@dataclass(frozen=True)
class OmniGeometry:
    """Square donut frame: circle center, usable radius and degrees per
    unwarped column."""

    image_width: int
    image_height: int
    center_x: float
    center_y: float
    radius: float
    angular_step: float = 0.5

    def __post_init__(self):
        if self.image_width != self.image_height:
            raise GeometryError("omni frame must be square")
        if not 0 < self.radius <= self.image_width / 2:
            raise GeometryError("radius must lie in (0, image_width / 2]")
        if self.angular_step <= 0:
            raise GeometryError("angular_step must be positive")
        cols = 360.0 / self.angular_step
        if abs(cols - round(cols)) > 1e-9:
            raise GeometryError("360 must be an exact integer multiple of angular_step")

    @property
    def pano_width(self) -> int:
        return round(360.0 / self.angular_step)


@dataclass(frozen=True)
class RectifyPoly:
    """Quadratic row remap y' = a*y^2 + b*y + c, strictly increasing over
    [y_min, y_max] (source pano rows)."""

    a: float
    b: float
    c: float
    y_min: float = 2.0
    y_max: float = 438.0

    def __post_init__(self):
        if self.y_min >= self.y_max:
            raise GeometryError("empty valid range")
        # The derivative 2a*y + b is linear: positive at both endpoints
        # implies positive over the whole range.
        if min(self._slope(self.y_min), self._slope(self.y_max)) <= 0:
            raise GeometryError("rectification must be strictly increasing over its valid range")

    def _slope(self, y: float) -> float:
        return 2.0 * self.a * y + self.b

    @classmethod
    def identity(cls, y_max: float) -> "RectifyPoly":
        return cls(0.0, 1.0, 0.0, y_min=0.0, y_max=y_max)


def rectify_y(poly: RectifyPoly, y):
    """Evaluate y' = a*y^2 + b*y + c (scalar or array)."""
    y = np.asarray(y, dtype=float)
    out = poly.a * y * y + poly.b * y + poly.c
    return float(out) if out.ndim == 0 else out


def inverse_rectify_y(poly: RectifyPoly, r):
    """Invert rectify_y on its increasing branch; NaN where no real root."""
    r = np.asarray(r, dtype=float)
    if poly.a == 0.0:
        out = (r - poly.c) / poly.b
    else:
        disc = poly.b * poly.b - 4.0 * poly.a * (poly.c - r)
        with np.errstate(invalid="ignore"):
            # For either sign of a, the + root is the increasing branch.
            out = (-poly.b + np.sqrt(disc)) / (2.0 * poly.a)
    return float(out) if out.ndim == 0 else out


def unwarp_dims(geom: OmniGeometry, poly: RectifyPoly) -> tuple[int, int]:
    """(width, height) of the unwarped pano for this geometry and poly."""
    height = int(math.floor(rectify_y(poly, poly.y_max)))
    if height <= 0:
        raise GeometryError("rectification yields an empty panorama")
    return geom.pano_width, height


@dataclass
class PixelMap:
    """Materialized per-destination-pixel source coordinates.

    ``coords`` is a (dest_h, dest_w, 2) float32 array of (x, y) source
    positions; NaN pairs mark out-of-image pixels.
    """

    src_width: int
    src_height: int
    coords: np.ndarray
    geometry: OmniGeometry
    poly: RectifyPoly

    @property
    def dest_width(self) -> int:
        return self.coords.shape[1]

    @property
    def dest_height(self) -> int:
        return self.coords.shape[0]


def build_unwarp_map(geom: OmniGeometry, poly: RectifyPoly) -> PixelMap:
    """Materialize the omni -> pano resampling map.

    Destination pixel (row r, column c) samples the omni frame at angle
    ``theta = c * angular_step`` and radius ``rho = inverse_rectify(r)``;
    rows whose radius falls outside the usable donut are NaN.
    """
    width, height = unwarp_dims(geom, poly)
    rho = np.asarray(inverse_rectify_y(poly, np.arange(height, dtype=float)))
    theta = np.deg2rad(np.arange(width, dtype=float) * geom.angular_step)
    x = geom.center_x + rho[:, None] * np.cos(theta)[None, :]
    y = geom.center_y - rho[:, None] * np.sin(theta)[None, :]
    coords = np.stack([x, y], axis=-1).astype(np.float32)
    with np.errstate(invalid="ignore"):
        lost = ~np.isfinite(rho) | (rho < 0.0) | (rho > geom.radius)
    coords[lost, :, :] = np.nan
    return PixelMap(geom.image_width, geom.image_height, coords, geom, poly)


def apply_map(src: np.ndarray, pmap: PixelMap, interp: str = "bilinear", fill=0) -> np.ndarray:
    """Resample ``src`` through the map; out-of-image pixels get ``fill``."""
    src = np.asarray(src)
    if src.shape[:2] != (pmap.src_height, pmap.src_width):
        raise GeometryError(
            f"source is {src.shape[1]}x{src.shape[0]}, map expects {pmap.src_width}x{pmap.src_height}"
        )
    if interp not in ("nearest", "bilinear"):
        raise ValueError(f"unknown interpolation {interp!r}")

    x = pmap.coords[..., 0].astype(np.float64)
    y = pmap.coords[..., 1].astype(np.float64)
    h, w = src.shape[:2]
    channels = src.shape[2] if src.ndim == 3 else 0
    flat = src.reshape(h, w, -1).astype(np.float64)

    out_shape = (pmap.dest_height, pmap.dest_width, flat.shape[2])
    out = np.empty(out_shape, dtype=np.float64)
    out[...] = np.asarray(fill, dtype=np.float64)

    finite = np.isfinite(x) & np.isfinite(y)
    if interp == "nearest":
        xi = np.rint(np.where(finite, x, -1.0)).astype(np.int64)
        yi = np.rint(np.where(finite, y, -1.0)).astype(np.int64)
        ok = finite & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out[ok] = flat[yi[ok], xi[ok]]
    else:
        ok = finite & (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
        xs = np.where(ok, x, 0.0)
        ys = np.where(ok, y, 0.0)
        x0 = np.floor(xs).astype(np.int64)
        y0 = np.floor(ys).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (xs - x0)[..., None]
        fy = (ys - y0)[..., None]
        val = (
            flat[y0, x0] * (1.0 - fx) * (1.0 - fy)
            + flat[y0, x1] * fx * (1.0 - fy)
            + flat[y1, x0] * (1.0 - fx) * fy
            + flat[y1, x1] * fx * fy
        )
        out[ok] = val[ok]

    if channels == 0:
        out = out[..., 0]
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(src.dtype)
    else:
        out = out.astype(src.dtype)
    return out


def pano_point_to_omni(geom: OmniGeometry, poly: RectifyPoly, c: float, r: float) -> tuple[float, float]:
    """Map a pano-space point (column, row) to omni-space (x, y)."""
    rho = inverse_rectify_y(poly, r)
    theta = math.radians(c * geom.angular_step)
    return (geom.center_x + rho * math.cos(theta), geom.center_y - rho * math.sin(theta))


def omni_point_to_pano(geom: OmniGeometry, poly: RectifyPoly, x: float, y: float) -> tuple[float, float]:
    """Map an omni-space point (x, y) to pano-space (column, row)."""
    dx = x - geom.center_x
    dy = geom.center_y - y
    rho = math.hypot(dx, dy)
    theta = math.degrees(math.atan2(dy, dx)) % 360.0
    return (theta / geom.angular_step, rectify_y(poly, rho))


class PanoBoxOutsideError(GeometryError):
    """The pano-space box lies entirely outside the valid pano band."""


def pano_to_omni_box(geom: OmniGeometry, poly: RectifyPoly, box: BoundingBox) -> BoundingBox:
    """Back-project a pano-space box to omni space.

    All four box edges are sampled at >= 1-pixel arc resolution, each sample
    is mapped through the inverse rectification and the polar-to-Cartesian
    transform, and the axis-aligned hull of the samples is returned, clipped
    to the omni frame.  Columns may run past the pano width (seam wrap);
    angles wrap around naturally.
    """
    _, pano_h = unwarp_dims(geom, poly)
    r0 = max(box.y, 0.0)
    r1 = min(box.y + box.h, float(pano_h))
    if r1 <= r0:
        raise PanoBoxOutsideError("box lies outside the valid pano area")
    c0 = box.x
    c1 = box.x + box.w

    step_rad = math.radians(geom.angular_step)
    cols = []
    for r_edge in (r0, r1):
        rho = inverse_rectify_y(poly, r_edge)
        arc = abs(c1 - c0) * step_rad * max(abs(rho), 1.0)
        n = max(2, int(math.ceil(arc)) + 1)
        cols.append(np.linspace(c0, c1, n))
    rows = np.linspace(r0, r1, max(2, int(math.ceil(r1 - r0)) + 1))

    cs = np.concatenate([cols[0], cols[1], np.full_like(rows, c0), np.full_like(rows, c1)])
    rs = np.concatenate(
        [np.full_like(cols[0], r0), np.full_like(cols[1], r1), rows, rows]
    )

    rho = np.asarray(inverse_rectify_y(poly, rs))
    rho = np.clip(rho, 0.0, geom.radius)
    theta = np.deg2rad(cs * geom.angular_step)
    xs = geom.center_x + rho * np.cos(theta)
    ys = geom.center_y - rho * np.sin(theta)

    x0 = max(float(xs.min()), 0.0)
    y0 = max(float(ys.min()), 0.0)
    x1 = min(float(xs.max()), float(geom.image_width))
    y1 = min(float(ys.max()), float(geom.image_height))
    if x1 <= x0 or y1 <= y0:
        raise PanoBoxOutsideError("box maps outside the omni frame")
    return BoundingBox(x0, y0, x1 - x0, y1 - y0, space="omni")


def scale_box(box: BoundingBox, from_dims: tuple[int, int], to_dims: tuple[int, int]) -> BoundingBox:
    """Linearly rescale a box between frames of different dimensions."""
    if min(*from_dims, *to_dims) <= 0:
        raise ValueError("dimensions must be positive")
    sx = to_dims[0] / from_dims[0]
    sy = to_dims[1] / from_dims[1]
    return BoundingBox(
        box.x * sx, box.y * sy, box.w * sx, box.h * sy, space=f"{to_dims[0]}x{to_dims[1]}"
    )


def save_pixel_map(pmap: PixelMap, path) -> None:
    """Binary sidecar: header (dims + geometry + poly), then row-major
    float32 (x, y) pairs with NaN marking out-of-image."""
    geom, poly = pmap.geometry, pmap.poly
    header = _MAP_HEADER.pack(
        _MAP_MAGIC,
        _MAP_VERSION,
        pmap.dest_width,
        pmap.dest_height,
        pmap.src_width,
        pmap.src_height,
        geom.center_x,
        geom.center_y,
        geom.radius,
        geom.angular_step,
        poly.a,
        poly.b,
        poly.c,
        poly.y_min,
        poly.y_max,
        0.0,
        0.0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(pmap.coords, dtype=np.float32).tobytes())


def load_pixel_map(path) -> PixelMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MAP_HEADER.size or raw[:4] != _MAP_MAGIC:
        raise GeometryError(f"{path}: not a pixel map sidecar")
    fields = _MAP_HEADER.unpack_from(raw)
    (_, version, dest_w, dest_h, src_w, src_h, cx, cy, radius, step, a, b, c, y_min, y_max, _, _) = fields
    if version != _MAP_VERSION:
        raise GeometryError(f"{path}: unsupported sidecar version {version}")
    body = np.frombuffer(raw, dtype=np.float32, offset=_MAP_HEADER.size)
    if body.size != dest_w * dest_h * 2:
        raise GeometryError(f"{path}: truncated sidecar body")
    coords = body.reshape(dest_h, dest_w, 2).copy()
    geom = OmniGeometry(src_w, src_h, cx, cy, radius, step)
    poly = RectifyPoly(a, b, c, y_min=y_min, y_max=y_max)
    return PixelMap(src_w, src_h, coords, geom, poly)
