"""FLOP model for single-shot detector backbones at arbitrary input
resolutions, the minimum-resolution constraint, and the blur-kernel privacy
equivalence.

Convention: one multiply-add counts as 2 floating-point operations; bias,
batch-norm and activation costs are excluded (sub-1% of conv cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

BUNDLED_NET = "yolov2.net"


class NetSpecError(ValueError):
    """Malformed or inconsistent architecture description."""


class ResolutionError(ValueError):
    """Input resolution not supported by the network."""


@dataclass(frozen=True)
class Conv:
    kernel: int
    stride: int
    c_in: int
    c_out: int
    pad: int


@dataclass(frozen=True)
class MaxPool:
    size: int
    stride: int


@dataclass(frozen=True)
class Passthrough:
    """Darknet-style route: switch the stream to the referenced layers'
    outputs, space-to-depth reordered to the coarsest grid and concatenated.
    References are 1-based layer indices."""

    refs: tuple[int, ...]


@dataclass(frozen=True)
class Head:
    pass


@dataclass
class NetSpec:
    layers: list
    downsample_factor: int

    @property
    def input_channels(self) -> int:
        for layer in self.layers:
            if isinstance(layer, Conv):
                return layer.c_in
        raise NetSpecError("network has no convolution layers")


def parse_netspec(text: str, name: str = "netspec") -> NetSpec:
    """Parse the layer-per-line architecture description.

    Lines: ``conv k s c_in c_out pad`` | ``maxpool k s`` |
    ``passthrough <from> [<from>...]`` | ``head``.  ``#`` starts a comment.
    """
    layers: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        where = f"{name}:{lineno}"
        try:
            if kind == "conv":
                if len(args) != 5:
                    raise NetSpecError(f"{where}: conv takes 5 arguments (k s c_in c_out pad)")
                k, s, c_in, c_out, pad = map(int, args)
                if min(k, s, c_in, c_out) < 1 or pad < 0:
                    raise NetSpecError(f"{where}: conv arguments out of range")
                layers.append(Conv(k, s, c_in, c_out, pad))
            elif kind == "maxpool":
                if len(args) != 2:
                    raise NetSpecError(f"{where}: maxpool takes 2 arguments (k s)")
                k, s = map(int, args)
                if min(k, s) < 1:
                    raise NetSpecError(f"{where}: maxpool arguments out of range")
                layers.append(MaxPool(k, s))
            elif kind == "passthrough":
                if not args:
                    raise NetSpecError(f"{where}: passthrough needs at least one layer reference")
                refs = tuple(map(int, args))
                if any(r < 1 or r > len(layers) for r in refs):
                    raise NetSpecError(f"{where}: passthrough references an undefined layer")
                layers.append(Passthrough(refs))
            elif kind == "head":
                layers.append(Head())
            else:
                raise NetSpecError(f"{where}: unknown layer kind {kind!r}")
        except ValueError as exc:
            if isinstance(exc, NetSpecError):
                raise
            raise NetSpecError(f"{where}: non-integer argument") from exc
    if not layers:
        raise NetSpecError(f"{name}: empty architecture")

    factor = 1
    for layer in layers:
        if isinstance(layer, (Conv, MaxPool)):
            factor *= layer.stride
    net = NetSpec(layers, factor)
    _simulate(net, 3 * factor)  # validates channel chaining and grid maths
    return net


def load_netspec(path) -> NetSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_netspec(fh.read(), name=str(path))


def bundled_netspec() -> NetSpec:
    text = resources.files(__package__).joinpath("data").joinpath(BUNDLED_NET).read_text()
    return parse_netspec(text, name=BUNDLED_NET)


def min_input_resolution(net: NetSpec) -> int:
    """Smallest square input whose grid entering the detection head is at
    least 3x3: three times the total downsample factor."""
    return 3 * net.downsample_factor


def _simulate(net: NetSpec, height: int, width: int | None = None) -> int:
    """Propagate (channels, h, w) through the layers; returns total flops."""
    if width is None:
        width = height
    outputs: list[tuple[int, int, int]] = []  # per layer: (channels, h, w)
    stream = (net.input_channels, height, width)
    total = 0
    for idx, layer in enumerate(net.layers, start=1):
        c, h, w = stream
        if isinstance(layer, Conv):
            if layer.c_in != c:
                raise NetSpecError(
                    f"layer {idx}: conv expects {layer.c_in} input channels, stream has {c}"
                )
            h = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
            w = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
            if h < 1 or w < 1:
                raise ResolutionError(f"layer {idx}: spatial dims collapse to zero")
            total += 2 * layer.kernel * layer.kernel * layer.c_in * layer.c_out * h * w
            stream = (layer.c_out, h, w)
        elif isinstance(layer, MaxPool):
            h = (h - layer.size) // layer.stride + 1
            w = (w - layer.size) // layer.stride + 1
            if h < 1 or w < 1:
                raise ResolutionError(f"layer {idx}: spatial dims collapse to zero")
            stream = (c, h, w)
        elif isinstance(layer, Passthrough):
            picked = [outputs[r - 1] for r in layer.refs]
            target_h = min(ph for _, ph, _ in picked)
            target_w = min(pw for _, _, pw in picked)
            channels = 0
            for pc, ph, pw in picked:
                if ph % target_h or pw % target_w or ph // target_h != pw // target_w:
                    raise NetSpecError(f"layer {idx}: passthrough grids are incompatible")
                ratio = ph // target_h
                channels += pc * ratio * ratio
            stream = (channels, target_h, target_w)
        elif isinstance(layer, Head):
            stream = stream
        outputs.append(stream)
    return total


def flops(net: NetSpec, input_resolution) -> int:
    """Total floating-point operations for one inference at the given square
    resolution (or an (h, w) pair); 2 ops per multiply-add."""
    if isinstance(input_resolution, (tuple, list)):
        h, w = map(int, input_resolution)
    else:
        h = w = int(input_resolution)
    minimum = min_input_resolution(net)
    for dim in (h, w):
        if dim < minimum:
            raise ResolutionError(
                f"resolution {dim} is below the minimum {minimum} "
                f"(3 x downsample factor {net.downsample_factor})"
            )
        if dim % net.downsample_factor:
            raise ResolutionError(
                f"resolution {dim} is not a multiple of the downsample factor "
                f"{net.downsample_factor}"
            )
    return _simulate(net, h, w)


def equivalent_blur_kernel(sensor_resolution: int, net_resolution: int) -> int:
    """Blur-kernel size in sensor pixels with a privacy effect comparable to
    downsampling the sensor to the net resolution."""
    if sensor_resolution < net_resolution or net_resolution <= 0:
        raise ValueError("sensor resolution must be >= net resolution > 0")
    return round(sensor_resolution / net_resolution)


@dataclass(frozen=True)
class ResolutionProfile:
    input_resolution: int
    legal: bool
    flops: int | None
    equivalent_blur_kernel: int


def profile_sweep(
    net: NetSpec, sensor_resolution: int, resolutions: list[int]
) -> list[ResolutionProfile]:
    """One profile per requested resolution; illegal ones carry no flops."""
    profiles = []
    for res in resolutions:
        try:
            count = flops(net, res)
            legal = True
        except ResolutionError:
            count = None
            legal = False
        profiles.append(
            ResolutionProfile(res, legal, count, equivalent_blur_kernel(sensor_resolution, res))
        )
    return profiles
