"""Pathology-aware conditioning inputs: 2-D box masks, 3-D noise boxes, tiled
size/attenuation channels, boundary blending, and the resample/map-back path
that plants a processed sub-volume back into its source scan."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

SIZE_CLASSES = ("small", "medium", "large")
ATTENUATION_CLASSES = ("solid", "part-solid", "ggn")

# diameter thresholds in millimeters; the class is set by the longest extent
SMALL_MAX_MM = 10.0
MEDIUM_MAX_MM = 20.0


class BoxError(ValueError):
    pass


@dataclass
class BoxAnnotation:
    origin: tuple[int, ...]
    extent: tuple[int, ...]
    size_class: str | None = None
    attenuation_class: str | None = None
    scan_id: str | None = None

    def __post_init__(self):
        self.origin = tuple(int(v) for v in self.origin)
        self.extent = tuple(int(v) for v in self.extent)
        if len(self.origin) != len(self.extent):
            raise BoxError(f"origin {self.origin} and extent {self.extent} rank mismatch")
        if any(e < 1 for e in self.extent):
            raise BoxError(f"box extents must be >= 1, got {self.extent}")
        if self.size_class is not None and self.size_class not in SIZE_CLASSES:
            raise BoxError(f"unknown size class {self.size_class!r}")
        if self.attenuation_class is not None and self.attenuation_class not in ATTENUATION_CLASSES:
            raise BoxError(f"unknown attenuation class {self.attenuation_class!r}")

    @property
    def dims(self) -> int:
        return len(self.origin)

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def inside(self, shape: Sequence[int]) -> bool:
        return all(o >= 0 and o + e <= s for o, e, s in zip(self.origin, self.extent, shape))

    def to_record(self) -> dict:
        return {"scan_id": self.scan_id, "origin": list(self.origin), "extent": list(self.extent),
                "size_class": self.size_class, "attenuation_class": self.attenuation_class}

    @classmethod
    def from_record(cls, rec: dict) -> "BoxAnnotation":
        return cls(origin=tuple(rec["origin"]), extent=tuple(rec["extent"]),
                   size_class=rec.get("size_class"), attenuation_class=rec.get("attenuation_class"),
                   scan_id=rec.get("scan_id"))


def size_class_for(extent: Sequence[int], voxel_pitch_mm: float = 1.0) -> str:
    """Classify by the longest box edge converted to millimeters."""
    diameter = max(extent) * voxel_pitch_mm
    if diameter <= SMALL_MAX_MM:
        return "small"
    if diameter <= MEDIUM_MAX_MM:
        return "medium"
    return "large"


@dataclass
class ConditionMask2D:
    """Binary canvas: background 0, box interiors 1 (0/255 on export)."""

    canvas: np.ndarray
    boxes: list[BoxAnnotation] = field(default_factory=list)


def build_bbox_mask(boxes: Sequence[BoxAnnotation], canvas_extent: tuple[int, int]) -> ConditionMask2D:
    canvas = np.zeros(canvas_extent, dtype=np.float32)
    bad = [b for b in boxes if not b.inside(canvas_extent)]
    if bad:
        raise BoxError(f"box(es) outside {canvas_extent}: "
                       + "; ".join(f"origin={b.origin} extent={b.extent}" for b in bad))
    for b in boxes:
        if b.dims != 2:
            raise BoxError(f"2-d mask from a {b.dims}-d box")
        canvas[b.slices()] = 1.0
    return ConditionMask2D(canvas, list(boxes))


def recover_boxes(mask: ConditionMask2D | np.ndarray) -> list[BoxAnnotation]:
    """Bounding boxes of connected mask components (for round-trip checks)."""
    canvas = mask.canvas if isinstance(mask, ConditionMask2D) else mask
    labels, n = ndimage.label(canvas > 0.5)
    boxes = []
    for sl in ndimage.find_objects(labels):
        origin = tuple(s.start for s in sl)
        extent = tuple(s.stop - s.start for s in sl)
        boxes.append(BoxAnnotation(origin, extent))
    return boxes


def _transform_box(box: BoxAnnotation, extent: tuple[int, int], flip: tuple[bool, bool],
                   shift: tuple[float, float], zoom: float) -> BoxAnnotation | None:
    """Apply flip/shift/zoom (image-level semantics) to one box; None when the
    box lands fully off-canvas."""
    lo = np.array(box.origin, dtype=np.float64)
    hi = lo + np.array(box.extent, dtype=np.float64)
    size = np.array(extent, dtype=np.float64)
    for ax in range(2):
        if flip[ax]:
            lo[ax], hi[ax] = size[ax] - hi[ax], size[ax] - lo[ax]
    center = size / 2.0
    lo = center + zoom * (lo - center)
    hi = center + zoom * (hi - center)
    delta = np.array(shift) * size
    lo += delta
    hi += delta
    lo_i = np.floor(lo + 0.5).astype(int)
    hi_i = np.floor(hi + 0.5).astype(int)
    lo_c = np.maximum(lo_i, 0)
    hi_c = np.minimum(hi_i, size.astype(int))
    if np.any(hi_c - lo_c < 1):
        return None
    return BoxAnnotation(tuple(lo_c), tuple(hi_c - lo_c),
                         size_class=box.size_class, attenuation_class=box.attenuation_class,
                         scan_id=box.scan_id)


def augment_mask(mask: ConditionMask2D, rng: np.random.Generator,
                 max_shift: float = 0.10, max_zoom: float = 0.10,
                 max_tries: int = 10) -> ConditionMask2D:
    """Random flip / shift (<=10% of canvas) / zoom (<=10%) of the box layout.

    Transforms that push any box fully off-canvas are resampled, up to
    ``max_tries`` draws.
    """
    extent = mask.canvas.shape
    for _ in range(max_tries):
        flip = (bool(rng.integers(0, 2)), bool(rng.integers(0, 2)))
        shift = tuple(rng.uniform(-max_shift, max_shift, size=2))
        zoom = 1.0 + rng.uniform(-max_zoom, max_zoom)
        new_boxes = [_transform_box(b, extent, flip, shift, zoom) for b in mask.boxes]
        if all(b is not None for b in new_boxes):
            return build_bbox_mask([b for b in new_boxes if b is not None], extent)
    raise BoxError(f"augment_mask: no valid transform after {max_tries} tries")


# ---------------------------------------------------------------------------
# 3-D noise boxes and condition channels

@dataclass
class NoiseBoxVOI:
    volume: np.ndarray
    box: BoxAnnotation
    original_box_content: np.ndarray


def carve_noise_box(voi: np.ndarray, box: BoxAnnotation, rng: np.random.Generator) -> NoiseBoxVOI:
    """Replace the box interior with i.i.d. uniform noise in [-0.5, 0.5]."""
    if not box.inside(voi.shape):
        raise BoxError(f"box origin={box.origin} extent={box.extent} exceeds volume {voi.shape}")
    out = voi.copy()
    original = out[box.slices()].copy()
    out[box.slices()] = rng.uniform(-0.5, 0.5, size=box.extent).astype(voi.dtype)
    return NoiseBoxVOI(out, box, original)


@dataclass
class ConditionChannels:
    """Six constant channels (small, medium, large, solid, part-solid, ggn)."""

    channels: np.ndarray
    size_class: str
    attenuation_class: str

    NAMES = SIZE_CLASSES + ATTENUATION_CLASSES


def tile_conditions(size_class: str, attenuation_class: str,
                    extent: tuple[int, ...]) -> ConditionChannels:
    if size_class not in SIZE_CLASSES:
        raise BoxError(f"unknown size class {size_class!r}")
    if attenuation_class not in ATTENUATION_CLASSES:
        raise BoxError(f"unknown attenuation class {attenuation_class!r}")
    channels = np.zeros((6,) + tuple(extent), dtype=np.float32)
    channels[SIZE_CLASSES.index(size_class)] = 1.0
    channels[3 + ATTENUATION_CLASSES.index(attenuation_class)] = 1.0
    return ConditionChannels(channels, size_class, attenuation_class)


def stack_generator_input(voi: np.ndarray, conditions: ConditionChannels) -> np.ndarray:
    """VOI plus the six tiled channels: the (7, ...) generator input."""
    if voi.shape != conditions.channels.shape[1:]:
        raise BoxError(f"VOI {voi.shape} does not match channel extent {conditions.channels.shape[1:]}")
    return np.concatenate([voi[None], conditions.channels], axis=0)


# ---------------------------------------------------------------------------
# boundary blending and map-back

BLEND_MARGIN = 3
BLEND_ITERATIONS = 5


def _blend_shell(shape: tuple[int, ...], box: BoxAnnotation) -> np.ndarray:
    """Voxels within BLEND_MARGIN of the box boundary (inside or outside)."""
    dilated = np.zeros(shape, dtype=bool)
    dil = tuple(slice(max(0, o - BLEND_MARGIN), min(s, o + e + BLEND_MARGIN))
                for o, e, s in zip(box.origin, box.extent, shape))
    dilated[dil] = True
    eroded = np.zeros(shape, dtype=bool)
    ero = tuple(slice(o + BLEND_MARGIN, max(o + BLEND_MARGIN, o + e - BLEND_MARGIN))
                for o, e in zip(box.origin, box.extent))
    if all(s.stop > s.start for s in ero):
        eroded[ero] = True
    return dilated & ~eroded


def blend_box_boundary(volume: np.ndarray, box: BoxAnnotation) -> np.ndarray:
    """Diffuse the box seams: five rounds of 6-neighbor-plus-self averaging
    over the 3-voxel shell around every box face; edges clamp.

    Accumulation is float32, minus neighbor before plus neighbor, axis by
    axis; that order is part of the contract so independent rewrites can
    agree bit for bit."""
    if not box.inside(volume.shape):
        raise BoxError(f"box origin={box.origin} extent={box.extent} exceeds volume {volume.shape}")
    out = volume.astype(np.float32, copy=True)
    shell = _blend_shell(out.shape, box)
    for _ in range(BLEND_ITERATIONS):
        padded = np.pad(out, 1, mode="edge")
        acc = out.copy()
        for ax in range(3):
            for off in (0, 2):
                sl = [slice(1, -1)] * 3
                sl[ax] = slice(off, off + out.shape[ax])
                acc = acc + padded[tuple(sl)]
        blended = acc / 7.0
        out[shell] = blended[shell]
    return out


def resample_trilinear(volume: np.ndarray, new_shape: tuple[int, ...]) -> np.ndarray:
    """Separable linear resampling with corner alignment; exact on affine ramps."""
    src = volume.astype(np.float64)
    for ax, target in enumerate(new_shape):
        size = src.shape[ax]
        if target == size:
            continue
        if target == 1:
            coords = np.zeros(1)
        else:
            coords = np.linspace(0.0, size - 1.0, target)
        lo = np.floor(coords).astype(int)
        hi = np.minimum(lo + 1, size - 1)
        frac = coords - lo
        a = np.take(src, lo, axis=ax)
        b = np.take(src, hi, axis=ax)
        shape = [1] * src.ndim
        shape[ax] = target
        f = frac.reshape(shape)
        src = a * (1.0 - f) + b * f
    return src.astype(volume.dtype if volume.dtype.kind == "f" else np.float32)


def map_back(scan: np.ndarray, voi_origin: tuple[int, ...], processed_voi: np.ndarray,
             original_resolution: tuple[int, ...] | None = None) -> np.ndarray:
    """Resample a processed VOI to its native region size and paste it into
    the scan; everything outside the region is untouched."""
    if original_resolution is None:
        region = processed_voi.shape
        if not BoxAnnotation(voi_origin, region).inside(scan.shape):
            raise BoxError(
                f"VOI of size {region} does not fit at {voi_origin} in scan {scan.shape}; "
                f"pass original_resolution so it can be resampled to the native spacing")
    else:
        region = tuple(original_resolution)
    target_box = BoxAnnotation(voi_origin, region)
    if not target_box.inside(scan.shape):
        raise BoxError(f"VOI region origin={voi_origin} size={region} outside scan {scan.shape}")
    if processed_voi.shape != region:
        processed_voi = resample_trilinear(processed_voi, region)
    out = scan.copy()
    out[target_box.slices()] = processed_voi.astype(out.dtype)
    return out
