"""Procedural pseudo-anatomy with exactly known ground truth.

A phantom is a smooth ellipsoidal "organ" with banded texture plus noise,
carrying planted ellipsoidal lesions whose support, class, and rough box are
all known. Values live in [-1, 1]. Regenerating a scene from its seed is
bit-identical, which is what makes the detection-metric oracles exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .conditioning import ATTENUATION_CLASSES, BoxAnnotation, size_class_for
from .io import write_jsonl, write_pgm, write_pvol

LESION_OFFSETS = {"solid": 0.9, "part-solid": 0.6, "ggn": 0.35}

# phantom voxel pitch in millimeters (3-D scenes); spreads the size classes
PHANTOM_PITCH_MM = 2.0


class PhantomError(ValueError):
    pass


@dataclass
class Lesion:
    center: tuple[float, ...]
    radii: tuple[float, ...]
    intensity_offset: float
    attenuation_class: str


@dataclass
class PhantomScene:
    seed: int
    dims: int
    extent: int
    lesions: list[Lesion]
    boxes: list[BoxAnnotation]
    scan_id: str

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.extent,) * self.dims


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, ...], grid: int = 4,
                  amplitude: float = 0.08) -> np.ndarray:
    coarse = rng.standard_normal((grid,) * len(shape))
    zooms = [s / grid for s in shape]
    smooth = ndimage.zoom(coarse, zooms, order=1, mode="nearest")
    return (amplitude * smooth).astype(np.float32)


def _organ_background(rng: np.random.Generator, dims: int, extent: int) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, extent) for _ in range(dims)]
    grids = np.meshgrid(*axes, indexing="ij")
    radii = rng.uniform(0.70, 0.85, size=dims)
    rho2 = sum((g / r) ** 2 for g, r in zip(grids, radii))
    organ = rho2 <= 1.0
    band_axis = grids[0]
    freq = rng.uniform(4.0, 7.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    texture = 0.12 * np.sin(freq * np.pi * band_axis + phase)
    img = np.full((extent,) * dims, -1.0, dtype=np.float32)
    interior = (-0.25 + texture + _smooth_noise(rng, (extent,) * dims)).astype(np.float32)
    img[organ] = interior[organ]
    # soften the rim so the organ boundary is not a hard step
    edge = (rho2 > 0.92) & organ
    img[edge] = img[edge] * 0.5 - 0.4
    return np.clip(img, -1.0, 1.0)


def _lesion_profile(shape: tuple[int, ...], lesion: Lesion) -> np.ndarray:
    axes = [np.arange(s, dtype=np.float64) for s in shape]
    grids = np.meshgrid(*axes, indexing="ij")
    d2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, lesion.center, lesion.radii))
    profile = np.maximum(0.0, 1.0 - d2)
    if lesion.attenuation_class == "part-solid":
        core = np.maximum(0.0, 1.0 - 4.0 * d2)
        profile = 0.5 * profile + 0.8 * core
    return (lesion.intensity_offset * profile).astype(np.float32)


def _lesion_bbox(shape: tuple[int, ...], lesion: Lesion) -> tuple[tuple[int, ...], tuple[int, ...]]:
    lo = [max(0, int(np.floor(c - r))) for c, r in zip(lesion.center, lesion.radii)]
    hi = [min(s, int(np.ceil(c + r)) + 1) for c, r, s in zip(lesion.center, lesion.radii, shape)]
    return tuple(lo), tuple(h - l for l, h in zip(lo, hi))


def generate_phantom(seed: int, dims: int = 2, extent: int = 64, lesion_count: int = 1,
                     class_mix: dict[str, float] | None = None,
                     scan_id: str | None = None) -> PhantomScene:
    """Deterministic scene with `lesion_count` planted lesions.

    Rough boxes dilate each lesion's tight bounding box by a seeded 0-20%
    jitter per side (never shrinking), mimicking lazy hand annotation.
    """
    if dims not in (2, 3):
        raise PhantomError(f"dims must be 2 or 3, got {dims}")
    if lesion_count < 0:
        raise PhantomError("lesion_count must be >= 0")
    if extent < 16 and lesion_count > 0:
        raise PhantomError(f"extent {extent} too small to place lesions")
    mix = class_mix or {c: 1.0 for c in ATTENUATION_CLASSES}
    classes = sorted(mix)
    weights = np.array([mix[c] for c in classes], dtype=np.float64)
    weights = weights / weights.sum()

    ss = np.random.SeedSequence([int(seed), dims, extent])
    rng_bg, rng_les, rng_jitter = (np.random.default_rng(s) for s in ss.spawn(3))
    shape = (extent,) * dims

    lesions: list[Lesion] = []
    boxes: list[BoxAnnotation] = []
    max_radius = max(3.0, extent / 6.0)
    for _ in range(lesion_count):
        placed = False
        for _attempt in range(200):
            center = rng_les.uniform(0.30 * extent, 0.70 * extent, size=dims)
            radii = rng_les.uniform(2.0, max_radius, size=dims)
            if all(c - r >= 1 and c + r < extent - 1 for c, r in zip(center, radii)):
                placed = True
                break
        if not placed:
            raise PhantomError(f"extent {extent} too small to place {lesion_count} lesions")
        att = classes[rng_les.choice(len(classes), p=weights)]
        lesion = Lesion(tuple(center), tuple(radii), LESION_OFFSETS[att], att)
        lesions.append(lesion)
        lo, ext = _lesion_bbox(shape, lesion)
        pad_lo = [int(np.floor(rng_jitter.uniform(0.0, 0.2) * e)) for e in ext]
        pad_hi = [int(np.floor(rng_jitter.uniform(0.0, 0.2) * e)) for e in ext]
        new_lo = tuple(max(0, l - p) for l, p in zip(lo, pad_lo))
        new_hi = tuple(min(s, l + e + p) for l, e, p, s in zip(lo, ext, pad_hi, shape))
        box = BoxAnnotation(new_lo, tuple(h - l for l, h in zip(new_lo, new_hi)),
                            attenuation_class=att, scan_id=scan_id)
        pitch = PHANTOM_PITCH_MM if dims == 3 else 1.0
        box.size_class = size_class_for(box.extent, pitch)
        boxes.append(box)
    return PhantomScene(seed=int(seed), dims=dims, extent=extent, lesions=lesions,
                        boxes=boxes, scan_id=scan_id or f"phantom-{seed}")


def render(scene: PhantomScene, include_lesions: bool = True) -> np.ndarray:
    """Rasterize a scene; the background stream depends only on the seed, so
    rendering with and without lesions differs exactly on lesion support."""
    ss = np.random.SeedSequence([scene.seed, scene.dims, scene.extent])
    rng_bg = np.random.default_rng(ss.spawn(1)[0])
    img = _organ_background(rng_bg, scene.dims, scene.extent)
    if include_lesions:
        for lesion in scene.lesions:
            img = np.clip(img + _lesion_profile(scene.shape, lesion), -1.0, 1.0)
    return img


def lesion_support(scene: PhantomScene) -> np.ndarray:
    """Boolean mask of voxels whose value changes when lesions are added."""
    return render(scene, True) != render(scene, False)


# ---------------------------------------------------------------------------
# classic augmentation

@dataclass
class ClassicAugmentSpec:
    flip_h: bool = True
    flip_v: bool = True
    rotation_deg: float = 10.0
    shift: float = 0.08
    shear: float = 0.08
    zoom: float = 0.08
    fill: float = -1.0

    def __post_init__(self):
        if not 0 <= self.rotation_deg <= 10:
            raise PhantomError("rotation_deg must lie in [0, 10]")
        for name in ("shift", "shear", "zoom"):
            if not 0 <= getattr(self, name) <= 0.08:
                raise PhantomError(f"{name} must lie in [0, 0.08]")


def _draw_affine(spec: ClassicAugmentSpec, rng: np.random.Generator,
                 extent: int) -> tuple[np.ndarray, np.ndarray]:
    """Random forward affine (matrix, offset) about the image center."""
    theta = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg))
    shear = rng.uniform(-spec.shear, spec.shear)
    zoom = 1.0 + rng.uniform(-spec.zoom, spec.zoom)
    shift = rng.uniform(-spec.shift, spec.shift, size=2) * extent
    flip_h = spec.flip_h and rng.integers(0, 2) == 1
    flip_v = spec.flip_v and rng.integers(0, 2) == 1
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    scale = np.diag([zoom * (-1 if flip_v else 1), zoom * (-1 if flip_h else 1)])
    mat = rot @ shr @ scale
    center = np.array([(extent - 1) / 2.0] * 2)
    offset = center + shift - mat @ center
    return mat, offset


def classic_augment(image: np.ndarray, spec: ClassicAugmentSpec, rng: np.random.Generator,
                    boxes: Sequence[BoxAnnotation] = ()) -> tuple[np.ndarray, list[BoxAnnotation]]:
    """Random flip/rotate/shift/shear/zoom with constant fill; box geometry is
    transformed with the same map and re-boxed axis-aligned."""
    if image.ndim != 2:
        raise PhantomError("classic_augment operates on 2-d images")
    extent = image.shape[0]
    mat, offset = _draw_affine(spec, rng, extent)
    # affine_transform pulls: output[o] = input[inv @ o - inv @ t]
    inv = np.linalg.inv(mat)
    out = ndimage.affine_transform(image, inv, offset=-inv @ offset,
                                   order=1, mode="constant", cval=spec.fill)
    new_boxes: list[BoxAnnotation] = []
    for b in boxes:
        lo = np.array(b.origin, dtype=np.float64)
        hi = lo + np.array(b.extent)
        corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
        # the affine acts on pixel centers; box corners sit half a pixel off
        moved = (mat @ (corners - 0.5).T).T + offset + 0.5
        mn = np.clip(np.floor(moved.min(axis=0) + 0.5), 0, extent).astype(int)
        mx = np.clip(np.floor(moved.max(axis=0) + 0.5), 0, extent).astype(int)
        if np.all(mx - mn >= 1):
            new_boxes.append(BoxAnnotation(tuple(mn), tuple(mx - mn),
                                           size_class=b.size_class,
                                           attenuation_class=b.attenuation_class,
                                           scan_id=b.scan_id))
    return out.astype(image.dtype), new_boxes


# ---------------------------------------------------------------------------
# splits and bundles

def make_splits(scenes: Sequence, ratios: tuple[float, float, float],
                seed: int) -> dict[str, list]:
    """Scene-level shuffle into train/validation/test; the remainder after a
    floored train share and a half-up-rounded validation share goes to test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise PhantomError(f"ratios must sum to 1, got {ratios}")
    n = len(scenes)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n + 0.5))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise PhantomError(f"split of {n} scenes by {ratios} leaves an empty part")
    picks = [scenes[i] for i in order]
    return {"train": picks[:n_train],
            "validation": picks[n_train:n_train + n_val],
            "test": picks[n_train + n_val:]}


def save_scene_bundle(directory: str | Path, scenes: Sequence[PhantomScene],
                      class_mix: dict[str, float] | None = None) -> Path:
    """Write images (PGM / .pvol), a JSONL annotation file, and a manifest."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for scene in scenes:
        img = render(scene)
        if scene.dims == 2:
            write_pgm(directory / f"{scene.scan_id}.pgm", img)
        else:
            write_pvol(directory / f"{scene.scan_id}.pvol", img)
        for box in scene.boxes:
            rec = box.to_record()
            rec["scan_id"] = scene.scan_id
            records.append(rec)
    write_jsonl(directory / "annotations.jsonl", records)
    manifest = {
        "scene_count": len(scenes),
        "dims": scenes[0].dims if scenes else None,
        "extent": scenes[0].extent if scenes else None,
        "seeds": [s.seed for s in scenes],
        "lesion_count_total": sum(len(s.lesions) for s in scenes),
        "class_mix": class_mix or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory
