"""Procedural phantoms: deterministic pseudo-anatomy with exact ground truth,
the classic augmentation family, and patient-level splits.
"""

import numpy as np

from ganlab import phantom as ph

# Scenes regenerate bit-identically from their seed.
scene = ph.generate_phantom(42, dims=2, extent=64, lesion_count=3)
again = ph.generate_phantom(42, dims=2, extent=64, lesion_count=3)
print("deterministic:", bool(np.array_equal(ph.render(scene), ph.render(again))))
print("rough boxes:", [(b.origin, b.extent, b.attenuation_class) for b in scene.boxes])

# Ground truth is exact: rendering with and without lesions isolates their
# support, and every lesion voxel lies inside its rough box.
support = ph.lesion_support(scene)
covered = np.zeros(scene.shape, dtype=bool)
for b in scene.boxes:
    covered[b.slices()] = True
print(f"lesion voxels: {support.sum()}, all inside boxes: {not (support & ~covered).any()}")

# 3-D volumes carry size and attenuation classes for the conditioning path.
vol_scene = ph.generate_phantom(7, dims=3, extent=32, lesion_count=2)
print("3-D classes:", [(b.size_class, b.attenuation_class) for b in vol_scene.boxes])

# Classic augmentation: flips, small rotations, shift/shear/zoom, constant fill.
spec = ph.ClassicAugmentSpec()
rng = np.random.default_rng(1)
img = ph.render(scene)
aug, moved = ph.classic_augment(img, spec, rng, scene.boxes)
print("augmented image range:", round(aug.min(), 3), round(aug.max(), 3),
      "| boxes kept:", len(moved))

# Patient-level splits: disjoint, deterministic, remainder to test.
scenes = [ph.generate_phantom(s, extent=32, lesion_count=1) for s in range(10)]
parts = ph.make_splits(scenes, (0.7, 0.15, 0.15), seed=0)
print("split sizes:", {k: len(v) for k, v in parts.items()})

# Bundles serialize to PGM/pvol plus JSONL annotations plus a manifest.
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    out = ph.save_scene_bundle(Path(tmp) / "bundle", scenes[:3])
    print("bundle files:", sorted(p.name for p in out.iterdir()))
