"""Phantom determinism, lesion/rough-box containment via the render-twice
differencing oracle, classic augmentation bounds, and split discipline."""

import numpy as np
import pytest

from ganlab import phantom as PH
from ganlab.conditioning import BoxAnnotation


class TestGenerate:
    def test_same_seed_bit_identical(self):
        a = PH.generate_phantom(42, dims=2, extent=64, lesion_count=3)
        b = PH.generate_phantom(42, dims=2, extent=64, lesion_count=3)
        np.testing.assert_array_equal(PH.render(a), PH.render(b))
        assert [(x.origin, x.extent) for x in a.boxes] == [(x.origin, x.extent) for x in b.boxes]

    def test_no_lesions_means_empty_difference(self):
        scene = PH.generate_phantom(7, dims=2, extent=64, lesion_count=0)
        assert not PH.lesion_support(scene).any()
        assert scene.boxes == []

    @pytest.mark.parametrize("dims,extent", [(2, 64), (3, 32)])
    def test_lesion_support_inside_rough_boxes(self, dims, extent):
        scene = PH.generate_phantom(3, dims=dims, extent=extent, lesion_count=3)
        support = PH.lesion_support(scene)
        covered = np.zeros(scene.shape, dtype=bool)
        for box in scene.boxes:
            covered[box.slices()] = True
        assert support.any()
        assert not (support & ~covered).any()

    def test_values_in_range(self):
        scene = PH.generate_phantom(5, dims=3, extent=32, lesion_count=2)
        img = PH.render(scene)
        assert img.min() >= -1.0 and img.max() <= 1.0

    def test_rough_boxes_dilate_only(self):
        scene = PH.generate_phantom(11, dims=2, extent=64, lesion_count=4)
        for lesion, box in zip(scene.lesions, scene.boxes):
            lo, ext = PH._lesion_bbox(scene.shape, lesion)
            assert all(bo <= l for bo, l in zip(box.origin, lo))
            assert all(bo + be >= l + e for bo, be, l, e in zip(box.origin, box.extent, lo, ext))

    def test_class_mix_respected(self):
        scenes = [PH.generate_phantom(s, dims=3, extent=32, lesion_count=2,
                                      class_mix={"solid": 1.0}) for s in range(5)]
        classes = {l.attenuation_class for sc in scenes for l in sc.lesions}
        assert classes == {"solid"}

    def test_too_small_extent_rejected(self):
        with pytest.raises(PH.PhantomError):
            PH.generate_phantom(0, dims=2, extent=8, lesion_count=1)


class TestClassicAugment:
    def test_zero_spec_identity(self):
        spec = PH.ClassicAugmentSpec(flip_h=False, flip_v=False, rotation_deg=0,
                                     shift=0, shear=0, zoom=0)
        img = PH.render(PH.generate_phantom(1, extent=64, lesion_count=1))
        out, _ = PH.classic_augment(img, spec, np.random.default_rng(0))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_flip_twice_identity(self):
        spec = PH.ClassicAugmentSpec(flip_h=True, flip_v=False, rotation_deg=0,
                                     shift=0, shear=0, zoom=0)

        class AlwaysFlip:
            def integers(self, lo, hi):
                return 1

            def uniform(self, lo, hi, size=None):
                return np.zeros(size) if size else 0.0

        img = PH.render(PH.generate_phantom(2, extent=64, lesion_count=1))
        once, _ = PH.classic_augment(img, spec, AlwaysFlip())
        twice, _ = PH.classic_augment(once, spec, AlwaysFlip())
        np.testing.assert_allclose(twice, img, atol=1e-6)

    def test_rotated_disk_center_fixed(self):
        extent = 64
        yy, xx = np.meshgrid(np.arange(extent), np.arange(extent), indexing="ij")
        disk = ((yy - 31.5) ** 2 + (xx - 31.5) ** 2 <= 100).astype(np.float32)

        class FixedRot:
            def integers(self, lo, hi):
                return 0

            def uniform(self, lo, hi, size=None):
                if size == 2:
                    return np.zeros(2)
                return hi  # max rotation, zero for the rest at hi=0

        spec = PH.ClassicAugmentSpec(flip_h=False, flip_v=False, rotation_deg=10,
                                     shift=0, shear=0, zoom=0, fill=0.0)
        out, _ = PH.classic_augment(disk, spec, FixedRot())
        com_in = ndimage_center(disk)
        com_out = ndimage_center(out)
        assert np.hypot(*(com_in - com_out)) < 0.5

    def test_boxes_follow_geometry(self):
        spec = PH.ClassicAugmentSpec(flip_h=True, flip_v=False, rotation_deg=0,
                                     shift=0, shear=0, zoom=0)

        class AlwaysFlip:
            def integers(self, lo, hi):
                return 1

            def uniform(self, lo, hi, size=None):
                return np.zeros(size) if size else 0.0

        img = np.zeros((32, 32), dtype=np.float32)
        boxes = [BoxAnnotation((4, 2), (6, 8))]
        _, moved = PH.classic_augment(img, spec, AlwaysFlip(), boxes)
        assert moved[0].origin == (4, 22) and moved[0].extent == (6, 8)

    def test_magnitude_bounds_enforced(self):
        with pytest.raises(PH.PhantomError):
            PH.ClassicAugmentSpec(rotation_deg=15)
        with pytest.raises(PH.PhantomError):
            PH.ClassicAugmentSpec(zoom=0.2)

    def test_draw_bounds_over_many_samples(self):
        rng = np.random.default_rng(9)
        spec = PH.ClassicAugmentSpec()
        for _ in range(10_000):
            mat, offset = PH._draw_affine(spec, rng, 64)
            # zoom bound: singular values of the linear part within 8% + shear slack
            sv = np.linalg.svd(mat, compute_uv=False)
            assert np.all(sv <= 1.08 * 1.09) and np.all(sv >= 0.92 / 1.09)


def ndimage_center(img):
    from scipy import ndimage as ndi
    return np.array(ndi.center_of_mass(img))


class TestSplits:
    def test_sizes_with_remainder_to_test(self):
        scenes = list(range(10))
        parts = PH.make_splits(scenes, (0.7, 0.15, 0.15), seed=0)
        assert (len(parts["train"]), len(parts["validation"]), len(parts["test"])) == (7, 2, 1)

    def test_deterministic(self):
        scenes = list(range(20))
        a = PH.make_splits(scenes, (0.6, 0.2, 0.2), seed=5)
        b = PH.make_splits(scenes, (0.6, 0.2, 0.2), seed=5)
        assert a == b

    def test_partition_is_disjoint_and_complete(self):
        scenes = list(range(23))
        parts = PH.make_splits(scenes, (0.5, 0.25, 0.25), seed=1)
        joined = parts["train"] + parts["validation"] + parts["test"]
        assert sorted(joined) == scenes

    def test_bad_ratios(self):
        with pytest.raises(PH.PhantomError):
            PH.make_splits(list(range(10)), (0.5, 0.2, 0.2), seed=0)

    def test_empty_split_rejected(self):
        with pytest.raises(PH.PhantomError):
            PH.make_splits(list(range(3)), (0.9, 0.05, 0.05), seed=0)


class TestBundle(object):
    def test_bundle_layout(self, tmp_path):
        scenes = [PH.generate_phantom(s, dims=2, extent=32, lesion_count=1,
                                      scan_id=f"s{s:02d}") for s in range(3)]
        out = PH.save_scene_bundle(tmp_path / "bundle", scenes)
        assert (out / "manifest.json").exists()
        assert (out / "annotations.jsonl").exists()
        assert sorted(p.name for p in out.glob("*.pgm")) == ["s00.pgm", "s01.pgm", "s02.pgm"]

    def test_bundle_3d_uses_pvol(self, tmp_path):
        scenes = [PH.generate_phantom(1, dims=3, extent=16, lesion_count=0, scan_id="v0")]
        out = PH.save_scene_bundle(tmp_path / "vol", scenes)
        from ganlab.io import read_pvol
        assert read_pvol(out / "v0.pvol").shape == (16, 16, 16)
