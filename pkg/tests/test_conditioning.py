"""Conditioning inputs: masks, noise boxes, tiled channels, boundary blending
(against an independently coded brute-force oracle), and map-back."""

import numpy as np
import pytest

from ganlab import conditioning as C
from ganlab.conditioning import BoxAnnotation, BoxError


class TestBboxMask:
    def test_single_box_pixel_count(self):
        mask = C.build_bbox_mask([BoxAnnotation((100, 60), (32, 32))], (256, 256))
        assert int(mask.canvas.sum()) == 1024

    def test_empty(self):
        mask = C.build_bbox_mask([], (64, 64))
        assert mask.canvas.sum() == 0

    def test_overlap_union_matches_pixel_scan(self):
        boxes = [BoxAnnotation((5, 5), (10, 12)), BoxAnnotation((10, 10), (9, 9))]
        mask = C.build_bbox_mask(boxes, (40, 40))
        count = 0
        for i in range(40):
            for j in range(40):
                inside = any(b.origin[0] <= i < b.origin[0] + b.extent[0]
                             and b.origin[1] <= j < b.origin[1] + b.extent[1] for b in boxes)
                count += inside
        assert int(mask.canvas.sum()) == count

    def test_out_of_bounds_names_box(self):
        with pytest.raises(BoxError, match=r"origin=\(60, 60\)"):
            C.build_bbox_mask([BoxAnnotation((60, 60), (10, 10))], (64, 64))

    def test_recover_disjoint_boxes(self):
        boxes = [BoxAnnotation((2, 3), (4, 5)), BoxAnnotation((20, 25), (6, 3))]
        mask = C.build_bbox_mask(boxes, (40, 40))
        got = sorted(C.recover_boxes(mask), key=lambda b: b.origin)
        assert [(b.origin, b.extent) for b in got] == [(b.origin, b.extent) for b in boxes]


class FakeRng:
    """Duck-typed generator with scripted draws for deterministic transforms."""

    def __init__(self, flips=(0, 0), shift=(0.0, 0.0), zoom_delta=0.0):
        self.flips = list(flips)
        self.shift = np.asarray(shift)
        self.zoom_delta = zoom_delta

    def integers(self, lo, hi):
        return self.flips.pop(0)

    def uniform(self, lo, hi, size=None):
        if size == 2:
            return self.shift
        return self.zoom_delta


class TestAugmentMask:
    def test_identity_draw(self):
        mask = C.build_bbox_mask([BoxAnnotation((10, 4), (6, 8))], (32, 32))
        out = C.augment_mask(mask, FakeRng())
        np.testing.assert_array_equal(out.canvas, mask.canvas)

    def test_horizontal_flip_mirrors_left_edge_box(self):
        mask = C.build_bbox_mask([BoxAnnotation((10, 0), (3, 4))], (32, 32))
        out = C.augment_mask(mask, FakeRng(flips=(0, 1)))
        (box,) = out.boxes
        assert box.origin == (10, 28) and box.extent == (3, 4)

    def test_magnitude_bounds_over_many_draws(self):
        rng = np.random.default_rng(12)
        w = 64
        mask = C.build_bbox_mask([BoxAnnotation((28, 28), (8, 8))], (w, w))
        center = np.array([32.0, 32.0])
        for _ in range(10_000):
            out = C.augment_mask(mask, rng)
            (box,) = out.boxes
            c = np.array(box.origin) + np.array(box.extent) / 2.0
            # centered box: zoom leaves the center fixed, so displacement is
            # bounded by the 10% shift plus integer rounding
            assert np.all(np.abs(c - center) <= 0.1 * w + 1.0)
            assert all(0.9 * 8 - 1.5 <= e <= 1.1 * 8 + 1.5 for e in box.extent)

    def test_box_count_preserved(self):
        rng = np.random.default_rng(3)
        boxes = [BoxAnnotation((5, 5), (6, 6)), BoxAnnotation((40, 40), (8, 5))]
        mask = C.build_bbox_mask(boxes, (64, 64))
        for _ in range(200):
            assert len(C.augment_mask(mask, rng).boxes) == 2

    def test_impossible_transform_errors_after_retries(self):
        # degenerate canvas-sized box cannot survive a forced huge shift
        mask = C.build_bbox_mask([BoxAnnotation((0, 0), (2, 2))], (16, 16))

        class DoomedRng(FakeRng):
            def __init__(self):
                super().__init__()
                self.calls = 0

            def integers(self, lo, hi):
                return 0

            def uniform(self, lo, hi, size=None):
                if size == 2:
                    return np.array([5.0, 5.0])  # deliberately out of the sampler's range
                return 0.0

        with pytest.raises(BoxError, match="10 tries"):
            C.augment_mask(mask, DoomedRng())


class TestNoiseBox:
    def test_exterior_bit_identical(self):
        rng = np.random.default_rng(0)
        voi = rng.standard_normal((32, 32, 32)).astype(np.float32)
        box = BoxAnnotation((8, 8, 8), (16, 16, 16))
        carved = C.carve_noise_box(voi, box, rng)
        inside = np.zeros(voi.shape, dtype=bool)
        inside[box.slices()] = True
        np.testing.assert_array_equal(carved.volume[~inside], voi[~inside])
        np.testing.assert_array_equal(carved.original_box_content, voi[box.slices()])

    def test_noise_statistics(self):
        rng = np.random.default_rng(1)
        voi = np.zeros((32, 32, 32), dtype=np.float32)
        box = BoxAnnotation((8, 8, 8), (16, 16, 16))
        inside = C.carve_noise_box(voi, box, rng).volume[box.slices()]
        assert abs(inside.mean()) < 0.02
        assert inside.min() >= -0.5 and inside.max() <= 0.5

    def test_box_exceeding_volume(self):
        with pytest.raises(BoxError):
            C.carve_noise_box(np.zeros((8, 8, 8)), BoxAnnotation((4, 4, 4), (8, 8, 8)),
                              np.random.default_rng(0))

    def test_zero_extent_rejected(self):
        with pytest.raises(BoxError):
            BoxAnnotation((0, 0, 0), (0, 4, 4))


class TestTileConditions:
    def test_small_solid(self):
        ch = C.tile_conditions("small", "solid", (4, 4, 4))
        n = 64
        assert [int(c.sum()) for c in ch.channels] == [n, 0, 0, n, 0, 0]

    def test_large_ggn(self):
        ch = C.tile_conditions("large", "ggn", (4, 4, 4))
        n = 64
        assert [int(c.sum()) for c in ch.channels] == [0, 0, n, 0, 0, n]

    def test_generator_input_channel_count(self):
        voi = np.zeros((8, 8, 8), dtype=np.float32)
        ch = C.tile_conditions("medium", "part-solid", (8, 8, 8))
        assert C.stack_generator_input(voi, ch).shape == (7, 8, 8, 8)

    def test_channels_binary_one_hot(self):
        ch = C.tile_conditions("medium", "ggn", (2, 2, 2)).channels
        assert set(np.unique(ch)) <= {0.0, 1.0}
        size_hot = [np.all(ch[i] == 1.0) for i in range(3)]
        att_hot = [np.all(ch[i] == 1.0) for i in range(3, 6)]
        assert sum(size_hot) == 1 and sum(att_hot) == 1

    def test_unknown_class(self):
        with pytest.raises(BoxError, match="spiculated"):
            C.tile_conditions("spiculated", "solid", (2, 2, 2))


def brute_blend(volume, box):
    """Deliberately naive reimplementation of the boundary blending rule."""
    vol = volume.astype(np.float32).copy()
    nz, ny, nx = vol.shape
    shell = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                in_dilated = all(box.origin[a] - 3 <= (z, y, x)[a] < box.origin[a] + box.extent[a] + 3
                                 for a in range(3))
                in_eroded = all(box.origin[a] + 3 <= (z, y, x)[a] < box.origin[a] + box.extent[a] - 3
                                for a in range(3))
                if in_dilated and not in_eroded:
                    shell.append((z, y, x))
    # same declared accumulation order as the library (minus side first per
    # axis, float32 throughout) so agreement is exact, not just approximate
    for _ in range(5):
        new = vol.copy()
        for (z, y, x) in shell:
            total = vol[z, y, x]
            for dz, dy, dx in ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)):
                zz = min(max(z + dz, 0), nz - 1)
                yy = min(max(y + dy, 0), ny - 1)
                xx = min(max(x + dx, 0), nx - 1)
                total = np.float32(total + vol[zz, yy, xx])
            new[z, y, x] = np.float32(total / np.float32(7.0))
        vol = new
    return vol


class TestBlend:
    def test_constant_volume_fixed_point(self):
        vol = np.full((10, 10, 10), 0.3, dtype=np.float32)
        out = C.blend_box_boundary(vol, BoxAnnotation((3, 3, 3), (4, 4, 4)))
        np.testing.assert_allclose(out, vol, atol=1e-6)

    def test_matches_bruteforce_on_step_volume(self):
        vol = np.zeros((8, 8, 8), dtype=np.float32)
        vol[4:, :, :] = 1.0
        box = BoxAnnotation((2, 2, 2), (4, 4, 4))
        got = C.blend_box_boundary(vol, box)
        np.testing.assert_array_equal(got, brute_blend(vol, box))

    def test_matches_bruteforce_random(self):
        rng = np.random.default_rng(8)
        vol = rng.standard_normal((8, 8, 8)).astype(np.float32)
        box = BoxAnnotation((1, 2, 3), (4, 3, 2))
        np.testing.assert_array_equal(C.blend_box_boundary(vol, box), brute_blend(vol, box))

    def test_far_voxels_untouched(self):
        rng = np.random.default_rng(9)
        vol = rng.standard_normal((20, 20, 20)).astype(np.float32)
        box = BoxAnnotation((8, 8, 8), (4, 4, 4))
        out = C.blend_box_boundary(vol, box)
        far = np.ones(vol.shape, dtype=bool)
        far[4:16, 4:16, 4:16] = False  # within 4 of the box in Chebyshev terms
        np.testing.assert_array_equal(out[far], vol[far])

    def test_never_modifies_more_than_3_outside(self):
        rng = np.random.default_rng(10)
        vol = rng.standard_normal((16, 16, 16)).astype(np.float32)
        box = BoxAnnotation((6, 6, 6), (4, 4, 4))
        out = C.blend_box_boundary(vol, box)
        changed = np.argwhere(out != vol)
        for z, y, x in changed:
            assert 3 <= z < 13 and 3 <= y < 13 and 3 <= x < 13


class TestMapBack:
    def test_identity_paste(self):
        rng = np.random.default_rng(11)
        scan = rng.standard_normal((20, 20, 20)).astype(np.float32)
        voi = rng.standard_normal((6, 6, 6)).astype(np.float32)
        out = C.map_back(scan, (5, 5, 5), voi)
        np.testing.assert_array_equal(out[5:11, 5:11, 5:11], voi)
        mask = np.ones(scan.shape, dtype=bool)
        mask[5:11, 5:11, 5:11] = False
        np.testing.assert_array_equal(out[mask], scan[mask])

    def test_constant_voi_resample(self):
        scan = np.zeros((16, 16, 16), dtype=np.float32)
        voi = np.full((4, 4, 4), 0.7, dtype=np.float32)
        out = C.map_back(scan, (2, 2, 2), voi, original_resolution=(8, 8, 8))
        np.testing.assert_allclose(out[2:10, 2:10, 2:10], 0.7, atol=1e-6)

    def test_linear_ramp_matches_analytic_trilinear(self):
        src = np.arange(4, dtype=np.float64)
        voi = src[:, None, None] + 2 * src[None, :, None] + 3 * src[None, None, :]
        got = C.resample_trilinear(voi, (8, 8, 8))
        coords = np.linspace(0, 3, 8)
        expected = coords[:, None, None] + 2 * coords[None, :, None] + 3 * coords[None, None, :]
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_mismatch_without_resample_info(self):
        scan = np.zeros((8, 8, 8), dtype=np.float32)
        voi = np.zeros((12, 12, 12), dtype=np.float32)
        with pytest.raises(BoxError, match="original_resolution"):
            C.map_back(scan, (0, 0, 0), voi)


class TestSizeClasses:
    def test_thresholds(self):
        assert C.size_class_for((10, 4, 4), 1.0) == "small"
        assert C.size_class_for((11, 4, 4), 1.0) == "medium"
        assert C.size_class_for((20, 4, 4), 1.0) == "medium"
        assert C.size_class_for((21, 4, 4), 1.0) == "large"

    def test_pitch_scaling(self):
        assert C.size_class_for((8, 8, 8), 2.0) == "medium"
        assert C.size_class_for((16, 16, 16), 2.0) == "large"

    def test_record_roundtrip(self):
        box = BoxAnnotation((1, 2, 3), (4, 5, 6), "small", "ggn", scan_id="s01")
        back = BoxAnnotation.from_record(box.to_record())
        assert back == box
