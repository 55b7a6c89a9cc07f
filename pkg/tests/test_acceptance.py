"""Acceptance gate: one test per acceptance criterion, each at its stated
tolerance, printing one PASS line on completion (pytest reports failures).

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and the informational study report.
"""

import json
import math
import time

import numpy as np
import pytest

from ganlab import losses as L
from ganlab import metrics as M
from ganlab import phantom as ph
from ganlab import progressive as prog
from ganlab import tensor as T
from ganlab.conditioning import BoxAnnotation, build_bbox_mask, carve_noise_box, tile_conditions
from ganlab.conditioning import blend_box_boundary
from ganlab.embedding import EmbeddingConfig, tsne
from ganlab.graph import Graph, grad_check
from ganlab.tensor import Tensor


def ok(name: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: PASS {detail}")


# ---------------------------------------------------------------------------
# criterion 1: autodiff oracle over every layer kind, < 60 s

KIND_CASES = [
    ("conv2d", {"stride": 1, "pad": 1}, (3, 2, 3, 3), (2, 2, 7, 7)),
    ("conv2d", {"stride": 2, "pad": 1}, (3, 2, 4, 4), (2, 2, 8, 8)),
    ("conv3d", {"stride": 1, "pad": 1}, (2, 2, 3, 3, 3), (2, 2, 6, 6, 6)),
    ("conv3d", {"stride": 2, "pad": 1}, (2, 2, 4, 4, 4), (1, 2, 8, 8, 8)),
    ("transposed-conv", {"stride": 2, "pad": 1}, (2, 3, 4, 4), (1, 2, 4, 4)),
    ("dense", {}, (8, 3), (2, 8)),
    ("batch-norm", None, None, (4, 3, 5, 5)),
    ("nearest-upsample", {}, None, (2, 3, 4, 4)),
    ("average-downsample", {}, None, (2, 3, 8, 8)),
    ("pixelwise-feature-norm", {}, None, (2, 4, 5, 5)),
    ("minibatch-stddev", {}, None, (4, 3, 4, 4)),
    ("relu", {}, None, (3, 7)),
    ("leaky-relu", {"slope": 0.2}, None, (3, 7)),
    ("elu", {}, None, (3, 7)),
    ("tanh", {}, None, (3, 7)),
    ("sigmoid", {}, None, (3, 7)),
    ("dropout", None, None, None),  # checked via its deterministic rejection path
    ("concat", {}, None, (2, 3, 4, 4)),
    ("add", {}, None, (3, 6)),
    ("mul", {}, None, (3, 6)),
    ("mean", {}, None, (3, 8)),
    ("sum", {}, None, (3, 8)),
    ("l1", {}, None, (3, 8)),
    ("l2-norm", {}, None, (3, 8)),
]


def graph_for_kind(kind, attrs, pshape, xshape, rng):
    g = Graph()
    g.add_input("x")
    if kind in ("conv2d", "conv3d", "transposed-conv", "dense"):
        g.add_param("w", (rng.standard_normal(pshape) * 0.4).astype(np.float32))
        g.add("op", kind, ["x", "w"], **attrs)
    elif kind == "batch-norm":
        g.add_param("gamma", rng.standard_normal(xshape[1]).astype(np.float32))
        g.add_param("beta", rng.standard_normal(xshape[1]).astype(np.float32))
        g.add("op", kind, ["x", "gamma", "beta"])
    elif kind in ("concat", "add", "mul"):
        g.add_param("w", (rng.standard_normal(xshape) * 0.4).astype(np.float32))
        g.add("op", kind, ["x", "w"], **({"axis": 1} if kind == "concat" else {}))
    else:
        g.add_param("w", (rng.standard_normal(xshape) * 0.4).astype(np.float32))
        g.add("scaled", "mul", ["x", "w"])
        g.add("op", kind, ["scaled"], **attrs)
    # quadratic plus linear term keeps the loss sensitive even for
    # norm-preserving ops like the pixelwise feature normalization
    g.add("sq", "mul", ["op", "op"])
    g.add("mix", "add", ["sq", "op"])
    g.add("loss", "sum", ["mix"])
    return g


def test_criterion_autodiff_oracle():
    start = time.time()
    rng = np.random.default_rng(2024)
    worst = {}
    for kind, attrs, pshape, xshape in KIND_CASES:
        if kind == "dropout":
            from ganlab.graph import GraphError
            g = Graph()
            g.add_input("x")
            g.add_param("w", np.ones((3, 3), dtype=np.float32))
            g.add("h", "dense", ["x", "w"])
            g.add("d", "dropout", ["h"], rate=0.5)
            g.add("loss", "sum", ["d"])
            with pytest.raises(GraphError):
                grad_check(g, {"x": np.ones((2, 3))}, "loss")
            worst[kind] = 0.0
            continue
        g = graph_for_kind(kind, attrs, pshape, xshape, rng)
        report = grad_check(g, {"x": rng.standard_normal(xshape)}, "loss", tolerance=1e-4)
        assert report.passed, f"{kind}: {report.per_param}"
        worst[kind] = report.worst()
    elapsed = time.time() - start
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    assert max(worst.values()) < 1e-4
    ok("autodiff-oracle", f"(24 layer kinds, worst rel err {max(worst.values()):.2e}, "
                          f"{elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 2: WGAN-GP analytic checks

def test_criterion_wgan_gp_analytic():
    interp = Tensor(np.random.default_rng(0).standard_normal((6, 2)))

    w5 = Tensor(np.array([[3.0], [4.0]]), requires_grad=True)
    penalty = L.gradient_penalty(lambda x: T.matmul(x, w5), interp)
    assert abs(10.0 * penalty.item() - 160.0) <= 1e-4

    w1 = Tensor(np.array([[0.6], [0.8]]), requires_grad=True)
    penalty_unit = L.gradient_penalty(lambda x: T.matmul(x, w1), interp)
    assert abs(penalty_unit.item()) <= 1e-6
    ok("wgan-gp-analytic", f"(|w|=5 penalty {10 * penalty.item():.6f}, "
                           f"unit-norm {penalty_unit.item():.2e})")


# ---------------------------------------------------------------------------
# criterion 3: loss-family closed forms

def test_criterion_loss_closed_forms():
    v = L.minimax_value(np.full(16, 0.5), np.full(16, 0.5)).item()
    assert abs(v - (-2 * math.log(2))) <= 1e-6

    total = L.munit_total_loss({c: 1.0 for c in L.MUNIT_COMPONENTS})
    assert total == 22.02

    l1_value = 0.5
    off = L.mcgan_objective(0.2, 0.3, l1_value, L.McganWeights(enable_l1=False))
    on = L.mcgan_objective(0.2, 0.3, l1_value, L.McganWeights(enable_l1=True))
    assert on - off == 100.0 * l1_value
    ok("loss-closed-forms", f"(minimax {v:.6f}, munit {total}, l1-shift {on - off})")


# ---------------------------------------------------------------------------
# criterion 4: progressive invariants

def test_criterion_progressive_invariants():
    schedule = prog.build_schedule(4, 64, 100)
    assert schedule.stage_count == 5

    bp = prog.NetworkBlueprint(base=4, target=16, scale_divisor=64, seed=3)
    gen0, _, params0 = prog.grow(bp, 0)
    z = np.random.default_rng(5).standard_normal((2, bp.latent)).astype(np.float32)
    out0 = prog.generator_forward(gen0, bp, 0, z, alpha=1.0)
    expected = T.upsample_nearest(out0, 2).data

    import hashlib
    digest = hashlib.sha256()
    for name in sorted(params0):
        digest.update(params0[name].data.tobytes())
    before = digest.hexdigest()

    gen1, _, params1 = prog.grow(bp, 1, params0)
    out1 = prog.generator_forward(gen1, bp, 1, z, alpha=0.0)
    assert np.array_equal(out1.data, expected), "fade at alpha=0 is not bit-exact"

    digest = hashlib.sha256()
    for name in sorted(params0):
        digest.update(params1[name].data.tobytes())
    assert digest.hexdigest() == before, "growth mutated carried parameters"
    ok("progressive-invariants", "(5 stages, bit-exact fade, checksum preserved)")


# ---------------------------------------------------------------------------
# criterion 5: conditioning oracles

def brute_blend(volume, box):
    vol = volume.astype(np.float32).copy()
    nz, ny, nx = vol.shape
    shell = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                dil = all(box.origin[a] - 3 <= (z, y, x)[a] < box.origin[a] + box.extent[a] + 3
                          for a in range(3))
                ero = all(box.origin[a] + 3 <= (z, y, x)[a] < box.origin[a] + box.extent[a] - 3
                          for a in range(3))
                if dil and not ero:
                    shell.append((z, y, x))
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


def test_criterion_conditioning_oracles():
    rng = np.random.default_rng(9)
    for trial in range(3):
        vol = rng.standard_normal((8, 8, 8)).astype(np.float32)
        box = BoxAnnotation((1 + trial % 2, 2, 1), (4, 3, 4))
        got = blend_box_boundary(vol, box)
        assert np.array_equal(got, brute_blend(vol, box)), "blend differs from brute force"

    # noise statistics over 1e5 samples
    voi = np.zeros((64, 64, 48), dtype=np.float32)
    box = BoxAnnotation((2, 2, 2), (50, 50, 40))  # exactly 100,000 voxels
    carved = carve_noise_box(voi, box, np.random.default_rng(10))
    inside = carved.volume[box.slices()]
    assert inside.size >= 10 ** 5
    assert abs(inside.mean()) < 0.01
    assert inside.min() >= -0.5 and inside.max() <= 0.5
    assert abs(inside.var() - 1.0 / 12.0) < 1e-3

    mask = build_bbox_mask([BoxAnnotation((4, 4), (8, 8))], (32, 32))
    assert set(np.unique(mask.canvas)) == {0.0, 1.0}
    ch = tile_conditions("medium", "ggn", (4, 4, 4)).channels
    assert set(np.unique(ch)) <= {0.0, 1.0}
    assert sum(np.all(ch[i] == 1.0) for i in range(3)) == 1
    assert sum(np.all(ch[i] == 1.0) for i in range(3, 6)) == 1
    ok("conditioning-oracles",
       f"(blend voxel-exact, noise mean {inside.mean():+.4f} on {inside.size} samples)")


# ---------------------------------------------------------------------------
# criterion 6: metrics oracles, < 120 s in total

def quad_chi2_tail(x, n=200_000, upper=200.0):
    ts = np.linspace(x, upper, n)
    pdf = ts ** -0.5 * np.exp(-ts / 2) / (2 ** 0.5 * math.gamma(0.5))
    return float(np.trapezoid(pdf, ts))


def test_criterion_metrics_oracles():
    start = time.time()
    assert M.iou((0, 0, 2, 2), (1, 1, 3, 3)) == 1 / 7

    staircase = M.FrocCurve([(r, s) for r, s in zip(M.CPM_FP_RATES,
                                                    (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7))])
    assert M.cpm(staircase) == pytest.approx(0.4, abs=1e-12)

    stat, p, _ = M.mcnemar(M.PairedOutcomes(40, 10, 2, 5))
    assert abs(p - quad_chi2_tail(stat)) < 1e-3

    assert M.holm_bonferroni([0.01, 0.04]) == [0.02, 0.04]

    rng = np.random.default_rng(11)
    points = np.concatenate([rng.normal(0, 0.08, (150, 16)), rng.normal(0.9, 0.08, (150, 16))])
    cfg = EmbeddingConfig(perplexity=30.0, iterations=400)
    result = tsne(points, cfg, seed=0)
    target = np.log2(cfg.perplexity)
    assert np.max(np.abs(result.row_entropy_bits - target)) <= 1e-4
    assert result.final_kl < result.initial_kl
    elapsed = time.time() - start
    assert elapsed < 120.0, f"metric suite took {elapsed:.1f}s"
    ok("metrics-oracles", f"(tsne KL {result.initial_kl:.3f}->{result.final_kl:.3f}, "
                          f"{elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion 7: blinded-study scoring arithmetic

def test_criterion_vtt_scoring():
    responses = (
        [{"true_label": "real", "answered_label": "real"}] * 73
        + [{"true_label": "real", "answered_label": "synthetic"}] * 27
        + [{"true_label": "synthetic", "answered_label": "real"}] * 14
        + [{"true_label": "synthetic", "answered_label": "synthetic"}] * 86)
    report = M.vtt_score(responses)
    assert report.accuracy == 79.5
    assert report.cells["real_as_real"] == 73.0
    assert report.cells["real_as_synthetic"] == 27.0
    assert report.cells["synthetic_as_real"] == 14.0
    assert report.cells["synthetic_as_synthetic"] == 86.0
    ok("vtt-scoring", f"(73/27/14/86 -> {report.accuracy}%)")


# ---------------------------------------------------------------------------
# criterion 8: end-to-end smoke (PGGAN 4->32, 500 steps; CPGGAN conditioning)

def phantom_training_set(count, extent, seed0=0):
    scenes = [ph.generate_phantom(seed0 + i, dims=2, extent=extent, lesion_count=1)
              for i in range(count)]
    images = np.stack([ph.render(s)[None] for s in scenes]).astype(np.float32)
    canvases = np.stack([build_bbox_mask(s.boxes, (extent, extent)).canvas[None]
                         for s in scenes])
    return images, canvases


def test_criterion_end_to_end_smoke():
    start = time.time()
    images, canvases = phantom_training_set(64, 32)

    losses = []
    cfg = prog.ProgressiveConfig(base=4, target=32, steps_per_stage=125, batch_size=8,
                                 scale_divisor=16)
    result = prog.train_progressive(images, cfg, seed=0,
                                    loss_log=lambda s, n, v: losses.append(v))
    assert len(losses) == 2 * 500
    assert all(np.isfinite(v) for v in losses), "non-finite loss during PGGAN smoke"
    out = prog.synthesize(result, 8, seed=1)
    assert out.shape == (8, 1, 32, 32)
    assert np.all(out >= -1.0) and np.all(out <= 1.0), "outputs left the tanh range"
    pggan_time = time.time() - start

    ccfg = prog.ProgressiveConfig.cpggan(base=4, target=32, steps_per_stage=125,
                                         scale_divisor=16)
    cres = prog.train_progressive(images, ccfg, seed=0, canvases=canvases)
    rng = np.random.default_rng(42)
    n = 20
    boxes, canv = [], []
    for _ in range(n):
        o = rng.integers(4, 18, 2)
        e = np.minimum(rng.integers(6, 12, 2), 32 - o)
        boxes.append(BoxAnnotation(tuple(o), tuple(e)))
        canv.append(build_bbox_mask([boxes[-1]], (32, 32)).canvas[None])
    canv = np.stack(canv)
    with_cond = prog.synthesize(cres, n, seed=7, canvases=canv)
    without = prog.synthesize(cres, n, seed=7, canvases=np.zeros_like(canv))
    hits = 0
    for i, box in enumerate(boxes):
        diff = np.abs(with_cond[i, 0] - without[i, 0])
        mask = np.zeros((32, 32), dtype=bool)
        mask[box.slices()] = True
        if diff[mask].mean() > diff[~mask].mean() and diff[mask].mean() > 0.02:
            hits += 1
    total = time.time() - start
    assert total < 600.0, f"smoke took {total:.0f}s on one core"
    assert hits >= 0.9 * n, f"conditioned content landed in only {hits}/{n} boxes"
    ok("end-to-end-smoke", f"(pggan {pggan_time:.0f}s, boxes {hits}/{n}, total {total:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 9: DA-direction study harness (informational, deterministic)

def test_criterion_da_direction_study():
    from ganlab.study import DaStudyConfig, canonical_json, da_direction_study, study_report_text

    cfg = DaStudyConfig(seeds=(0, 1, 2))
    report_a = da_direction_study(cfg)
    report_b = da_direction_study(cfg)
    assert canonical_json(report_a) == canonical_json(report_b), "study rerun not bit-identical"
    assert {"protocol", "per_seed", "mean_sensitivity", "direction"} <= set(report_a)
    assert len(report_a["per_seed"]) == 3
    for row in report_a["per_seed"]:
        for arm in ("no_da", "cpggan_da"):
            assert 0.0 <= row[arm]["sensitivity_at_2fp"] <= 1.0
    print()
    print(study_report_text(report_a))
    ok("da-direction-study", f"(direction reported: {report_a['direction']})")
