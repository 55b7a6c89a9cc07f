"""Seeded comparison harness: detector with no augmentation versus a 1:1 mix
of box-conditioned synthetic slices, across several seeds.

The harness reports the per-seed and mean sensitivities plus the direction of
the effect; it asserts nothing about that direction. Reruns with the same
config are bit-identical."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import phantom as ph
from . import progressive as prog
from .conditioning import build_bbox_mask, augment_mask
from .detector import DAMix, TrainSchedule, YoloGridSpec, train_supervised
from .metrics import cpm, froc


@dataclass
class DaStudyConfig:
    slice_count: int = 48
    extent: int = 32
    lesions: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    iou_threshold: float = 0.25
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    detector_epochs: int = 6
    detector_grid: int = 4
    gan_steps_per_stage: int = 120
    gan_target: int = 16
    gan_scale_divisor: int = 32
    synth_ratio: float = 1.0


def _detection_arrays(scenes):
    images = np.stack([ph.render(s)[None] for s in scenes]).astype(np.float32)
    boxes = [list(s.boxes) for s in scenes]
    return images, boxes


def _truth_boxes(boxes, extent):
    return [[(b.origin[0] / extent, b.origin[1] / extent,
              (b.origin[0] + b.extent[0]) / extent,
              (b.origin[1] + b.extent[1]) / extent) for b in bl] for bl in boxes]


def _synth_pool(train_images, train_boxes, cfg: DaStudyConfig, seed: int):
    """Quick conditioned progressive run on the training slices, then sample
    a pool the size of the training set using augmented training masks."""
    target = cfg.gan_target
    extent = train_images.shape[-1]
    gan_cfg = prog.ProgressiveConfig.cpggan(
        target=target, steps_per_stage=cfg.gan_steps_per_stage,
        scale_divisor=cfg.gan_scale_divisor)
    canvases = np.stack([build_bbox_mask(b, (extent, extent)).canvas[None]
                         for b in train_boxes])
    images = prog.downsample_images(train_images, target)
    result = prog.train_progressive(images, gan_cfg, seed=seed, canvases=canvases)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7331]))
    masks = [build_bbox_mask(b, (extent, extent)) for b in train_boxes if b]
    picks, boxes_out = [], []
    n = len(train_images)
    for _ in range(n):
        mask = augment_mask(masks[rng.integers(0, len(masks))], rng)
        picks.append(build_bbox_mask(mask.boxes, (extent, extent)))
        boxes_out.append(list(mask.boxes))
    pool_canvases = np.stack([m.canvas[None] for m in picks])
    synth_small = prog.synthesize(result, n, seed=seed + 1, canvases=pool_canvases)
    # bring samples up to detector resolution by nearest-neighbor repetition
    factor = extent // synth_small.shape[-1]
    synth = np.repeat(np.repeat(synth_small, factor, axis=2), factor, axis=3)
    return synth.astype(np.float32), boxes_out


def da_direction_study(cfg: DaStudyConfig | None = None) -> dict:
    cfg = cfg or DaStudyConfig()
    per_seed = []
    for seed in cfg.seeds:
        scenes = [ph.generate_phantom(seed * 100_000 + i, dims=2, extent=cfg.extent,
                                      lesion_count=cfg.lesions, scan_id=f"s{i:03d}")
                  for i in range(cfg.slice_count)]
        splits = ph.make_splits(scenes, cfg.split, seed)
        train_x, train_b = _detection_arrays(splits["train"])
        val_x, val_b = _detection_arrays(splits["validation"])
        test_x, test_b = _detection_arrays(splits["test"])
        test_truths = _truth_boxes(test_b, cfg.extent)
        ids = [s.scan_id for s in splits["test"]]
        spec = YoloGridSpec(s=cfg.detector_grid, b=2)
        schedule = TrainSchedule(epochs=cfg.detector_epochs, batch_size=8,
                                 iou_threshold=cfg.iou_threshold)

        arms = {}
        synth_x, synth_b = _synth_pool(train_x, train_b, cfg, seed)
        for arm, mix in (("no_da", DAMix()),
                         ("cpggan_da", DAMix(synth_x, synth_b, ratio=cfg.synth_ratio))):
            model = train_supervised(train_x, train_b, val_x, val_b, spec=spec,
                                     da_mix=mix, schedule=schedule, seed=seed)
            dset = model.predict_units(test_x, ids, detection_threshold=1e-4,
                                       truths=test_truths)
            if any(u.predictions for u in dset.units):
                curve = froc(dset, cfg.iou_threshold)
                arms[arm] = {
                    "sensitivity_at_2fp": curve.sensitivity_at(2.0),
                    "sensitivity_at_4fp": curve.sensitivity_at(4.0),
                    "cpm": cpm(curve),
                }
            else:  # a detector that never fires scores zero everywhere
                arms[arm] = {"sensitivity_at_2fp": 0.0, "sensitivity_at_4fp": 0.0, "cpm": 0.0}
        per_seed.append({"seed": seed, **arms})

    mean_no = float(np.mean([r["no_da"]["sensitivity_at_2fp"] for r in per_seed]))
    mean_da = float(np.mean([r["cpggan_da"]["sensitivity_at_2fp"] for r in per_seed]))
    direction = "improved" if mean_da > mean_no else ("unchanged" if mean_da == mean_no
                                                      else "degraded")
    return {
        "protocol": {
            "slice_count": cfg.slice_count, "extent": cfg.extent,
            "iou_threshold": cfg.iou_threshold, "seeds": list(cfg.seeds),
            "ratio": cfg.synth_ratio, "operating_point": "sensitivity at 2 FPs per slice",
        },
        "per_seed": per_seed,
        "mean_sensitivity": {"no_da": mean_no, "cpggan_da": mean_da},
        "direction": direction,
    }


def study_report_text(report: dict) -> str:
    lines = [f"DA-direction study (IoU >= {report['protocol']['iou_threshold']}, "
             f"{report['protocol']['operating_point']}):"]
    for row in report["per_seed"]:
        lines.append(
            f"  seed {row['seed']}: no-DA {row['no_da']['sensitivity_at_2fp']:.3f} "
            f"(CPM {row['no_da']['cpm']:.3f}) vs "
            f"1:1 DA {row['cpggan_da']['sensitivity_at_2fp']:.3f} "
            f"(CPM {row['cpggan_da']['cpm']:.3f})")
    means = report["mean_sensitivity"]
    lines.append(f"  mean: {means['no_da']:.3f} -> {means['cpggan_da']:.3f} "
                 f"({report['direction']})")
    return "\n".join(lines)


def canonical_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
