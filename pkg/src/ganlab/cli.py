"""Command-line entry point: phantom generation, GAN training, synthesis,
augmentation, detection/classification, evaluation, embeddings, the rating
service, and run reports.

Exit codes: 0 success, 1 user error (bad config/arguments), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gan_zoo as zoo
from . import phantom as ph
from . import progressive as prog
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import BoxAnnotation, build_bbox_mask, augment_mask
from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .detector import DAMix, TrainSchedule, YoloGridSpec, train_supervised
from .io import LossCurveLog, read_jsonl, read_pgm, write_jsonl, write_pgm
from .metrics import Detection, DetectionSet, UnitDetections, cpm, froc, match_and_count
from .tensor import Tensor

DATA_ROOT_ENV = "GANLAB_DATA_ROOT"
VTT_LISTEN_ENV = "GANLAB_VTT_LISTEN"


class UserError(ValueError):
    pass


def _resolve(path: str | Path) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _write_manifest(out: Path, cfg: ExperimentConfig | None, seed: int,
                    files: list[Path], status: str = "complete") -> None:
    manifest = {
        "config_hash": cfg.hash() if cfg else None,
        "seed": seed,
        "status": status,
        "files": sorted(str(f.relative_to(out)) for f in files if f.exists()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


# ---------------------------------------------------------------------------
# dataset plumbing

def _phantom_scenes(cfg: ExperimentConfig, seed: int, dims: int | None = None):
    dims = dims or (2 if cfg.get("dataset", "source") != "phantom3d" else 3)
    count = cfg.get("dataset", "count")
    extent = cfg.get("dataset", "extent")
    lesions = cfg.get("dataset", "lesions")
    return [ph.generate_phantom(seed * 100_000 + i, dims=dims, extent=extent,
                                lesion_count=lesions, scan_id=f"s{i:04d}")
            for i in range(count)]


def _scenes_to_arrays(scenes) -> tuple[np.ndarray, list[list[BoxAnnotation]]]:
    images = np.stack([ph.render(s)[None] for s in scenes]).astype(np.float32)
    return images, [list(s.boxes) for s in scenes]


def _load_bundle(path: Path) -> tuple[np.ndarray, list[list[BoxAnnotation]], list[str]]:
    pgms = sorted(path.glob("*.pgm"))
    if not pgms:
        raise UserError(f"no PGM images under {path}")
    by_scan: dict[str, list[BoxAnnotation]] = {}
    ann = path / "annotations.jsonl"
    if ann.exists():
        for rec in read_jsonl(ann):
            by_scan.setdefault(rec["scan_id"], []).append(BoxAnnotation.from_record(rec))
    images, boxes, ids = [], [], []
    for p in pgms:
        images.append(read_pgm(p).astype(np.float32)[None] / 127.5 - 1.0)
        boxes.append(by_scan.get(p.stem, []))
        ids.append(p.stem)
    return np.stack(images), boxes, ids


def _dataset(cfg: ExperimentConfig, seed: int):
    source = cfg.get("dataset", "source")
    if source == "dir":
        return _load_bundle(_resolve(cfg.get("dataset", "path")))
    scenes = _phantom_scenes(cfg, seed)
    images, boxes = _scenes_to_arrays(scenes)
    return images, boxes, [s.scan_id for s in scenes]


def _canvases(boxes: list[list[BoxAnnotation]], extent: int) -> np.ndarray:
    return np.stack([build_bbox_mask(b, (extent, extent)).canvas[None] for b in boxes])


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom(args) -> int:
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = [ph.generate_phantom(args.seed * 100_000 + i, dims=args.dims,
                                  extent=args.extent, lesion_count=args.lesions,
                                  scan_id=f"s{i:04d}")
              for i in range(args.count)]
    ph.save_scene_bundle(out, scenes)
    _write_manifest(out, None, args.seed, list(out.iterdir()))
    print(f"wrote {args.count} scenes to {out}")
    return 0


def _train_progressive_family(cfg: ExperimentConfig, images, boxes, out: Path,
                              seed: int, conditioned: bool) -> list[Path]:
    target = cfg.get("model", "target")
    pcfg = prog.ProgressiveConfig(
        base=cfg.get("model", "base"), target=target,
        steps_per_stage=cfg.get("schedule", "steps_per_stage"),
        fade_fraction=cfg.get("schedule", "fade_fraction"),
        batch_size=cfg.get("schedule", "batch_size"),
        scale_divisor=cfg.get("model", "scale_divisor"),
        conditioned=conditioned,
        learning_rate=cfg.get("optimizer", "learning_rate"),
        beta1=cfg.get("optimizer", "beta1"), beta2=cfg.get("optimizer", "beta2"),
        lambda_gp=cfg.get("objective", "lambda_gp"),
        critic_iters=cfg.get("objective", "critic_iters"),
        label_flip_period=cfg.get("objective", "label_flip_period") or None,
    )
    if images.shape[-1] != target:
        boxes = [_rescale_boxes(b, images.shape[-1], target) for b in boxes]
        images = prog.downsample_images(images, target)
    canvases = _canvases(boxes, target) if conditioned else None
    with LossCurveLog(out / "losses.jsonl") as log:
        result = prog.train_progressive(images, pcfg, seed=seed, canvases=canvases,
                                        loss_log=log, checkpoint_dir=out)
    return list(out.glob("stage_*"))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("experiment", "seed")
    out = _resolve(args.out or cfg.get("experiment", "out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(serialize_config(cfg))
    family = cfg.get("model", "family")
    images, boxes, _ = _dataset(cfg, seed)
    files: list[Path] = [out / "config.cfg", out / "losses.jsonl"]

    if family in ("pggan", "cpggan"):
        files += _train_progressive_family(cfg, images, boxes, out, seed,
                                           conditioned=family == "cpggan")
    elif family in ("dcgan", "wgan"):
        res = cfg.get("model", "target")
        if images.shape[-1] != res:
            images = prog.downsample_images(images, res)
        zcfg = zoo.ZooConfig(resolution=res, latent=cfg.get("model", "latent"),
                             width=cfg.get("model", "width"),
                             batch_size=cfg.get("schedule", "batch_size"),
                             steps=cfg.get("schedule", "steps"),
                             learning_rate=cfg.get("optimizer", "learning_rate"), seed=seed)
        with LossCurveLog(out / "losses.jsonl") as log:
            if family == "dcgan":
                result = zoo.train_dcgan(images, zcfg, loss_log=log)
            else:
                result = zoo.train_wgan(images, zcfg, clip_c=cfg.get("objective", "clip"),
                                        loss_log=log)
        save_checkpoint(out / "generator.glt", result.generator.params)
        files.append(out / "generator.glt")
    elif family in ("munit", "simgan"):
        res = cfg.get("model", "target")
        if images.shape[-1] != res:
            images = prog.downsample_images(images, res)
        synth_dir = cfg.get("augment", "synth_dir")
        if synth_dir:
            other, _, _ = _load_bundle(_resolve(synth_dir))
            if other.shape[-1] != res:
                other = prog.downsample_images(other, res)
        else:  # shifted-seed phantoms stand in for the synthetic domain
            shifted = [ph.generate_phantom((seed + 5000) * 100_000 + i, dims=2,
                                           extent=cfg.get("dataset", "extent"),
                                           lesion_count=cfg.get("dataset", "lesions"))
                       for i in range(len(images))]
            other = prog.downsample_images(
                np.stack([ph.render(s)[None] for s in shifted]).astype(np.float32), res)
        zcfg = zoo.ZooConfig(resolution=res, width=cfg.get("model", "width"),
                             batch_size=cfg.get("schedule", "batch_size"),
                             steps=cfg.get("schedule", "steps"),
                             learning_rate=cfg.get("optimizer", "learning_rate"), seed=seed)
        with LossCurveLog(out / "losses.jsonl") as log:
            if family == "munit":
                result = zoo.train_munit(other, images, zcfg, loss_log=log)
            else:
                from .losses import SimGanConfig
                result = zoo.train_simgan(other, images, zcfg,
                                          SimGanConfig(lambda_reg=cfg.get("objective", "lambda_reg")),
                                          loss_log=log)
        save_checkpoint(out / "generator.glt", result.generator.params)
        files.append(out / "generator.glt")
    elif family == "mcgan":
        files += _train_mcgan_cmd(cfg, out, seed)
    else:
        raise UserError(f"unknown family {family}")
    _write_manifest(out, cfg, seed, [f for f in files if f.exists()])
    print(f"trained {family}; artifacts under {out}")
    return 0


def _train_mcgan_cmd(cfg: ExperimentConfig, out: Path, seed: int) -> list[Path]:
    from .conditioning import carve_noise_box, stack_generator_input, tile_conditions
    voi_n = cfg.get("model", "voi")
    box_n = cfg.get("model", "box")
    scenes = _phantom_scenes(cfg, seed, dims=3)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    vois, nodules, conds = [], [], []
    lo = (voi_n - box_n) // 2
    for scene in scenes:
        vol = ph.render(scene)
        for box in scene.boxes:
            center = [o + e // 2 for o, e in zip(box.origin, box.extent)]
            origin = [int(np.clip(c - voi_n // 2, 0, scene.extent - voi_n)) for c in center]
            voi = vol[tuple(slice(o, o + voi_n) for o in origin)]
            nodule = voi[(slice(lo, lo + box_n),) * 3].copy()
            carved = carve_noise_box(voi, BoxAnnotation((lo,) * 3, (box_n,) * 3), rng)
            ch = tile_conditions(box.size_class or "small", box.attenuation_class or "solid",
                                 (voi_n,) * 3)
            vois.append(stack_generator_input(carved.volume, ch))
            nodules.append(nodule[None])
            conds.append(tile_conditions(box.size_class or "small",
                                         box.attenuation_class or "solid",
                                         (box_n,) * 3).channels)
    if not vois:
        raise UserError("mcgan training needs scenes with at least one lesion")
    from .losses import McganWeights
    mcfg = zoo.McganDeskConfig(
        voi=voi_n, box=box_n, width=cfg.get("model", "width"),
        batch_size=cfg.get("schedule", "batch_size"), steps=cfg.get("schedule", "steps"),
        learning_rate=cfg.get("optimizer", "learning_rate"), seed=seed,
        weights=McganWeights(l1_weight=cfg.get("objective", "l1_weight"),
                             enable_l1=cfg.get("objective", "enable_l1")),
        lambda_gp=cfg.get("objective", "lambda_gp"),
        label_flip_period=cfg.get("objective", "label_flip_period") or 3)
    with LossCurveLog(out / "losses.jsonl") as log:
        result = zoo.train_mcgan(np.stack(vois), np.stack(nodules), np.stack(conds),
                                 mcfg, loss_log=log)
    save_checkpoint(out / "generator.glt", result.generator.params)
    return [out / "generator.glt"]


def cmd_synth(args) -> int:
    run = _resolve(args.run)
    cfg = load_config(run / "config.cfg")
    family = cfg.get("model", "family")
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    if family not in ("pggan", "cpggan"):
        raise UserError(f"synth currently reads progressive runs, got family {family!r}")
    stages = sorted(run.glob("stage_*.glt"), key=lambda p: int(p.stem.split("_")[1]))
    if not stages:
        raise UserError(f"no stage checkpoints under {run}")
    ckpt = stages[-1]
    sidecar = json.loads(ckpt.with_suffix(".json").read_text())
    bp = prog.NetworkBlueprint(base=cfg.get("model", "base"), target=cfg.get("model", "target"),
                               scale_divisor=cfg.get("model", "scale_divisor"),
                               conditioned=family == "cpggan",
                               seed=cfg.get("experiment", "seed"))
    params = {name: Tensor(arr, requires_grad=True)
              for name, arr in load_checkpoint(ckpt).items()}
    schedule = prog.build_schedule(bp.base, bp.target, cfg.get("schedule", "steps_per_stage"))
    result = prog.ProgressiveResult(bp, schedule, params, sidecar["stage"],
                                    sidecar["alpha"], sidecar["step"])
    canvases = None
    records = []
    out_res = schedule.resolutions[sidecar["stage"]]
    if family == "cpggan":
        train_seed = cfg.get("experiment", "seed")
        scenes = _phantom_scenes(cfg, train_seed)
        masks = [build_bbox_mask(s.boxes, (s.extent, s.extent)) for s in scenes if s.boxes]
        rng = np.random.default_rng(seed)
        canv = []
        for i in range(args.count):
            mask = augment_mask(masks[rng.integers(0, len(masks))], rng)
            # annotations are written in the coordinates of the images
            # actually produced, i.e. the loaded stage's resolution
            canvas = build_bbox_mask(
                _rescale_boxes(mask.boxes, scenes[0].extent, out_res), (out_res, out_res))
            canv.append(canvas.canvas[None])
            for b in canvas.boxes:
                rec = b.to_record()
                rec["scan_id"] = f"synth{i:04d}"
                records.append(rec)
        canvases = np.stack(canv)
    images = prog.synthesize(result, args.count, seed=seed, canvases=canvases)
    files = []
    for i, img in enumerate(images):
        p = out / f"synth{i:04d}.pgm"
        write_pgm(p, img[0])
        files.append(p)
    if records:
        write_jsonl(out / "annotations.jsonl", records)
        files.append(out / "annotations.jsonl")
    _write_manifest(out, cfg, seed, files)
    print(f"synthesized {args.count} images to {out}")
    return 0


def _rescale_boxes(boxes, src_extent: int, dst_extent: int) -> list[BoxAnnotation]:
    """Scale box geometry between square canvases; results are always valid
    (origin inside, extent >= 1) even when rounding lands on the far edge."""
    if src_extent == dst_extent:
        return list(boxes)
    scale = dst_extent / src_extent
    out = []
    for b in boxes:
        origin = tuple(min(dst_extent - 1, max(0, int(round(o * scale)))) for o in b.origin)
        extent = tuple(max(1, min(int(round(e * scale)), dst_extent - o))
                       for o, e in zip(origin, b.extent))
        out.append(BoxAnnotation(origin, extent, b.size_class, b.attenuation_class, b.scan_id))
    return out


def cmd_augment(args) -> int:
    bundle = _resolve(args.bundle)
    images, boxes, ids = _load_bundle(bundle)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    spec = ph.ClassicAugmentSpec()
    records = []
    files = []
    for i in range(args.count):
        j = int(rng.integers(0, len(images)))
        img, moved = ph.classic_augment(images[j, 0], spec, rng, boxes[j])
        name = f"aug{i:04d}"
        p = out / f"{name}.pgm"
        write_pgm(p, img)
        files.append(p)
        for b in moved:
            rec = b.to_record()
            rec["scan_id"] = name
            records.append(rec)
    write_jsonl(out / "annotations.jsonl", records)
    _write_manifest(out, None, args.seed, files + [out / "annotations.jsonl"])
    print(f"wrote {args.count} augmented images to {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("experiment", "seed")
    out = _resolve(args.out or cfg.get("experiment", "out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(serialize_config(cfg))
    scenes = _phantom_scenes(cfg, seed)
    splits = ph.make_splits(scenes, tuple(cfg.get("dataset", "split")), seed)
    train_x, train_b = _scenes_to_arrays(splits["train"])
    val_x, val_b = _scenes_to_arrays(splits["validation"])
    test_x, test_b = _scenes_to_arrays(splits["test"])

    da_kind = cfg.get("augment", "kind")
    mix = DAMix(ratio=cfg.get("augment", "ratio"))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    if da_kind == "classic":
        spec = ph.ClassicAugmentSpec()
        aug_imgs, aug_boxes = [], []
        for i in range(len(train_x)):
            img, moved = ph.classic_augment(train_x[i, 0], spec, rng, train_b[i])
            aug_imgs.append(img[None])
            aug_boxes.append(moved)
        mix = DAMix(np.stack(aug_imgs).astype(np.float32), aug_boxes,
                    ratio=cfg.get("augment", "ratio"))
    elif da_kind == "gan":
        synth_dir = _resolve(cfg.get("augment", "synth_dir"))
        simgs, sboxes, _ = _load_bundle(synth_dir)
        have, want = simgs.shape[-1], train_x.shape[-1]
        if have != want:
            sboxes = [_rescale_boxes(b, have, want) for b in sboxes]
            if have < want:
                factor = want // have
                simgs = np.repeat(np.repeat(simgs, factor, axis=2), factor, axis=3)
            else:
                from .progressive import downsample_images
                simgs = downsample_images(simgs, want)
        mix = DAMix(simgs, sboxes, ratio=cfg.get("augment", "ratio"))
    elif da_kind != "none":
        raise UserError(f"augment.kind must be none|classic|gan, got {da_kind!r}")

    spec = YoloGridSpec(s=cfg.get("model", "grid"), b=cfg.get("model", "boxes_per_cell"))
    schedule = TrainSchedule(epochs=cfg.get("schedule", "epochs"),
                             batch_size=cfg.get("schedule", "batch_size"),
                             learning_rate=cfg.get("optimizer", "learning_rate"),
                             iou_threshold=cfg.get("evaluate", "iou"))
    with LossCurveLog(out / "losses.jsonl") as log:
        model = train_supervised(train_x, train_b, val_x, val_b, spec=spec,
                                 da_mix=mix, schedule=schedule, seed=seed, loss_log=log)
    save_checkpoint(out / "detector.glt", model.graph.params)

    extent = test_x.shape[-1]
    truths = [[(b.origin[0] / extent, b.origin[1] / extent,
                (b.origin[0] + b.extent[0]) / extent, (b.origin[1] + b.extent[1]) / extent)
               for b in bl] for bl in test_b]
    ids = [s.scan_id for s in splits["test"]]
    dset = model.predict_units(test_x, ids, cfg.get("evaluate", "detection_threshold"), truths)
    sens, fp = match_and_count(dset, cfg.get("evaluate", "iou"))
    # predictions on disk use pixel corner coordinates, matching annotations
    preds = [{"image_id": u.unit_id, "box": [round(v * extent, 3) for v in p.box],
              "score": p.score}
             for u in dset.units for p in u.predictions]
    write_jsonl(out / "predictions.jsonl", preds)
    metrics = {"iou_threshold": cfg.get("evaluate", "iou"),
               "test_sensitivity": sens, "test_fp_per_slice": fp,
               "val_log": model.metric_log, "best_val_sensitivity": model.best_sensitivity}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    _write_manifest(out, cfg, seed, [out / "config.cfg", out / "losses.jsonl",
                                     out / "detector.glt", out / "predictions.jsonl",
                                     out / "metrics.json"])
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_classify(args) -> int:
    from .classifier import ClassifierSchedule, classify, train_classifier
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("experiment", "seed")
    out = _resolve(args.out or cfg.get("experiment", "out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(serialize_config(cfg))
    count = cfg.get("dataset", "count")
    extent = cfg.get("dataset", "extent")
    scenes = [ph.generate_phantom(seed * 100_000 + i, dims=2, extent=extent,
                                  lesion_count=1 if i % 2 else 0, scan_id=f"s{i:04d}")
              for i in range(count)]
    labels = np.array([1 if i % 2 else 0 for i in range(count)])
    splits_idx = ph.make_splits(list(range(count)), tuple(cfg.get("dataset", "split")), seed)
    images = np.stack([ph.render(s)[None] for s in scenes]).astype(np.float32)
    tr, te = splits_idx["train"], splits_idx["test"]
    with LossCurveLog(out / "losses.jsonl") as log:
        model = train_classifier(images[tr], labels[tr],
                                 ClassifierSchedule(epochs=cfg.get("schedule", "epochs"),
                                                    batch_size=cfg.get("schedule", "batch_size"),
                                                    learning_rate=cfg.get("optimizer",
                                                                          "learning_rate")),
                                 seed=seed, loss_log=log)
    probs = classify(model, images[te])
    pred = probs > 0.5
    truth = labels[te] == 1
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    metrics = {
        "accuracy": float((tp + tn) / len(te)),
        "sensitivity": float(tp / max(1, truth.sum())),
        "specificity": float(tn / max(1, (~truth).sum())),
    }
    save_checkpoint(out / "classifier.glt", model.params)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    _write_manifest(out, cfg, seed, [out / "config.cfg", out / "metrics.json",
                                     out / "classifier.glt", out / "losses.jsonl"])
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    preds: dict[str, list[Detection]] = {}
    for rec in read_jsonl(_resolve(args.pred)):
        preds.setdefault(rec["image_id"], []).append(Detection(tuple(rec["box"]), rec["score"]))
    truths: dict[str, list[tuple]] = {}
    for rec in read_jsonl(_resolve(args.gt)):
        box = BoxAnnotation.from_record(rec)
        lo = box.origin
        hi = tuple(o + e for o, e in zip(box.origin, box.extent))
        truths.setdefault(rec["scan_id"], []).append(tuple(lo) + hi)
    ids = sorted(set(preds) | set(truths))
    dset = DetectionSet([UnitDetections(i, preds.get(i, []), truths.get(i, [])) for i in ids])
    sens, fp = match_and_count(dset, args.iou)
    metrics = {"iou_threshold": args.iou, "sensitivity": sens, "fp_per_unit": fp,
               "units": len(ids)}
    if args.froc:
        curve = froc(dset, args.iou)
        metrics["cpm"] = cpm(curve)
        if args.out:
            from .plots import save_froc_svg
            svg = Path(args.out).with_suffix(".svg")
            save_froc_svg(curve, svg)
            metrics["froc_svg"] = str(svg)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_tsne(args) -> int:
    from .embedding import EmbeddingConfig, tsne
    from .plots import save_embedding_svg
    images, boxes, ids = _load_bundle(_resolve(args.bundle))
    n = min(args.count, len(images)) if args.count else len(images)
    flat = images[:n].reshape(n, -1)
    cfg = EmbeddingConfig(perplexity=min(args.perplexity, n - 1), iterations=args.iterations)
    result = tsne(flat, cfg, seed=args.seed)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coords_file = out / "embedding.json"
    coords_file.write_text(json.dumps({
        "ids": ids[:n],
        "coordinates": result.coordinates.tolist(),
        "initial_kl": result.initial_kl,
        "final_kl": result.final_kl,
    }, indent=2))
    labels = ["lesion" if b else "clean" for b in boxes[:n]]
    svg = save_embedding_svg(result.coordinates, labels, out / "embedding.svg")
    _write_manifest(out, None, args.seed, [coords_file, svg])
    print(f"embedded {n} images; KL {result.initial_kl:.3f} -> {result.final_kl:.3f}")
    return 0


def cmd_vtt_serve(args) -> int:
    from .vtt import VttStore, make_handler
    from http.server import ThreadingHTTPServer
    listen = args.listen or os.environ.get(VTT_LISTEN_ENV, "127.0.0.1:8765")
    host, _, port = listen.partition(":")
    store = VttStore(_resolve(args.data_dir))
    server = ThreadingHTTPServer((host, int(port or 8765)), make_handler(store))
    print(f"rating service on http://{host}:{port or 8765} (data: {store.root})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_report(args) -> int:
    run = _resolve(args.run)
    manifest_file = run / "manifest.json"
    if not manifest_file.exists():
        raise UserError(f"no manifest.json under {run}")
    manifest = json.loads(manifest_file.read_text())
    report = {"run": str(run), "manifest": manifest}
    metrics_file = run / "metrics.json"
    if metrics_file.exists():
        report["metrics"] = json.loads(metrics_file.read_text())
    losses = run / "losses.jsonl"
    if losses.exists():
        records = list(read_jsonl(losses))
        by_name: dict[str, list[float]] = {}
        for r in records:
            by_name.setdefault(r["loss_name"], []).append(r["value"])
        report["losses"] = {name: {"steps": len(vals), "first": vals[0], "last": vals[-1]}
                            for name, vals in by_name.items()}
    (run / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganlab",
                                description="desk-scale pathology-aware GAN laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate a procedural scene bundle")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--dims", type=int, default=2, choices=(2, 3))
    sp.add_argument("--extent", type=int, default=64)
    sp.add_argument("--lesions", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_phantom)

    for name, fn in (("train", cmd_train), ("detect", cmd_detect), ("classify", cmd_classify)):
        sp = sub.add_parser(name, help=f"{name} from an experiment config")
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--deterministic", action="store_true", default=True)
        sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("synth", help="sample images from a trained run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("augment", help="classic augmentation of a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--count", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("evaluate", help="score predictions against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--iou", type=float, default=0.25)
    sp.add_argument("--froc", action="store_true")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("tsne", help="2-D embedding of a bundle")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--count", type=int, default=0)
    sp.add_argument("--perplexity", type=float, default=30.0)
    sp.add_argument("--iterations", type=int, default=300)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_tsne)

    sp = sub.add_parser("vtt-serve", help="run the rating session service")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--listen", default=None,
                    help=f"host:port (default from ${VTT_LISTEN_ENV})")
    sp.set_defaults(func=cmd_vtt_serve)

    sp = sub.add_parser("report", help="summarize a finished run")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UserError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
