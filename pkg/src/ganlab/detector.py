"""Single-scale grid detector: target encoding/decoding, the five-term
sum-squared detection loss, anchor recalculation by IoU k-means, and the
supervised training loop with real/synthetic data mixing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .clustering import kmeans_pp_init
from .conditioning import BoxAnnotation
from .graph import Graph
from .metrics import Detection, DetectionSet, UnitDetections, iou, match_and_count
from .optim import Adam, OptimizerState, optimizer_step
from .tensor import Tensor


class DetectorError(ValueError):
    pass


@dataclass
class YoloGridSpec:
    s: int = 8          # grid side
    b: int = 2          # boxes per cell
    classes: int = 1

    @property
    def channels(self) -> int:
        return self.b * 5 + self.classes


@dataclass
class AnchorSet:
    anchors: np.ndarray  # (K, 2) normalized (h, w)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if self.anchors.ndim != 2 or self.anchors.shape[1] != 2 or len(self.anchors) < 1:
            raise DetectorError(f"anchors must be (K, 2) with K >= 1, got {self.anchors.shape}")
        if np.any(self.anchors <= 0):
            raise DetectorError("anchors must be positive")


def boxes_to_normalized(boxes: Sequence[BoxAnnotation], extent: int) -> list[tuple[float, ...]]:
    """(cy, cx, h, w) in [0, 1] units for each 2-d box annotation."""
    out = []
    for b in boxes:
        cy = (b.origin[0] + b.extent[0] / 2.0) / extent
        cx = (b.origin[1] + b.extent[1] / 2.0) / extent
        out.append((cy, cx, b.extent[0] / extent, b.extent[1] / extent))
    return out


def encode_boxes(norm_boxes: Sequence[tuple[float, ...]], spec: YoloGridSpec,
                 anchors: AnchorSet | None = None) -> np.ndarray:
    """Target grid (channels, S, S): per box slot (y, x, h, w, conf), then
    class scores. Exactly one responsible slot per ground-truth object."""
    grid = np.zeros((spec.channels, spec.s, spec.s), dtype=np.float32)
    for (cy, cx, h, w) in norm_boxes:
        if h <= 0 or w <= 0:
            raise DetectorError(f"non-positive box size ({h}, {w})")
        gy = min(spec.s - 1, int(cy * spec.s))
        gx = min(spec.s - 1, int(cx * spec.s))
        if anchors is not None and len(anchors.anchors) == spec.b:
            order = np.argsort([-_iou_wh((h, w), a) for a in anchors.anchors])
        else:
            order = range(spec.b)
        slot = next((j for j in order if grid[j * 5 + 4, gy, gx] == 0), None)
        if slot is None:
            continue  # cell saturated; the extra object goes unsupervised
        base = slot * 5
        grid[base + 0, gy, gx] = cy * spec.s - gy
        grid[base + 1, gy, gx] = cx * spec.s - gx
        grid[base + 2, gy, gx] = h
        grid[base + 3, gy, gx] = w
        grid[base + 4, gy, gx] = 1.0
        grid[spec.b * 5, gy, gx] = 1.0  # single lesion class
    return grid


def _iou_wh(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = min(a[0], b[0]) * min(a[1], b[1])
    return inter / (a[0] * a[1] + b[0] * b[1] - inter)


def yolo_loss(pred, truth, spec: YoloGridSpec, lambda_coord: float = 5.0,
              lambda_noobj: float = 0.5):
    """Five-term sum-squared detection loss, averaged over the batch.

    Terms: (y, x) offsets, (sqrt h, sqrt w) extents, responsible-box
    confidence, non-object confidence (down-weighted), class scores.
    """
    pred = T.as_tensor(pred)
    truth_arr = truth.data if isinstance(truth, Tensor) else np.asarray(truth)
    if pred.ndim == 3:
        pred = T.reshape(pred, (1,) + pred.shape)
        truth_arr = truth_arr[None]
    if pred.shape != truth_arr.shape:
        raise DetectorError(f"pred {pred.shape} and truth {truth_arr.shape} grids differ")
    n = pred.shape[0]
    obj = np.zeros_like(truth_arr)
    noobj_conf = np.zeros_like(truth_arr)
    coord = np.zeros_like(truth_arr)
    cls_mask = np.zeros_like(truth_arr)
    cell_has_obj = np.zeros((n, 1, spec.s, spec.s), dtype=truth_arr.dtype)
    for j in range(spec.b):
        base = j * 5
        conf = truth_arr[:, base + 4:base + 5]
        if np.any((truth_arr[:, base + 2:base + 4] < 0) & (conf > 0)):
            raise DetectorError("negative box size in truth grid")
        coord[:, base:base + 4] = conf
        obj[:, base + 4:base + 5] = conf
        noobj_conf[:, base + 4:base + 5] = 1.0 - conf
        cell_has_obj = np.maximum(cell_has_obj, conf)
    cls_mask[:, spec.b * 5:] = cell_has_obj

    truth_t = Tensor(truth_arr)
    diff = T.sub(pred, truth_t)
    sq = T.square(diff)

    xy_mask = coord.copy()
    for j in range(spec.b):
        xy_mask[:, j * 5 + 2:j * 5 + 4] = 0.0
    wh_mask = coord - xy_mask

    loss_xy = T.sum_(T.mul(sq, Tensor(xy_mask)))
    # epsilon keeps sqrt differentiable at zero; both sides run the identical
    # op sequence so a perfect prediction scores exactly zero
    sqrt_pred = T.sqrt(T.add(T.relu(pred), 1e-12))
    sqrt_truth = T.sqrt(T.add(T.relu(truth_t), 1e-12)).detach()
    wh_sq = T.square(T.sub(sqrt_pred, sqrt_truth))
    loss_wh = T.sum_(T.mul(wh_sq, Tensor(wh_mask)))
    loss_obj = T.sum_(T.mul(sq, Tensor(obj)))
    loss_noobj = T.sum_(T.mul(sq, Tensor(noobj_conf)))
    loss_cls = T.sum_(T.mul(sq, Tensor(cls_mask)))
    total = T.add(T.mul(T.add(loss_xy, loss_wh), lambda_coord),
                  T.add(loss_obj, T.add(T.mul(loss_noobj, lambda_noobj), loss_cls)))
    return T.mul(total, 1.0 / n)


def compute_anchors(boxes: Sequence[tuple[float, float]], k: int, seed: int = 0,
                    max_iter: int = 50) -> AnchorSet:
    """k-means over (h, w) pairs with 1 - IoU distance and k-means++ seeding.

    The mean-IoU-distance objective is kept non-increasing: an update that
    would worsen it stops the iteration at the previous centers.
    """
    if not boxes:
        raise DetectorError("empty box list")
    pts = np.asarray(boxes, dtype=np.float64)
    distinct = np.unique(pts, axis=0)
    if k > len(distinct):
        raise DetectorError(f"k={k} exceeds the {len(distinct)} distinct box shapes")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(distinct, k, rng)

    def dists(cs):
        return np.array([[1.0 - _iou_wh(tuple(p), tuple(c)) for c in cs] for p in pts])

    d = dists(centers)
    objective = float(d.min(axis=1).mean())
    for _ in range(max_iter):
        assign = d.argmin(axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
        nd = dists(new_centers)
        new_objective = float(nd.min(axis=1).mean())
        if new_objective > objective or np.allclose(new_centers, centers):
            break
        centers, d, objective = new_centers, nd, new_objective
    return AnchorSet(centers)


def anchor_objective(boxes: Sequence[tuple[float, float]], anchors: AnchorSet) -> float:
    pts = np.asarray(boxes, dtype=np.float64)
    d = np.array([[1.0 - _iou_wh(tuple(p), tuple(c)) for c in anchors.anchors] for p in pts])
    return float(d.min(axis=1).mean())


@dataclass
class ScoredBox:
    box: tuple[float, float, float, float]  # (lo_y, lo_x, hi_y, hi_x), normalized
    score: float


def decode_predictions(grid: np.ndarray, spec: YoloGridSpec,
                       anchors: AnchorSet | None = None,
                       detection_threshold: float = 0.001,
                       nms_iou: float = 0.45) -> list[ScoredBox]:
    """Boxes scoring strictly above the threshold, then greedy NMS."""
    grid = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    candidates: list[ScoredBox] = []
    for gy in range(spec.s):
        for gx in range(spec.s):
            for j in range(spec.b):
                base = j * 5
                conf = float(grid[base + 4, gy, gx])
                if conf <= detection_threshold:
                    continue
                cy = (gy + float(grid[base + 0, gy, gx])) / spec.s
                cx = (gx + float(grid[base + 1, gy, gx])) / spec.s
                h = max(float(grid[base + 2, gy, gx]), 1e-6)
                w = max(float(grid[base + 3, gy, gx]), 1e-6)
                candidates.append(ScoredBox(
                    (cy - h / 2, cx - w / 2, cy + h / 2, cx + w / 2), conf))
    candidates.sort(key=lambda sb: -sb.score)
    kept: list[ScoredBox] = []
    for cand in candidates:
        if all(iou(cand.box, k.box) <= nms_iou for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# the tiny detector network and its training loop

def build_detector(spec: YoloGridSpec, in_res: int, seed: int = 0,
                   in_channels: int = 1, width: int = 8) -> Graph:
    if in_res % spec.s:
        raise DetectorError(f"input resolution {in_res} not divisible by grid {spec.s}")
    n_down = int(np.log2(in_res // spec.s))
    if 2 ** n_down * spec.s != in_res:
        raise DetectorError(f"resolution {in_res} must be grid * 2^k")
    rng = np.random.default_rng(seed)
    g = Graph()
    g.add_input("image")
    src = "image"
    c_in = in_channels
    for i in range(n_down):
        c_out = min(width * 2 ** i, 32)
        g.add_param(f"det/w{i}", T.he_normal(rng, (c_out, c_in, 3, 3), c_in * 9))
        g.add_param(f"det/b{i}", np.zeros(c_out, dtype=np.float32))
        g.add(f"det/c{i}", "conv2d", [src, f"det/w{i}", f"det/b{i}"], stride=1, pad=1)
        g.add(f"det/a{i}", "leaky-relu", [f"det/c{i}"], slope=0.1)
        g.add(f"det/p{i}", "average-downsample", [f"det/a{i}"])
        src = f"det/p{i}"
        c_in = c_out
    g.add_param("det/mid_w", T.he_normal(rng, (c_in, c_in, 3, 3), c_in * 9))
    g.add_param("det/mid_b", np.zeros(c_in, dtype=np.float32))
    g.add("det/mid", "conv2d", [src, "det/mid_w", "det/mid_b"], stride=1, pad=1)
    g.add("det/mid_a", "leaky-relu", ["det/mid"], slope=0.1)
    g.add_param("det/head_w", T.he_normal(rng, (spec.channels, c_in, 1, 1), c_in))
    g.add_param("det/head_b", np.zeros(spec.channels, dtype=np.float32))
    g.add("det/head", "conv2d", ["det/mid_a", "det/head_w", "det/head_b"], stride=1, pad=0)
    g.add("det/out", "sigmoid", ["det/head"])
    return g


@dataclass
class DAMix:
    """Synthetic training pool plus the synthetic:real mixing ratio."""

    images: np.ndarray | None = None      # (M, C, R, R)
    boxes: list[list[BoxAnnotation]] | None = None
    ratio: float = 1.0

    def count_for(self, real_count: int) -> int:
        if self.images is None:
            return 0
        return min(len(self.images), int(round(self.ratio * real_count)))


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    eval_every: int = 1
    iou_threshold: float = 0.25


@dataclass
class TrainedDetector:
    graph: Graph
    spec: YoloGridSpec
    in_res: int
    best_sensitivity: float
    metric_log: list[dict]

    def predict_units(self, images: np.ndarray, ids: list[str],
                      detection_threshold: float = 0.001,
                      truths: list[list[tuple[float, ...]]] | None = None) -> DetectionSet:
        units = []
        with T.no_grad():
            out = self.graph.run({"image": images.astype(np.float32)}, outputs="det/out").data
        for i, uid in enumerate(ids):
            dets = [Detection(sb.box, sb.score)
                    for sb in decode_predictions(out[i], self.spec,
                                                 detection_threshold=detection_threshold)]
            units.append(UnitDetections(uid, dets, truths[i] if truths else []))
        return DetectionSet(units)


def _truth_corner_boxes(boxes: Sequence[BoxAnnotation], extent: int) -> list[tuple[float, ...]]:
    out = []
    for b in boxes:
        out.append((b.origin[0] / extent, b.origin[1] / extent,
                    (b.origin[0] + b.extent[0]) / extent, (b.origin[1] + b.extent[1]) / extent))
    return out


def train_supervised(images: np.ndarray, boxes: list[list[BoxAnnotation]],
                     val_images: np.ndarray, val_boxes: list[list[BoxAnnotation]],
                     spec: YoloGridSpec | None = None,
                     da_mix: DAMix | None = None,
                     schedule: TrainSchedule | None = None,
                     seed: int = 0,
                     loss_log=None) -> TrainedDetector:
    """Train the grid detector on real plus (optionally) synthetic images.

    Deterministic under the seed; picks the parameters with the best
    validation sensitivity seen at any evaluation point.
    """
    spec = spec or YoloGridSpec()
    schedule = schedule or TrainSchedule()
    da_mix = da_mix or DAMix()
    in_res = images.shape[-1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    g = build_detector(spec, in_res, seed=seed, in_channels=images.shape[1])
    opt = OptimizerState(Adam(0.9, 0.999), schedule.learning_rate)

    targets = np.stack([encode_boxes(boxes_to_normalized(b, in_res), spec) for b in boxes])
    if da_mix.images is not None:
        syn_targets = np.stack([encode_boxes(boxes_to_normalized(b, in_res), spec)
                                for b in da_mix.boxes])
    val_truths = [_truth_corner_boxes(b, in_res) for b in val_boxes]

    best_params = {n: p.data.copy() for n, p in g.params.items()}
    best_sens = -1.0
    log: list[dict] = []
    step = 0
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(images))
        pool_imgs = [images[order]]
        pool_tgts = [targets[order]]
        n_syn = da_mix.count_for(len(images))
        if n_syn:
            pick = rng.choice(len(da_mix.images), size=n_syn, replace=False)
            pool_imgs.append(da_mix.images[pick])
            pool_tgts.append(syn_targets[pick])
        epoch_imgs = np.concatenate(pool_imgs)
        epoch_tgts = np.concatenate(pool_tgts)
        shuffle = rng.permutation(len(epoch_imgs))
        epoch_imgs, epoch_tgts = epoch_imgs[shuffle], epoch_tgts[shuffle]

        for i in range(0, len(epoch_imgs), schedule.batch_size):
            xb = epoch_imgs[i:i + schedule.batch_size].astype(np.float32)
            tb = epoch_tgts[i:i + schedule.batch_size]
            pred = g.run({"image": xb}, outputs="det/out", training=True)
            loss = yolo_loss(pred, tb, spec)
            if not np.isfinite(loss.data):
                raise T.NonFiniteError(
                    f"detector loss diverged at epoch {epoch}, step {step}")
            grads = T.grad_of(loss, list(g.params.values()))
            optimizer_step(opt, g.params, {n: gr.data for n, gr in zip(g.params, grads)})
            if loss_log is not None:
                loss_log(step, "detector", float(loss.data))
            step += 1

        if (epoch + 1) % schedule.eval_every == 0:
            trained = TrainedDetector(g, spec, in_res, 0.0, [])
            dset = trained.predict_units(val_images, [f"val{i}" for i in range(len(val_images))],
                                         truths=val_truths)
            sens, fp = match_and_count(dset, schedule.iou_threshold)
            log.append({"epoch": epoch, "val_sensitivity": sens, "val_fp_per_slice": fp})
            if sens > best_sens:
                best_sens = sens
                best_params = {n: p.data.copy() for n, p in g.params.items()}

    if best_sens >= 0:
        for n, p in g.params.items():
            p.data = best_params[n]
    return TrainedDetector(g, spec, in_res, max(best_sens, 0.0), log)
