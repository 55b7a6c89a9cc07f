"""Tiny residual binary classifier with the fixed evaluation head:
global average pool, flatten, 0.5 dropout, dense(2), batch norm, sigmoid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import Graph
from .optim import OptimizerState, SGD, optimizer_step
from .tensor import Tensor

HEAD_LAYER_ORDER = ("average-pool", "flatten", "dropout", "dense", "batch-norm", "sigmoid")


def build_classifier(in_res: int = 64, seed: int = 0, in_channels: int = 1,
                     width: int = 8, blocks: int = 4) -> Graph:
    """Four residual conv blocks, halving resolution between blocks."""
    rng = np.random.default_rng(seed)
    g = Graph()
    g.add_input("image")
    src = "image"
    c_in = in_channels
    c = width
    for i in range(blocks):
        g.add_param(f"cls/b{i}/w0", T.he_normal(rng, (c, c_in, 3, 3), c_in * 9))
        g.add_param(f"cls/b{i}/g0", np.ones(c, dtype=np.float32))
        g.add_param(f"cls/b{i}/be0", np.zeros(c, dtype=np.float32))
        g.add(f"cls/b{i}/c0", "conv2d", [src, f"cls/b{i}/w0"], stride=1, pad=1)
        g.add(f"cls/b{i}/n0", "batch-norm", [f"cls/b{i}/c0", f"cls/b{i}/g0", f"cls/b{i}/be0"])
        g.add(f"cls/b{i}/a0", "relu", [f"cls/b{i}/n0"])
        g.add_param(f"cls/b{i}/w1", T.he_normal(rng, (c, c, 3, 3), c * 9))
        g.add_param(f"cls/b{i}/g1", np.ones(c, dtype=np.float32))
        g.add_param(f"cls/b{i}/be1", np.zeros(c, dtype=np.float32))
        g.add(f"cls/b{i}/c1", "conv2d", [f"cls/b{i}/a0", f"cls/b{i}/w1"], stride=1, pad=1)
        g.add(f"cls/b{i}/n1", "batch-norm", [f"cls/b{i}/c1", f"cls/b{i}/g1", f"cls/b{i}/be1"])
        if c_in == c:
            g.add(f"cls/b{i}/skip", "add", [f"cls/b{i}/n1", src])
            body = f"cls/b{i}/skip"
        else:  # channel change: project the shortcut with a 1x1 conv
            g.add_param(f"cls/b{i}/proj", T.he_normal(rng, (c, c_in, 1, 1), c_in))
            g.add(f"cls/b{i}/sc", "conv2d", [src, f"cls/b{i}/proj"], stride=1, pad=0)
            g.add(f"cls/b{i}/skip", "add", [f"cls/b{i}/n1", f"cls/b{i}/sc"])
            body = f"cls/b{i}/skip"
        g.add(f"cls/b{i}/out", "relu", [body])
        src = f"cls/b{i}/out"
        if i < blocks - 1:
            g.add(f"cls/b{i}/down", "average-downsample", [src])
            src = f"cls/b{i}/down"
            c_in, c = c, min(c * 2, 32)
        else:
            c_in = c
    # head: GAP -> flatten -> dropout 0.5 -> dense(2) -> batch norm -> sigmoid
    g.add("cls/gap", "mean", [src], axis=[2, 3])
    g.add("cls/drop", "dropout", ["cls/gap"], rate=0.5)
    g.add_param("cls/head_w", T.he_normal(rng, (c_in, 2), c_in))
    g.add_param("cls/head_b", np.zeros(2, dtype=np.float32))
    g.add("cls/dense", "dense", ["cls/drop", "cls/head_w", "cls/head_b"])
    g.add_param("cls/head_g", np.ones(2, dtype=np.float32))
    g.add_param("cls/head_be", np.zeros(2, dtype=np.float32))
    g.add("cls/head_bn", "batch-norm", ["cls/dense", "cls/head_g", "cls/head_be"])
    g.add("cls/out", "sigmoid", ["cls/head_bn"])
    return g


def bce_loss(pred: Tensor, targets: np.ndarray, eps: float = 1e-7) -> Tensor:
    p = T.clip(pred, eps, 1.0 - eps)
    t = Tensor(np.asarray(targets, dtype=np.float32))
    pos = T.mul(t, T.log(p))
    neg = T.mul(T.sub(1.0, t), T.log(T.sub(1.0, p)))
    return T.neg(T.mean(T.add(pos, neg)))


@dataclass
class ClassifierSchedule:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-2
    momentum: float = 0.9


def train_classifier(images: np.ndarray, labels: np.ndarray,
                     schedule: ClassifierSchedule | None = None,
                     seed: int = 0, loss_log=None) -> Graph:
    """Binary cross-entropy training; labels are (N,) in {0, 1} mapped onto
    two one-hot outputs (tumor, non-tumor)."""
    schedule = schedule or ClassifierSchedule()
    g = build_classifier(in_res=images.shape[-1], seed=seed, in_channels=images.shape[1])
    opt = OptimizerState(SGD(momentum=schedule.momentum), schedule.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    onehot = np.stack([labels == 1, labels == 0], axis=1).astype(np.float32)
    step = 0
    for _epoch in range(schedule.epochs):
        order = rng.permutation(len(images))
        for i in range(0, len(images), schedule.batch_size):
            idx = order[i:i + schedule.batch_size]
            pred = g.run({"image": images[idx].astype(np.float32)}, outputs="cls/out",
                         training=True, rng=rng)
            loss = bce_loss(pred, onehot[idx])
            if not np.isfinite(loss.data):
                raise T.NonFiniteError(f"classifier loss diverged at step {step}")
            grads = T.grad_of(loss, list(g.params.values()))
            optimizer_step(opt, g.params, {n: gr.data for n, gr in zip(g.params, grads)})
            if loss_log is not None:
                loss_log(step, "classifier", float(loss.data))
            step += 1
    return g


def classify(g: Graph, images: np.ndarray) -> np.ndarray:
    """Predicted probability of class 'tumor' per image."""
    with T.no_grad():
        out = g.run({"image": images.astype(np.float32)}, outputs="cls/out", training=False)
    return out.data[:, 0]
