"""k-means with k-means++ seeding, plus the cluster-then-discard workflow
used to weed out defective synthetic images by group."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Graph
from . import tensor as T


class ClusterError(ValueError):
    pass


# group counts for the discard workflow: full-scale runs use 200 groups,
# desk-scale corpora are far smaller
FULL_SCALE_GROUPS = 200
DESK_SCALE_GROUPS = 16


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed centers by the D^2 weighting rule."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=points.dtype)
    first = rng.integers(0, n)
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = points[rng.integers(0, n)]
        else:
            probs = d2 / total
            centers[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k > n:
        raise ClusterError(f"k={k} exceeds the {n} available points")
    if k < 1:
        raise ClusterError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(points, k, rng)
    history: list[float] = []
    assignments = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centers[None]) ** 2, axis=2)
        assignments = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), assignments].sum())
        history.append(inertia)
        new_centers = centers.copy()
        for c in range(k):
            members = points[assignments == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
        if np.allclose(new_centers, centers):
            break
        centers = new_centers
    d2 = np.sum((points[:, None, :] - centers[None]) ** 2, axis=2)
    assignments = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    history.append(inertia)
    return KMeansResult(centers, assignments, inertia, history)


def build_feature_encoder(seed: int = 0, in_channels: int = 1, width: int = 8) -> Graph:
    """Small frozen conv encoder that maps images to flat feature vectors."""
    rng = np.random.default_rng(seed)
    g = Graph()
    g.add_input("x")
    chans = [in_channels, width, width * 2]
    src = "x"
    for i in range(2):
        w = T.he_normal(rng, (chans[i + 1], chans[i], 3, 3), chans[i] * 9)
        g.add_const(f"w{i}", w)
        g.add(f"c{i}", "conv2d", [src, f"w{i}"], stride=1, pad=1)
        g.add(f"a{i}", "relu", [f"c{i}"])
        g.add(f"p{i}", "average-downsample", [f"a{i}"])
        src = f"p{i}"
    g.add("feat", "mean", [src], axis=[2, 3])
    return g


def encode_images(encoder: Graph, images: np.ndarray, batch: int = 64) -> np.ndarray:
    """Run the encoder over (N, C, H, W) images; returns (N, F) features."""
    feats = []
    with T.no_grad():
        for i in range(0, len(images), batch):
            out = encoder.run({"x": images[i:i + batch].astype(np.float32)}, outputs="feat")
            feats.append(out.data)
    return np.concatenate(feats, axis=0)


@dataclass
class ClusterPartition:
    assignments: np.ndarray
    k: int

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def cluster_discard(images: np.ndarray, encoder: Graph | None, k: int = DESK_SCALE_GROUPS,
                    seed: int = 0,
                    discard_rule: Callable[[int, np.ndarray], bool] | None = None,
                    ) -> tuple[ClusterPartition, set[int]]:
    """Group images by encoder features; the caller decides which clusters go.

    ``discard_rule(cluster_index, member_indices) -> bool`` marks whole
    clusters for discard; without a rule the discard set is empty and the
    partition is returned for manual review.
    """
    if k > len(images):
        raise ClusterError(f"k={k} exceeds the {len(images)} images")
    if encoder is None:
        feats = images.reshape(len(images), -1)
    else:
        feats = encode_images(encoder, images)
    result = kmeans(feats, k, seed=seed)
    partition = ClusterPartition(result.assignments, k)
    discard: set[int] = set()
    if discard_rule is not None:
        for c in range(k):
            members = partition.members(c)
            if len(members) and discard_rule(c, members):
                discard.update(int(i) for i in members)
    return partition, discard
