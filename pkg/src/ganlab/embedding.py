"""Exact (quadratic) t-SNE with per-point bandwidth calibration.

The conditional distribution of every point is tuned by binary search until
its Shannon entropy matches log2(perplexity); the embedding then follows the
standard gradient descent with early exaggeration, momentum, and gains.
Adequate up to a couple of thousand points, which covers the plots here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingConfig:
    perplexity: float = 100.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    entropy_tolerance: float = 1e-4


def normalize_unit_range(points: np.ndarray) -> np.ndarray:
    """Map raw inputs onto [0, 1] (a flat input maps to all zeros)."""
    points = np.asarray(points, dtype=np.float64)
    lo, hi = points.min(), points.max()
    if hi == lo:
        return np.zeros_like(points)
    return (points - lo) / (hi - lo)


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_distribution(dist_row: np.ndarray, beta: float, i: int) -> np.ndarray:
    e = np.exp(-dist_row * beta)
    e[i] = 0.0
    total = e.sum()
    if total <= 0.0:
        # all mass collapsed (duplicates at huge beta); fall back to uniform
        e = np.ones_like(e)
        e[i] = 0.0
        total = e.sum()
    return e / total


def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def calibrated_conditionals(points: np.ndarray, perplexity: float,
                            tolerance: float = 1e-4, max_iter: int = 128,
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row conditional distributions with entropy log2(perplexity).

    Returns (P_conditional, betas); beta is 1/(2 sigma^2) per row.
    """
    n = points.shape[0]
    if perplexity >= n:
        raise EmbeddingError(f"perplexity {perplexity} must be below the sample count {n}")
    target = np.log2(perplexity)
    dists = _pairwise_sq_dists(points)
    p = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        beta, lo, hi = 1.0, 0.0, np.inf
        row = dists[i]
        for _ in range(max_iter):
            pi = _row_distribution(row, beta, i)
            h = _entropy_bits(pi)
            if abs(h - target) <= tolerance:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
        p[i] = _row_distribution(row, beta, i)
        betas[i] = beta
    return p, betas


def _joint_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, 1e-12), num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass
class EmbeddingResult:
    coordinates: np.ndarray
    initial_kl: float
    final_kl: float
    row_entropy_bits: np.ndarray
    joint_p: np.ndarray


def tsne(points: np.ndarray, cfg: EmbeddingConfig | None = None, seed: int = 0) -> EmbeddingResult:
    """Embed points (pre-normalized to [0, 1]) into 2-D."""
    cfg = cfg or EmbeddingConfig()
    x = normalize_unit_range(points).reshape(len(points), -1)
    n = x.shape[0]
    p_cond, _ = calibrated_conditionals(x, cfg.perplexity, cfg.entropy_tolerance)
    row_entropy = np.array([_entropy_bits(p_cond[i]) for i in range(n)])
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    q, _ = _joint_q(y)
    initial_kl = kl_divergence(p, q)

    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    # short runs still need a plain-descent phase after exaggeration ends
    exaggeration_iters = min(cfg.exaggeration_iters, cfg.iterations // 4)
    momentum_switch = min(cfg.momentum_switch, cfg.iterations // 2)
    for it in range(cfg.iterations):
        exaggeration = cfg.early_exaggeration if it < exaggeration_iters else 1.0
        q, num = _joint_q(y)
        pq = exaggeration * p - q
        grad = np.zeros_like(y)
        for d in range(2):
            diff = y[:, d, None] - y[None, :, d]
            grad[:, d] = 4.0 * np.sum(pq * num * diff, axis=1)
        momentum = cfg.initial_momentum if it < momentum_switch else cfg.final_momentum
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - cfg.learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    q, _ = _joint_q(y)
    final_kl = kl_divergence(p, q)
    return EmbeddingResult(coordinates=y, initial_kl=initial_kl, final_kl=final_kl,
                           row_entropy_bits=row_entropy, joint_p=p)
