"""Adversarial objectives as checkable functions.

Every loss accepts either plain arrays (returns are then exact floats where
possible) or traced tensors, so the same code path feeds both the closed-form
tests and live training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .graph import Graph
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass
class AdversarialBatch:
    """Real/synthetic pair plus the noise that produced the synthetic side.

    ``interpolates`` holds per-sample convex mixes of real and synthetic,
    required by the gradient-penalty objective.
    """

    real: Tensor
    synthetic: Tensor
    noise: Tensor | None = None
    interpolates: Tensor | None = None

    def __post_init__(self):
        if self.real.shape != self.synthetic.shape:
            raise T.ShapeError(
                f"real {self.real.shape} and synthetic {self.synthetic.shape} batches must match")
        if self.interpolates is not None and self.interpolates.shape != self.real.shape:
            raise T.ShapeError("interpolates must match the real/synthetic shape")


@dataclass
class GradPenaltyConfig:
    lambda_gp: float = 10.0
    critic_iters: int = 1

    def __post_init__(self):
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.critic_iters < 1:
            raise ValueError("critic_iters must be >= 1")


@dataclass
class MunitWeights:
    adversarial: float = 1.0
    image_recon: float = 10.0
    kl_recon: float = 0.01
    cycle: float = 10.0
    kl_cycle: float = 0.01
    perceptual: float = 1.0


@dataclass
class SimGanConfig:
    lambda_reg: float = 5e-5
    warmup_steps: int = 500
    refiner_updates_per_disc: int = 5

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")


@dataclass
class McganWeights:
    l1_weight: float = 100.0
    enable_l1: bool = False

    def __post_init__(self):
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")


@dataclass
class CompositeWeights:
    munit: MunitWeights = field(default_factory=MunitWeights)
    simgan: SimGanConfig = field(default_factory=SimGanConfig)
    mcgan: McganWeights = field(default_factory=McganWeights)


@dataclass
class LabelFlipSchedule:
    """Gate that fires exactly once every ``period`` calls."""

    period: int = 3
    counter: int = 0

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be a positive integer")


def label_flip_gate(schedule: LabelFlipSchedule) -> bool:
    flip = schedule.counter % schedule.period == 0
    schedule.counter += 1
    return flip


# ---------------------------------------------------------------------------
# classic and Wasserstein objectives

def _prob(t, diagnostics: dict | None):
    t = T.as_tensor(t)
    data = t.data
    out_of_range = np.count_nonzero((data <= 0.0) | (data >= 1.0))
    if out_of_range and diagnostics is not None:
        diagnostics["clamped"] = diagnostics.get("clamped", 0) + int(out_of_range)
    if out_of_range:
        t = T.clip(t, PROB_EPS, 1.0 - PROB_EPS)
    return t


def minimax_value(d_real, d_fake, diagnostics: dict | None = None) -> Tensor:
    """V(D, G) = E[log D(real)] + E[log(1 - D(fake))], probabilities clamped at 1e-7."""
    d_real = _prob(d_real, diagnostics)
    d_fake = _prob(d_fake, diagnostics)
    return T.add(T.mean(T.log(d_real)), T.mean(T.log(T.sub(1.0, d_fake))))


def wasserstein_critic_loss(d_real, d_fake) -> Tensor:
    """Critic side of the Earth Mover objective: E[D(fake)] - E[D(real)]."""
    return T.sub(T.mean(T.as_tensor(d_fake)), T.mean(T.as_tensor(d_real)))


def clip_weights(params: Mapping[str, Tensor] | Graph, c: float) -> None:
    """Clamp every parameter into [-c, c] in place."""
    if c <= 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    items = params.params.values() if isinstance(params, Graph) else params.values()
    for p in items:
        np.clip(p.data, -c, c, out=p.data)


def make_interpolates(real, synthetic, rng: np.random.Generator) -> Tensor:
    """Per-sample eps*real + (1-eps)*synthetic with eps ~ U[0,1]."""
    real, synthetic = T.as_tensor(real), T.as_tensor(synthetic)
    n = real.shape[0]
    eps = rng.random(n).reshape((n,) + (1,) * (real.ndim - 1)).astype(real.dtype)
    data = eps * real.data + (1.0 - eps) * synthetic.data
    return Tensor(data)


def _apply_critic(critic, x: Tensor, training: bool, rng) -> Tensor:
    if isinstance(critic, Graph):
        feed = critic.input_names[0]
        return critic.run({feed: x}, training=training, rng=rng)
    return critic(x)


def gradient_penalty(critic, interpolates: Tensor, training: bool = True,
                     rng: np.random.Generator | None = None) -> Tensor:
    """E[(||grad_x D(x)||_2 - 1)^2] at the interpolated samples.

    The gradient is taken with respect to the inputs and kept on the tape, so
    differentiating the result reaches the critic parameters.
    """
    x = Tensor(interpolates.data, requires_grad=True)
    d = _apply_critic(critic, x, training, rng)
    seed = Tensor(np.ones_like(d.data))
    (gx,) = T.grad_of(d, [x], grad_output=seed, create_graph=True)
    norms = T.batch_l2_norm(gx)
    return T.mean(T.square(T.sub(norms, 1.0)))


def wgan_gp_loss(batch: AdversarialBatch, critic, cfg: GradPenaltyConfig,
                 training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
    """E[D(synthetic)] - E[D(real)] + lambda_gp * gradient penalty."""
    if batch.interpolates is None:
        raise ValueError("AdversarialBatch.interpolates missing; build them before the penalty")
    d_real = _apply_critic(critic, batch.real, training, rng)
    d_fake = _apply_critic(critic, batch.synthetic, training, rng)
    base = wasserstein_critic_loss(d_real, d_fake)
    penalty = gradient_penalty(critic, batch.interpolates, training, rng)
    return T.add(base, T.mul(penalty, cfg.lambda_gp))


def lsgan_loss(d_real, d_fake, role: str = "discriminator") -> Tensor:
    """Least-squares objective; targets 1 for real, 0 for fake."""
    if role == "discriminator":
        if d_real is None:
            raise ValueError("discriminator role needs d_real")
        real_term = T.mean(T.square(T.sub(T.as_tensor(d_real), 1.0)))
        fake_term = T.mean(T.square(T.as_tensor(d_fake)))
        return T.add(T.mul(real_term, 0.5), T.mul(fake_term, 0.5))
    if role == "generator":
        return T.mul(T.mean(T.square(T.sub(T.as_tensor(d_fake), 1.0))), 0.5)
    raise ValueError(f"role must be 'discriminator' or 'generator', got {role!r}")


# ---------------------------------------------------------------------------
# refiner / composite objectives

def simgan_refiner_loss(refined, original, d_fake, lambda_reg: float = 5e-5,
                        diagnostics: dict | None = None) -> Tensor:
    """Adversarial realism plus lambda_reg * L1 self-regularization."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be >= 0")
    refined, original = T.as_tensor(refined), T.as_tensor(original)
    if refined.shape != original.shape:
        raise T.ShapeError(f"refined {refined.shape} and input {original.shape} must match")
    realism = T.neg(T.mean(T.log(_prob(d_fake, diagnostics))))
    reg = T.l1(T.sub(refined, original))
    return T.add(realism, T.mul(reg, lambda_reg))


class SimGanUpdateSchedule:
    """Refiner-only warmup, then a fixed refiner:discriminator update cycle."""

    def __init__(self, cfg: SimGanConfig | None = None):
        self.cfg = cfg or SimGanConfig()
        self.step = 0

    def next_action(self) -> str:
        cfg = self.cfg
        if self.step < cfg.warmup_steps:
            action = "refiner-warmup"
        else:
            phase = (self.step - cfg.warmup_steps) % (cfg.refiner_updates_per_disc + 1)
            action = "refiner" if phase < cfg.refiner_updates_per_disc else "discriminator"
        self.step += 1
        return action


MUNIT_COMPONENTS = ("adversarial", "image_recon", "kl_recon", "cycle", "kl_cycle", "perceptual")


def munit_total_loss(terms: Mapping[str, float | Tensor], weights: MunitWeights | None = None):
    """Weighted sum of the six translation-loss components.

    Float inputs are combined with an exactly rounded sum so the weighted
    total of unit components is bit-stable.
    """
    weights = weights or MunitWeights()
    missing = [c for c in MUNIT_COMPONENTS if c not in terms]
    if missing:
        raise KeyError(f"missing loss component(s): {', '.join(missing)}")
    wvec = [getattr(weights, c) for c in MUNIT_COMPONENTS]
    if all(not isinstance(terms[c], Tensor) for c in MUNIT_COMPONENTS):
        return math.fsum(w * float(terms[c]) for w, c in zip(wvec, MUNIT_COMPONENTS))
    total = None
    for w, c in zip(wvec, MUNIT_COMPONENTS):
        piece = T.mul(T.as_tensor(terms[c]), w)
        total = piece if total is None else T.add(total, piece)
    return total


def mcgan_objective(context_term, nodule_term, l1_term=0.0,
                    weights: McganWeights | None = None):
    """Context (least-squares) branch plus nodule (Wasserstein-GP) branch,
    optionally plus the weighted voxel L1 term."""
    weights = weights or McganWeights()
    parts = [context_term, nodule_term]
    if weights.enable_l1:
        if isinstance(l1_term, Tensor) or any(isinstance(p, Tensor) for p in parts):
            total = T.add(T.as_tensor(context_term), T.as_tensor(nodule_term))
            return T.add(total, T.mul(T.as_tensor(l1_term), weights.l1_weight))
        return math.fsum([float(context_term), float(nodule_term),
                          weights.l1_weight * float(l1_term)])
    if any(isinstance(p, Tensor) for p in parts):
        return T.add(T.as_tensor(context_term), T.as_tensor(nodule_term))
    return math.fsum(float(p) for p in parts)


# ---------------------------------------------------------------------------
# frozen perceptual features (stand-in for a pretrained perceptual net)

def build_perceptual_extractor(seed: int = 0, in_channels: int = 1, width: int = 8) -> Graph:
    """Small fixed random conv stack used as a perceptual feature space."""
    rng = np.random.default_rng(seed)
    g = Graph()
    g.add_input("x")
    chans = [in_channels, width, width * 2]
    src = "x"
    for i in range(2):
        w = T.he_normal(rng, (chans[i + 1], chans[i], 3, 3), chans[i] * 9)
        g.add_const(f"w{i}", w)
        g.add(f"c{i}", "conv2d", [src, f"w{i}"], stride=1, pad=1)
        g.add(f"a{i}", "leaky-relu", [f"c{i}"], slope=0.2)
        g.add(f"p{i}", "average-downsample", [f"a{i}"])
        src = f"p{i}"
    return g


def perceptual_distance(extractor: Graph, a, b) -> Tensor:
    fa = extractor.run({"x": T.as_tensor(a)})
    fb = extractor.run({"x": T.as_tensor(b)})
    return T.mean(T.square(T.sub(fa, fb)))
