"""Desk-scale trainers for the non-progressive GAN families.

Each trainer is a compact configuration of the shared pieces: graphs from
the op vocabulary, the objectives from `losses`, and the optimizers. They
exist so every training family named in experiment configs actually runs;
the progressive families live in `progressive`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import Graph
from .losses import (AdversarialBatch, GradPenaltyConfig, LabelFlipSchedule,
                     McganWeights, MunitWeights, SimGanConfig, SimGanUpdateSchedule,
                     build_perceptual_extractor, clip_weights, label_flip_gate,
                     lsgan_loss, make_interpolates, mcgan_objective, minimax_value,
                     munit_total_loss, perceptual_distance, simgan_refiner_loss,
                     wasserstein_critic_loss, wgan_gp_loss)
from .optim import Adam, OptimizerState, RMSprop, SGD, optimizer_step
from .tensor import Tensor


def _rng_chain(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


# ---------------------------------------------------------------------------
# shared simple nets

def simple_generator(res: int, latent: int, width: int, seed: int,
                     out_channels: int = 1) -> Graph:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
    g = Graph()
    g.add_input("latent")
    stages = int(np.log2(res // 4))
    c = width * 2 ** stages
    g.add_param("g/stem_w", T.he_normal(rng, (latent, c * 16), latent))
    g.add_param("g/stem_b", np.zeros(c * 16, dtype=np.float32))
    g.add("g/stem", "dense", ["latent", "g/stem_w", "g/stem_b"], reshape_to=[c, 4, 4])
    g.add("g/stem_a", "relu", ["g/stem"])
    src = "g/stem_a"
    for i in range(stages):
        cn = c // 2
        g.add(f"g/u{i}", "nearest-upsample", [src])
        g.add_param(f"g/w{i}", T.he_normal(rng, (cn, c, 3, 3), c * 9))
        g.add_param(f"g/b{i}", np.zeros(cn, dtype=np.float32))
        g.add(f"g/c{i}", "conv2d", [f"g/u{i}", f"g/w{i}", f"g/b{i}"], stride=1, pad=1)
        g.add_param(f"g/g{i}", np.ones(cn, dtype=np.float32))
        g.add_param(f"g/be{i}", np.zeros(cn, dtype=np.float32))
        g.add(f"g/n{i}", "batch-norm", [f"g/c{i}", f"g/g{i}", f"g/be{i}"])
        g.add(f"g/a{i}", "relu", [f"g/n{i}"])
        src, c = f"g/a{i}", cn
    g.add_param("g/out_w", T.he_normal(rng, (out_channels, c, 1, 1), c))
    g.add_param("g/out_b", np.zeros(out_channels, dtype=np.float32))
    g.add("g/out_lin", "conv2d", [src, "g/out_w", "g/out_b"], stride=1, pad=0)
    g.add("g/out", "tanh", ["g/out_lin"])
    return g


def simple_discriminator(res: int, width: int, seed: int, in_channels: int = 1,
                         probability: bool = True) -> Graph:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 200]))
    g = Graph()
    g.add_input("image")
    src = "image"
    c_in, c = in_channels, width
    stages = int(np.log2(res // 4))
    for i in range(stages):
        g.add_param(f"d/w{i}", T.he_normal(rng, (c, c_in, 3, 3), c_in * 9))
        g.add_param(f"d/b{i}", np.zeros(c, dtype=np.float32))
        g.add(f"d/c{i}", "conv2d", [src, f"d/w{i}", f"d/b{i}"], stride=1, pad=1)
        g.add(f"d/a{i}", "elu", [f"d/c{i}"])
        g.add(f"d/p{i}", "average-downsample", [f"d/a{i}"])
        src, c_in, c = f"d/p{i}", c, c * 2
    g.add_param("d/fc_w", T.he_normal(rng, (c_in * 16, 1), c_in * 16))
    g.add_param("d/fc_b", np.zeros(1, dtype=np.float32))
    g.add("d/lin", "dense", [src, "d/fc_w", "d/fc_b"])
    if probability:
        g.add("d/out", "sigmoid", ["d/lin"])
    return g


@dataclass
class ZooConfig:
    resolution: int = 16
    latent: int = 16
    width: int = 4
    batch_size: int = 8
    steps: int = 100
    learning_rate: float = 2e-4
    seed: int = 0


@dataclass
class ZooResult:
    generator: Graph
    aux: dict = field(default_factory=dict)

    def synthesize(self, count: int, seed: int = 0, latent: int = 16) -> np.ndarray:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, latent)).astype(np.float32)
        with T.no_grad():
            out = self.generator.run({"latent": z}, outputs="g/out")
        return out.data


def _step_params(graph: Graph, prefix: str, loss, opt) -> None:
    params = {n: p for n, p in graph.params.items() if n.startswith(prefix)}
    grads = T.grad_of(loss, list(params.values()))
    optimizer_step(opt, params, {n: g.data for n, g in zip(params, grads)})


def train_dcgan(images: np.ndarray, cfg: ZooConfig, loss_log=None) -> ZooResult:
    """Classic minimax training with a probability-output discriminator."""
    rng = _rng_chain(cfg.seed, 1)
    gen = simple_generator(cfg.resolution, cfg.latent, cfg.width, cfg.seed)
    disc = simple_discriminator(cfg.resolution, cfg.width, cfg.seed, probability=True)
    opt_g = OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
    opt_d = OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
    bn_rng = _rng_chain(cfg.seed, 2)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(images), cfg.batch_size)
        z = rng.standard_normal((cfg.batch_size, cfg.latent)).astype(np.float32)
        with T.no_grad():
            fake = gen.run({"latent": z}, outputs="g/out", training=True, rng=bn_rng)
        d_real = disc.run({"image": images[idx]}, outputs="d/out", training=True)
        d_fake = disc.run({"image": fake.data}, outputs="d/out", training=True)
        d_loss = T.neg(minimax_value(d_real, d_fake))
        _step_params(disc, "d/", d_loss, opt_d)

        fake = gen.run({"latent": z}, outputs="g/out", training=True, rng=bn_rng)
        d_fake = disc.run({"image": fake}, outputs="d/out", training=True)
        g_loss = T.neg(T.mean(T.log(T.clip(d_fake, 1e-7, 1 - 1e-7))))
        _step_params(gen, "g/", g_loss, opt_g)
        if loss_log:
            loss_log(step, "discriminator", float(d_loss.data))
            loss_log(step, "generator", float(g_loss.data))
    return ZooResult(gen, {"discriminator": disc})


def train_wgan(images: np.ndarray, cfg: ZooConfig, clip_c: float = 0.01,
               critic_iters: int = 5, loss_log=None) -> ZooResult:
    """Weight-clipped Wasserstein training with an RMSprop critic."""
    rng = _rng_chain(cfg.seed, 3)
    gen = simple_generator(cfg.resolution, cfg.latent, cfg.width, cfg.seed)
    critic = simple_discriminator(cfg.resolution, cfg.width, cfg.seed, probability=False)
    opt_g = OptimizerState(RMSprop(), 5e-5)
    opt_d = OptimizerState(RMSprop(), 5e-5)
    bn_rng = _rng_chain(cfg.seed, 4)
    for step in range(cfg.steps):
        for _ in range(critic_iters):
            idx = rng.integers(0, len(images), cfg.batch_size)
            z = rng.standard_normal((cfg.batch_size, cfg.latent)).astype(np.float32)
            with T.no_grad():
                fake = gen.run({"latent": z}, outputs="g/out", training=True, rng=bn_rng)
            d_real = critic.run({"image": images[idx]}, outputs="d/lin", training=True)
            d_fake = critic.run({"image": fake.data}, outputs="d/lin", training=True)
            c_loss = wasserstein_critic_loss(d_real, d_fake)
            _step_params(critic, "d/", c_loss, opt_d)
            clip_weights({n: p for n, p in critic.params.items()}, clip_c)
        z = rng.standard_normal((cfg.batch_size, cfg.latent)).astype(np.float32)
        fake = gen.run({"latent": z}, outputs="g/out", training=True, rng=bn_rng)
        g_loss = T.neg(T.mean(critic.run({"image": fake}, outputs="d/lin", training=True)))
        _step_params(gen, "g/", g_loss, opt_g)
        if loss_log:
            loss_log(step, "critic", float(c_loss.data))
            loss_log(step, "generator", float(g_loss.data))
    return ZooResult(gen, {"critic": critic})


# ---------------------------------------------------------------------------
# SimGAN refiner

def build_refiner(res: int, width: int, seed: int) -> Graph:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 300]))
    g = Graph()
    g.add_input("image")
    g.add_param("r/in_w", T.he_normal(rng, (width, 1, 3, 3), 9))
    g.add_param("r/in_b", np.zeros(width, dtype=np.float32))
    g.add("r/in", "conv2d", ["image", "r/in_w", "r/in_b"], stride=1, pad=1)
    g.add("r/in_a", "relu", ["r/in"])
    src = "r/in_a"
    for i in range(2):  # two residual blocks
        g.add_param(f"r/w{i}", T.he_normal(rng, (width, width, 3, 3), width * 9))
        g.add_param(f"r/b{i}", np.zeros(width, dtype=np.float32))
        g.add(f"r/c{i}", "conv2d", [src, f"r/w{i}", f"r/b{i}"], stride=1, pad=1)
        g.add(f"r/a{i}", "relu", [f"r/c{i}"])
        g.add(f"r/s{i}", "add", [f"r/a{i}", src])
        src = f"r/s{i}"
    g.add_param("r/out_w", T.he_normal(rng, (1, width, 1, 1), width))
    g.add_param("r/out_b", np.zeros(1, dtype=np.float32))
    g.add("r/out_lin", "conv2d", [src, "r/out_w", "r/out_b"], stride=1, pad=0)
    g.add("r/out", "tanh", ["r/out_lin"])
    return g


def train_simgan(synthetic: np.ndarray, real: np.ndarray, cfg: ZooConfig,
                 sim_cfg: SimGanConfig | None = None, loss_log=None) -> ZooResult:
    """Refiner training with the warmup-then-5:1 update schedule."""
    sim_cfg = sim_cfg or SimGanConfig()
    rng = _rng_chain(cfg.seed, 5)
    refiner = build_refiner(cfg.resolution, cfg.width * 2, cfg.seed)
    disc = simple_discriminator(cfg.resolution, cfg.width, cfg.seed, probability=True)
    opt_r = OptimizerState(SGD(momentum=0.0), 1e-4)
    opt_d = OptimizerState(SGD(momentum=0.0), 1e-4)
    schedule = SimGanUpdateSchedule(sim_cfg)
    for step in range(cfg.steps):
        action = schedule.next_action()
        idx = rng.integers(0, len(synthetic), cfg.batch_size)
        batch = Tensor(synthetic[idx])
        if action == "discriminator":
            ridx = rng.integers(0, len(real), cfg.batch_size)
            with T.no_grad():
                refined = refiner.run({"image": batch}, outputs="r/out", training=True)
            d_real = disc.run({"image": real[ridx]}, outputs="d/out", training=True)
            d_fake = disc.run({"image": refined.data}, outputs="d/out", training=True)
            loss = T.neg(minimax_value(d_real, d_fake))
            _step_params(disc, "d/", loss, opt_d)
            name = "discriminator"
        else:
            refined = refiner.run({"image": batch}, outputs="r/out", training=True)
            if action == "refiner-warmup":
                loss = T.mul(T.l1(T.sub(refined, batch)), sim_cfg.lambda_reg)
            else:
                d_fake = disc.run({"image": refined}, outputs="d/out", training=True)
                loss = simgan_refiner_loss(refined, batch, d_fake, sim_cfg.lambda_reg)
            _step_params(refiner, "r/", loss, opt_r)
            name = action
        if loss_log:
            loss_log(step, name, float(loss.data))
    return ZooResult(refiner, {"discriminator": disc})


def refine(refiner: Graph, images: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return refiner.run({"image": images.astype(np.float32)}, outputs="r/out").data


# ---------------------------------------------------------------------------
# MUNIT-style two-domain translation (desk scale)

def _coder_pair(tag: str, res: int, width: int, rng) -> Graph:
    """Encoder to a latent feature map plus decoder back to image space."""
    g = Graph()
    g.add_input("image")
    g.add_input("latent_in")
    # encoder
    g.add_param(f"{tag}/e_w0", T.he_normal(rng, (width, 1, 3, 3), 9))
    g.add_param(f"{tag}/e_b0", np.zeros(width, dtype=np.float32))
    g.add(f"{tag}/e_c0", "conv2d", ["image", f"{tag}/e_w0", f"{tag}/e_b0"], stride=1, pad=1)
    g.add(f"{tag}/e_a0", "relu", [f"{tag}/e_c0"])
    g.add(f"{tag}/e_p0", "average-downsample", [f"{tag}/e_a0"])
    g.add_param(f"{tag}/e_w1", T.he_normal(rng, (width, width, 3, 3), width * 9))
    g.add_param(f"{tag}/e_b1", np.zeros(width, dtype=np.float32))
    g.add(f"{tag}/latent", "conv2d", [f"{tag}/e_p0", f"{tag}/e_w1", f"{tag}/e_b1"],
          stride=1, pad=1)
    # decoder (fed either the encoder latent or an external one)
    g.add_param(f"{tag}/d_w0", T.he_normal(rng, (width, width, 3, 3), width * 9))
    g.add_param(f"{tag}/d_b0", np.zeros(width, dtype=np.float32))
    g.add(f"{tag}/d_c0", "conv2d", ["latent_in", f"{tag}/d_w0", f"{tag}/d_b0"], stride=1, pad=1)
    g.add(f"{tag}/d_a0", "relu", [f"{tag}/d_c0"])
    g.add(f"{tag}/d_up", "nearest-upsample", [f"{tag}/d_a0"])
    g.add_param(f"{tag}/d_w1", T.he_normal(rng, (1, width, 3, 3), width * 9))
    g.add_param(f"{tag}/d_b1", np.zeros(1, dtype=np.float32))
    g.add(f"{tag}/d_c1", "conv2d", [f"{tag}/d_up", f"{tag}/d_w1", f"{tag}/d_b1"],
          stride=1, pad=1)
    g.add(f"{tag}/decoded", "tanh", [f"{tag}/d_c1"])
    return g


def _encode(coder: Graph, tag: str, images) -> Tensor:
    dummy_latent = np.zeros((1, 1, 1, 1), dtype=np.float32)
    return coder.run({"image": images, "latent_in": dummy_latent}, outputs=f"{tag}/latent",
                     training=True)


def _decode(coder: Graph, tag: str, latent) -> Tensor:
    dummy_img = np.zeros((1, 1, 4, 4), dtype=np.float32)
    return coder.run({"image": dummy_img, "latent_in": latent}, outputs=f"{tag}/decoded",
                     training=True)


def train_munit(domain_a: np.ndarray, domain_b: np.ndarray, cfg: ZooConfig,
                weights: MunitWeights | None = None, loss_log=None) -> ZooResult:
    """Shared-latent translation with the six-component composite loss."""
    weights = weights or MunitWeights()
    rng = _rng_chain(cfg.seed, 6)
    coder_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 400]))
    ca = _coder_pair("a", cfg.resolution, cfg.width * 2, coder_rng)
    cb = _coder_pair("b", cfg.resolution, cfg.width * 2, coder_rng)
    da = simple_discriminator(cfg.resolution, cfg.width, cfg.seed + 1, probability=False)
    db = simple_discriminator(cfg.resolution, cfg.width, cfg.seed + 2, probability=False)
    percep = build_perceptual_extractor(seed=cfg.seed, in_channels=1)
    opt = {name: OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
           for name in ("ca", "cb", "da", "db")}
    for step in range(cfg.steps):
        ia = Tensor(domain_a[rng.integers(0, len(domain_a), cfg.batch_size)])
        ib = Tensor(domain_b[rng.integers(0, len(domain_b), cfg.batch_size)])
        za, zb = _encode(ca, "a", ia), _encode(cb, "b", ib)
        recon_a, recon_b = _decode(ca, "a", za), _decode(cb, "b", zb)
        ab, ba = _decode(cb, "b", za), _decode(ca, "a", zb)
        # cycle: translate, re-encode, decode home
        z_ab, z_ba = _encode(cb, "b", ab), _encode(ca, "a", ba)
        cyc_a, cyc_b = _decode(ca, "a", z_ab), _decode(cb, "b", z_ba)

        terms = {
            "adversarial": T.add(lsgan_loss(None, da.run({"image": ba}, outputs="d/lin",
                                                         training=True), role="generator"),
                                 lsgan_loss(None, db.run({"image": ab}, outputs="d/lin",
                                                         training=True), role="generator")),
            "image_recon": T.add(T.mean(T.abs_(T.sub(recon_a, ia))),
                                 T.mean(T.abs_(T.sub(recon_b, ib)))),
            "kl_recon": T.add(T.mean(T.square(za)), T.mean(T.square(zb))),
            "cycle": T.add(T.mean(T.abs_(T.sub(cyc_a, ia))), T.mean(T.abs_(T.sub(cyc_b, ib)))),
            "kl_cycle": T.add(T.mean(T.square(z_ab)), T.mean(T.square(z_ba))),
            "perceptual": T.add(perceptual_distance(percep, ia, ab),
                                perceptual_distance(percep, ib, ba)),
        }
        g_loss = munit_total_loss(terms, weights)
        for graph, prefix, key in ((ca, "a/", "ca"), (cb, "b/", "cb")):
            params = {n: p for n, p in graph.params.items() if n.startswith(prefix)}
            grads = T.grad_of(g_loss, list(params.values()))
            optimizer_step(opt[key], params, {n: g.data for n, g in zip(params, grads)})

        for disc, key, real_img, fake_img in ((da, "da", ia, ba), (db, "db", ib, ab)):
            d_real = disc.run({"image": real_img}, outputs="d/lin", training=True)
            d_fake = disc.run({"image": fake_img.detach()}, outputs="d/lin", training=True)
            d_loss = lsgan_loss(d_real, d_fake, role="discriminator")
            _step_params(disc, "d/", d_loss, opt[key])
        if loss_log:
            loss_log(step, "translator", float(g_loss.data))
            loss_log(step, "discriminator", float(d_loss.data))
    return ZooResult(ca, {"coder_b": cb, "disc_a": da, "disc_b": db})


def translate(result: ZooResult, images: np.ndarray) -> np.ndarray:
    """Domain A images refined through the B decoder (the refinement path)."""
    ca, cb = result.generator, result.aux["coder_b"]
    with T.no_grad():
        z = _encode(ca, "a", images.astype(np.float32))
        out = _decode(cb, "b", z)
    return out.data


# ---------------------------------------------------------------------------
# 3-D multi-conditional translation

def build_voi_generator(voi: int, box: int, width: int, seed: int) -> Graph:
    """U-Net-ish 3-D generator: 7-channel VOI input down to a bottleneck and
    back up to the box-sized nodule patch."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 500]))
    g = Graph()
    g.add_input("voi")
    g.add_param("g3/w0", T.he_normal(rng, (width, 7, 3, 3, 3), 7 * 27))
    g.add_param("g3/b0", np.zeros(width, dtype=np.float32))
    g.add("g3/c0", "conv3d", ["voi", "g3/w0", "g3/b0"], stride=1, pad=1)
    g.add("g3/a0", "leaky-relu", ["g3/c0"], slope=0.2)
    g.add("g3/p0", "average-downsample", ["g3/a0"])
    g.add_param("g3/w1", T.he_normal(rng, (width * 2, width, 3, 3, 3), width * 27))
    g.add_param("g3/b1", np.zeros(width * 2, dtype=np.float32))
    g.add("g3/c1", "conv3d", ["g3/p0", "g3/w1", "g3/b1"], stride=1, pad=1)
    g.add("g3/a1", "leaky-relu", ["g3/c1"], slope=0.2)
    scale = voi // 2 // box  # bottleneck spatial vs box size
    src = "g3/a1"
    if scale > 1:
        g.add("g3/p1", "average-downsample", [src])
        src = "g3/p1"
    g.add_param("g3/w2", T.he_normal(rng, (width, width * 2, 3, 3, 3), width * 2 * 27))
    g.add_param("g3/b2", np.zeros(width, dtype=np.float32))
    g.add("g3/c2", "conv3d", [src, "g3/w2", "g3/b2"], stride=1, pad=1)
    g.add("g3/a2", "relu", ["g3/c2"])
    g.add_param("g3/w3", T.he_normal(rng, (1, width, 1, 1, 1), width))
    g.add_param("g3/b3", np.zeros(1, dtype=np.float32))
    g.add("g3/c3", "conv3d", ["g3/a2", "g3/w3", "g3/b3"], stride=1, pad=0)
    g.add("g3/out", "tanh", ["g3/c3"])
    return g


def build_voi_discriminator(tag: str, in_channels: int, res: int, width: int,
                            seed: int, probability: bool) -> Graph:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 600]))
    g = Graph()
    g.add_input("x")
    src = "x"
    c_in, c = in_channels, width
    size = res
    i = 0
    while size > 4:
        g.add_param(f"{tag}/w{i}", T.he_normal(rng, (c, c_in, 3, 3, 3), c_in * 27))
        g.add_param(f"{tag}/b{i}", np.zeros(c, dtype=np.float32))
        g.add(f"{tag}/c{i}", "conv3d", [src, f"{tag}/w{i}", f"{tag}/b{i}"], stride=1, pad=1)
        g.add(f"{tag}/a{i}", "leaky-relu", [f"{tag}/c{i}"], slope=0.2)
        g.add(f"{tag}/p{i}", "average-downsample", [f"{tag}/a{i}"])
        src, c_in, c = f"{tag}/p{i}", c, min(c * 2, 16)
        size //= 2
        i += 1
    g.add_param(f"{tag}/fc_w", T.he_normal(rng, (c_in * size ** 3, 1), c_in * size ** 3))
    g.add_param(f"{tag}/fc_b", np.zeros(1, dtype=np.float32))
    g.add(f"{tag}/lin", "dense", [src, f"{tag}/fc_w", f"{tag}/fc_b"])
    if probability:
        g.add(f"{tag}/out", "sigmoid", [f"{tag}/lin"])
    return g


@dataclass
class McganDeskConfig:
    voi: int = 16
    box: int = 8
    width: int = 4
    batch_size: int = 4
    steps: int = 60
    learning_rate: float = 2e-4
    seed: int = 0
    weights: McganWeights = field(default_factory=McganWeights)
    lambda_gp: float = 10.0
    label_flip_period: int = 3


def _center_slices(voi: int, box: int):
    lo = (voi - box) // 2
    return (slice(None), slice(None)) + (slice(lo, lo + box),) * 3


def train_mcgan(vois: np.ndarray, nodules: np.ndarray, conditions: np.ndarray,
                cfg: McganDeskConfig, loss_log=None) -> ZooResult:
    """Dual-discriminator conditional training on noise-carved VOIs.

    ``vois`` are (M, 7, V, V, V) generator inputs (noise box already carved,
    six condition channels attached); ``nodules`` are the (M, 1, B, B, B)
    real patches; ``conditions`` the (M, 6, B, B, B) channels at box size.
    """
    gen = build_voi_generator(cfg.voi, cfg.box, cfg.width, cfg.seed)
    d_ctx = build_voi_discriminator("d1", 2, cfg.voi, cfg.width, cfg.seed + 1, probability=False)
    d_nod = build_voi_discriminator("d2", 7, cfg.box, cfg.width, cfg.seed + 2, probability=False)
    opt_g = OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
    opt_d1 = OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
    opt_d2 = OptimizerState(Adam(0.5, 0.999), cfg.learning_rate)
    rng = _rng_chain(cfg.seed, 7)
    flip = LabelFlipSchedule(cfg.label_flip_period)
    gp = GradPenaltyConfig(lambda_gp=cfg.lambda_gp)
    box_sl = _center_slices(cfg.voi, cfg.box)

    def paste(voi_batch: np.ndarray, patch: np.ndarray) -> np.ndarray:
        full = voi_batch[:, :1].copy()
        full[(slice(None), slice(None)) + box_sl[2:]] = patch
        return full

    for step in range(cfg.steps):
        idx = rng.integers(0, len(vois), cfg.batch_size)
        v, real_nod, cond = vois[idx], nodules[idx], conditions[idx]
        with T.no_grad():
            fake_nod = gen.run({"voi": v}, outputs="g3/out", training=True)

        # context branch: least-squares on (volume, carved volume) pairs
        real_pair = np.concatenate([paste(v, real_nod), v[:, :1]], axis=1)
        fake_pair = np.concatenate([paste(v, fake_nod.data), v[:, :1]], axis=1)
        if label_flip_gate(flip):
            real_pair, fake_pair = fake_pair, real_pair
        s_real = d_ctx.run({"x": real_pair}, outputs="d1/lin", training=True)
        s_fake = d_ctx.run({"x": fake_pair}, outputs="d1/lin", training=True)
        d1_loss = lsgan_loss(s_real, s_fake, role="discriminator")
        _step_params(d_ctx, "d1/", d1_loss, opt_d1)

        # nodule branch: Wasserstein-GP on condition-stacked patches
        real_stack = np.concatenate([real_nod, cond], axis=1)
        fake_stack = np.concatenate([fake_nod.data, cond], axis=1)
        critic = lambda x: d_nod.run({"x": x}, outputs="d2/lin", training=True)
        batch = AdversarialBatch(Tensor(real_stack), Tensor(fake_stack),
                                 interpolates=make_interpolates(Tensor(real_stack),
                                                                Tensor(fake_stack), rng))
        d2_loss = wgan_gp_loss(batch, critic, gp)
        _step_params(d_nod, "d2/", d2_loss, opt_d2)

        # generator: LSGAN context term + Wasserstein nodule term (+ L1)
        fake_nod = gen.run({"voi": v}, outputs="g3/out", training=True)
        fake_pair_t = T.concat([_paste_traced(Tensor(v[:, :1]), fake_nod, box_sl),
                                Tensor(v[:, :1])], axis=1)
        ctx_term = lsgan_loss(None, d_ctx.run({"x": fake_pair_t}, outputs="d1/lin",
                                              training=True), role="generator")
        nod_term = T.neg(T.mean(critic(T.concat([fake_nod, Tensor(cond)], axis=1))))
        l1_term = T.mean(T.abs_(T.sub(fake_nod, Tensor(real_nod))))
        g_loss = mcgan_objective(ctx_term, nod_term, l1_term, cfg.weights)
        _step_params(gen, "g3/", g_loss, opt_g)
        if loss_log:
            loss_log(step, "context_disc", float(d1_loss.data))
            loss_log(step, "nodule_critic", float(d2_loss.data))
            loss_log(step, "generator", float(g_loss.data))
    return ZooResult(gen, {"context_disc": d_ctx, "nodule_disc": d_nod})


def _paste_traced(background: Tensor, patch: Tensor, box_sl) -> Tensor:
    """Differentiable paste of a centered patch into a constant background."""
    n, _, v = background.shape[0], background.shape[1], background.shape[2]
    b = patch.shape[2]
    lo = (v - b) // 2
    mask = np.zeros(background.shape, dtype=background.dtype)
    mask[(slice(None), slice(None)) + (slice(lo, lo + b),) * 3] = 1.0
    padded = patch
    for axis in (2, 3, 4):
        padded = T.pad_zeros(padded, axis, lo, v - lo - b)
    return T.add(T.mul(background, Tensor(1.0 - mask)), padded)


def generate_nodules(result: ZooResult, vois: np.ndarray) -> np.ndarray:
    with T.no_grad():
        out = result.generator.run({"voi": vois.astype(np.float32)}, outputs="g3/out")
    return out.data
