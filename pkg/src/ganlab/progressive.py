"""Progressive-growing machinery: stage schedules, fade-in blending, network
growth, and per-stage conditioning injection for box-conditioned synthesis.

Networks follow the two-convs-per-stage pattern with channel counts halving
at higher resolutions; desk-scale widths divide the full-scale table by a
configurable factor so everything trains on one CPU core.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .graph import Graph
from .losses import (AdversarialBatch, GradPenaltyConfig, LabelFlipSchedule,
                     label_flip_gate, make_interpolates, wasserstein_critic_loss,
                     wgan_gp_loss)
from .optim import Adam, OptimizerState, optimizer_step
from .tensor import ShapeError, Tensor

# Full-scale channel widths per resolution (generator trunk).
FULL_CHANNELS = {4: 512, 8: 512, 16: 256, 32: 128, 64: 64, 128: 32, 256: 16}
FULL_LATENT = 512


class ScheduleError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class StageSchedule:
    resolutions: list[int]
    steps_per_stage: int
    fade_fraction: float = 0.5

    @property
    def stage_count(self) -> int:
        return len(self.resolutions)

    def alpha_at(self, stage_index: int, step: int) -> float:
        """Fade coefficient within a stage: ramps 0 -> 1 over the fade window."""
        if stage_index == 0:
            return 1.0
        window = max(1, int(self.fade_fraction * self.steps_per_stage))
        return min(1.0, step / window)


def build_schedule(base: int = 4, target: int = 64, steps_per_stage: int = 1000,
                   fade_fraction: float = 0.5) -> StageSchedule:
    if not _is_pow2(base) or not _is_pow2(target):
        raise ScheduleError(
            f"resolutions must be powers of two (pad inputs up if needed), got {base} -> {target}")
    if base > target:
        raise ScheduleError(f"base {base} exceeds target {target}")
    if not 0.0 <= fade_fraction <= 1.0:
        raise ScheduleError("fade_fraction must lie in [0, 1]")
    res = []
    r = base
    while r <= target:
        res.append(r)
        r *= 2
    return StageSchedule(res, steps_per_stage, fade_fraction)


def fade_blend(prev_path, new_path, alpha: float):
    """(1-alpha)*prev + alpha*new; returns the endpoint itself at alpha 0 or 1."""
    pshape = prev_path.shape
    nshape = new_path.shape
    if tuple(pshape) != tuple(nshape):
        raise ShapeError(f"fade_blend: prev {tuple(pshape)} vs new {tuple(nshape)}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return prev_path
    if alpha == 1.0:
        return new_path
    if isinstance(prev_path, Tensor) or isinstance(new_path, Tensor):
        return T.add(T.mul(T.as_tensor(prev_path), 1.0 - alpha),
                     T.mul(T.as_tensor(new_path), alpha))
    return (1.0 - alpha) * prev_path + alpha * new_path


# ---------------------------------------------------------------------------
# blueprints and growth

@dataclass
class NetworkBlueprint:
    base: int = 4
    target: int = 64
    scale_divisor: int = 16
    image_channels: int = 1
    conditioned: bool = False
    seed: int = 0

    def channels(self, resolution: int) -> int:
        if resolution not in FULL_CHANNELS:
            raise ScheduleError(f"no channel width defined for resolution {resolution}")
        return max(1, FULL_CHANNELS[resolution] // self.scale_divisor)

    @property
    def latent(self) -> int:
        return max(1, FULL_LATENT // self.scale_divisor)

    def resolutions(self) -> list[int]:
        return build_schedule(self.base, self.target, 1).resolutions


class GrowthError(ValueError):
    pass


def _gen_param_specs(bp: NetworkBlueprint, stage: int, res: list[int]) -> dict[str, tuple]:
    """name -> (shape, fan_in) for every generator parameter up to `stage`."""
    specs: dict[str, tuple] = {}
    c0 = bp.channels(res[0])
    cond = 1 if bp.conditioned else 0
    specs["g/stem_w"] = ((bp.latent, c0 * bp.base * bp.base), bp.latent)
    specs["g/stem_b"] = ((c0 * bp.base * bp.base,), None)
    for k in range(stage + 1):
        ck = bp.channels(res[k])
        cin = c0 if k == 0 else bp.channels(res[k - 1])
        first_in = cin + cond
        specs[f"g/s{k}/conv0_w"] = ((ck, first_in, 3, 3), first_in * 9)
        specs[f"g/s{k}/conv0_b"] = ((ck,), None)
        if k > 0:
            specs[f"g/s{k}/conv1_w"] = ((ck, ck, 3, 3), ck * 9)
            specs[f"g/s{k}/conv1_b"] = ((ck,), None)
        specs[f"g/s{k}/rgb_w"] = ((bp.image_channels, ck, 1, 1), ck)
        specs[f"g/s{k}/rgb_b"] = ((bp.image_channels,), None)
    return specs


def _disc_param_specs(bp: NetworkBlueprint, stage: int, res: list[int]) -> dict[str, tuple]:
    specs: dict[str, tuple] = {}
    c0 = bp.channels(res[0])
    img_in = bp.image_channels + (1 if bp.conditioned else 0)
    for k in range(stage + 1):
        ck = bp.channels(res[k])
        specs[f"d/s{k}/from_w"] = ((ck, img_in, 1, 1), img_in)
        specs[f"d/s{k}/from_b"] = ((ck,), None)
        if k > 0:
            cdown = bp.channels(res[k - 1])
            specs[f"d/s{k}/conv0_w"] = ((ck, ck, 3, 3), ck * 9)
            specs[f"d/s{k}/conv0_b"] = ((ck,), None)
            specs[f"d/s{k}/conv1_w"] = ((cdown, ck, 3, 3), ck * 9)
            specs[f"d/s{k}/conv1_b"] = ((cdown,), None)
    specs["d/final/conv_w"] = ((c0, c0 + 1, 3, 3), (c0 + 1) * 9)
    specs["d/final/conv_b"] = ((c0,), None)
    specs["d/final/fc0_w"] = ((c0 * bp.base * bp.base, c0), c0 * bp.base * bp.base)
    specs["d/final/fc0_b"] = ((c0,), None)
    specs["d/final/fc1_w"] = ((c0, 1), c0)
    specs["d/final/fc1_b"] = ((1,), None)
    return specs


def _materialize(specs: dict[str, tuple], carried: Mapping[str, Tensor] | None,
                 rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    carried = carried or {}
    for name, (shape, fan_in) in specs.items():
        if name in carried:
            t = carried[name]
            have = tuple(t.data.shape if isinstance(t, Tensor) else np.shape(t))
            if have != tuple(shape):
                raise GrowthError(f"carried parameter {name!r} has shape {have}, expected {tuple(shape)}")
            params[name] = t if isinstance(t, Tensor) else Tensor(np.asarray(t), requires_grad=True)
        elif fan_in is None:
            params[name] = Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
        else:
            params[name] = Tensor(T.he_normal(rng, shape, fan_in), requires_grad=True)
    return params


def build_generator(bp: NetworkBlueprint, stage: int,
                    params: Mapping[str, Tensor]) -> Graph:
    """Generator graph for one stage; outputs ``g/rgb`` and, past stage 0,
    ``g/rgb_prev_up`` for fade blending."""
    res = bp.resolutions()
    g = Graph()
    g.add_input("latent")
    for name, p in params.items():
        if name.startswith("g/"):
            g.add_param(name, p)
    c0 = bp.channels(res[0])
    g.add("g/stem", "dense", ["latent", "g/stem_w", "g/stem_b"], reshape_to=[c0, bp.base, bp.base])
    g.add("g/stem_act", "leaky-relu", ["g/stem"], slope=0.2)
    g.add("g/stem_pn", "pixelwise-feature-norm", ["g/stem_act"])
    feat = "g/stem_pn"
    rgb_of_stage: dict[int, str] = {}
    for k in range(stage + 1):
        r = res[k]
        if k > 0:
            g.add(f"g/s{k}/up", "nearest-upsample", [feat])
            feat = f"g/s{k}/up"
        if bp.conditioned:
            g.add_input(f"cond@{r}")
            g.add(f"g/s{k}/cat", "concat", [feat, f"cond@{r}"], axis=1)
            feat = f"g/s{k}/cat"
        g.add(f"g/s{k}/c0", "conv2d", [feat, f"g/s{k}/conv0_w", f"g/s{k}/conv0_b"], stride=1, pad=1)
        g.add(f"g/s{k}/a0", "leaky-relu", [f"g/s{k}/c0"], slope=0.2)
        g.add(f"g/s{k}/p0", "pixelwise-feature-norm", [f"g/s{k}/a0"])
        feat = f"g/s{k}/p0"
        if k > 0:
            g.add(f"g/s{k}/c1", "conv2d", [feat, f"g/s{k}/conv1_w", f"g/s{k}/conv1_b"], stride=1, pad=1)
            g.add(f"g/s{k}/a1", "leaky-relu", [f"g/s{k}/c1"], slope=0.2)
            g.add(f"g/s{k}/p1", "pixelwise-feature-norm", [f"g/s{k}/a1"])
            feat = f"g/s{k}/p1"
        if k >= stage - 1:  # older toRGB adapters are abandoned after their fade
            g.add(f"g/s{k}/rgb_lin", "conv2d", [feat, f"g/s{k}/rgb_w", f"g/s{k}/rgb_b"],
                  stride=1, pad=0)
            rgb_id = "g/rgb" if k == stage else f"g/s{k}/rgb"
            g.add(rgb_id, "tanh", [f"g/s{k}/rgb_lin"])
            rgb_of_stage[k] = rgb_id
    if stage > 0:
        g.add("g/rgb_prev_up", "nearest-upsample", [rgb_of_stage[stage - 1]])
    return g


def build_discriminator(bp: NetworkBlueprint, stage: int,
                        params: Mapping[str, Tensor]) -> Graph:
    """Critic graph; inputs ``image`` (+ ``cond`` when conditioned) and, past
    stage 0, fade inputs ``alpha``/``one_minus_alpha``."""
    res = bp.resolutions()
    g = Graph()
    g.add_input("image")
    for name, p in params.items():
        if name.startswith("d/"):
            g.add_param(name, p)
    if bp.conditioned:
        g.add_input("cond")
        g.add("d/in", "concat", ["image", "cond"], axis=1)
        top = "d/in"
    else:
        top = "image"

    def from_rgb(k: int, src: str, tag: str) -> str:
        g.add(f"d/s{k}/from{tag}", "conv2d", [src, f"d/s{k}/from_w", f"d/s{k}/from_b"], stride=1, pad=0)
        g.add(f"d/s{k}/froma{tag}", "leaky-relu", [f"d/s{k}/from{tag}"], slope=0.2)
        return f"d/s{k}/froma{tag}"

    def block(k: int, src: str) -> str:
        g.add(f"d/s{k}/c0", "conv2d", [src, f"d/s{k}/conv0_w", f"d/s{k}/conv0_b"], stride=1, pad=1)
        g.add(f"d/s{k}/a0", "leaky-relu", [f"d/s{k}/c0"], slope=0.2)
        g.add(f"d/s{k}/c1", "conv2d", [f"d/s{k}/a0", f"d/s{k}/conv1_w", f"d/s{k}/conv1_b"], stride=1, pad=1)
        g.add(f"d/s{k}/a1", "leaky-relu", [f"d/s{k}/c1"], slope=0.2)
        g.add(f"d/s{k}/down", "average-downsample", [f"d/s{k}/a1"])
        return f"d/s{k}/down"

    if stage == 0:
        h = from_rgb(0, top, "")
    else:
        g.add_input("alpha")
        g.add_input("one_minus_alpha")
        new_path = block(stage, from_rgb(stage, top, ""))
        g.add("d/skip_down", "average-downsample", [top])
        prev_path = from_rgb(stage - 1, "d/skip_down", "_skip")
        g.add("d/fade_new", "mul", [new_path, "alpha"])
        g.add("d/fade_prev", "mul", [prev_path, "one_minus_alpha"])
        g.add("d/fade", "add", ["d/fade_new", "d/fade_prev"])
        h = "d/fade"
        for k in range(stage - 1, 0, -1):
            h = block(k, h)
    g.add("d/mbstd", "minibatch-stddev", [h])
    g.add("d/fc_conv", "conv2d", ["d/mbstd", "d/final/conv_w", "d/final/conv_b"], stride=1, pad=1)
    g.add("d/fc_act", "leaky-relu", ["d/fc_conv"], slope=0.2)
    g.add("d/fc0", "dense", ["d/fc_act", "d/final/fc0_w", "d/final/fc0_b"])
    g.add("d/fc0_act", "leaky-relu", ["d/fc0"], slope=0.2)
    g.add("d/out", "dense", ["d/fc0_act", "d/final/fc1_w", "d/final/fc1_b"])
    return g


def grow(blueprint: NetworkBlueprint, stage_index: int,
         carried_params: Mapping[str, Tensor] | None = None,
         ) -> tuple[Graph, Graph, dict[str, Tensor]]:
    """Build generator/discriminator graphs for a stage, reusing carried
    parameters bit-exactly and initializing only the new blocks."""
    res = blueprint.resolutions()
    if stage_index >= len(res):
        raise GrowthError(
            f"schedule exhausted: stage {stage_index} beyond final resolution {res[-1]}")
    rng = np.random.default_rng(np.random.SeedSequence([blueprint.seed, stage_index]))
    specs = {**_gen_param_specs(blueprint, stage_index, res),
             **_disc_param_specs(blueprint, stage_index, res)}
    params = _materialize(specs, carried_params, rng)
    gen = build_generator(blueprint, stage_index, params)
    disc = build_discriminator(blueprint, stage_index, params)
    return gen, disc, params


# ---------------------------------------------------------------------------
# conditioning injection

def downsample_canvas(canvas: np.ndarray, resolution: int) -> np.ndarray:
    """Area-average a (N,1,R,R) canvas down to (N,1,r,r). Partial boxes keep
    fractional intensity, so thin boxes survive even at 4x4."""
    full = canvas.shape[-1]
    if canvas.shape[-2] != full:
        raise ShapeError(f"canvas must be square, got {canvas.shape}")
    if resolution > full or full % resolution != 0 or not _is_pow2(full // resolution):
        raise ScheduleError(
            f"stage resolution {resolution} not reachable from canvas resolution {full}")
    out = canvas.astype(np.float32, copy=True)
    while out.shape[-1] > resolution:
        n, c, h, w = out.shape
        out = out.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out


def inject_condition_stage(cond_canvas: np.ndarray, stage_resolution: int,
                           feature_map: Tensor) -> Tensor:
    """Downsample the full-resolution canvas to the stage resolution and
    concatenate it onto the feature map's channel axis."""
    small = downsample_canvas(cond_canvas, stage_resolution)
    if feature_map.shape[0] != small.shape[0] or feature_map.shape[2:] != small.shape[2:]:
        raise ShapeError(
            f"feature map {feature_map.shape} incompatible with canvas at {stage_resolution}")
    return T.concat([feature_map, Tensor(small)], axis=1)


def condition_pyramid(canvas: np.ndarray, resolutions: list[int]) -> dict[str, np.ndarray]:
    return {f"cond@{r}": downsample_canvas(canvas, r) for r in resolutions}


# ---------------------------------------------------------------------------
# training

@dataclass
class ProgressiveConfig:
    base: int = 4
    target: int = 32
    steps_per_stage: int = 120
    fade_fraction: float = 0.5
    batch_size: int = 8
    scale_divisor: int = 16
    image_channels: int = 1
    conditioned: bool = False
    learning_rate: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    lambda_gp: float = 10.0
    critic_iters: int = 1
    label_flip_period: int | None = None

    @classmethod
    def cpggan(cls, **overrides) -> "ProgressiveConfig":
        """Conditioned variant defaults: lr 2e-4, batch 4, flip once in three."""
        base = cls(conditioned=True, learning_rate=2e-4, batch_size=4, label_flip_period=3)
        for k, v in overrides.items():
            setattr(base, k, v)
        return base


@dataclass
class ProgressiveResult:
    blueprint: NetworkBlueprint
    schedule: StageSchedule
    params: dict[str, Tensor]
    stage: int
    alpha: float
    step: int
    losses: list[dict] = field(default_factory=list)


def downsample_images(images: np.ndarray, resolution: int) -> np.ndarray:
    out = images
    while out.shape[-1] > resolution:
        n, c, h, w = out.shape
        out = out.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out.astype(np.float32)


def generator_forward(gen: Graph, bp: NetworkBlueprint, stage: int, z: np.ndarray,
                      alpha: float, canvas: np.ndarray | None = None) -> Tensor:
    res = bp.resolutions()
    feeds: dict = {"latent": z.astype(np.float32)}
    if bp.conditioned:
        if canvas is None:
            raise ValueError("conditioned generator needs a condition canvas")
        pyramid = condition_pyramid(downsample_images(canvas, res[stage]), res[:stage + 1])
        feeds.update(pyramid)
    if stage == 0:
        return gen.run(feeds, outputs="g/rgb")
    outs = gen.run(feeds, outputs=["g/rgb", "g/rgb_prev_up"])
    return fade_blend(outs["g/rgb_prev_up"], outs["g/rgb"], alpha)


def make_critic(disc: Graph, bp: NetworkBlueprint, stage: int, alpha: float,
                canvas: np.ndarray | None = None) -> Callable[[Tensor], Tensor]:
    def critic(x: Tensor) -> Tensor:
        feeds: dict = {"image": x}
        if stage > 0:
            feeds["alpha"] = np.float32(alpha)
            feeds["one_minus_alpha"] = np.float32(1.0 - alpha)
        if bp.conditioned:
            feeds["cond"] = canvas.astype(np.float32)
        return disc.run(feeds, outputs="d/out")
    return critic


def train_progressive(images: np.ndarray, cfg: ProgressiveConfig, seed: int = 0,
                      canvases: np.ndarray | None = None,
                      loss_log: Callable[[int, str, float], None] | None = None,
                      checkpoint_dir: str | Path | None = None) -> ProgressiveResult:
    """Train a progressive GAN (optionally box-conditioned) on images in [-1, 1].

    ``images`` is (M, C, R, R) at the target resolution; ``canvases`` is the
    matching (M, 1, R, R) condition stack when the config is conditioned.
    """
    if images.ndim != 4 or images.shape[-1] != cfg.target:
        raise ShapeError(f"expected (M, C, {cfg.target}, {cfg.target}) images, got {images.shape}")
    if cfg.conditioned and (canvases is None or canvases.shape[0] != images.shape[0]):
        raise ValueError("conditioned training needs one canvas per image")
    bp = NetworkBlueprint(base=cfg.base, target=cfg.target, scale_divisor=cfg.scale_divisor,
                          image_channels=cfg.image_channels, conditioned=cfg.conditioned, seed=seed)
    schedule = build_schedule(cfg.base, cfg.target, cfg.steps_per_stage, cfg.fade_fraction)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    gp_cfg = GradPenaltyConfig(lambda_gp=cfg.lambda_gp, critic_iters=cfg.critic_iters)
    flip = LabelFlipSchedule(cfg.label_flip_period) if cfg.label_flip_period else None
    opt_d = OptimizerState(Adam(cfg.beta1, cfg.beta2), cfg.learning_rate)
    opt_g = OptimizerState(Adam(cfg.beta1, cfg.beta2), cfg.learning_rate)

    params: dict[str, Tensor] = {}
    result = ProgressiveResult(bp, schedule, params, 0, 1.0, 0)
    global_step = 0
    for stage in range(schedule.stage_count):
        gen, disc, params = grow(bp, stage, params if stage else None)
        res = schedule.resolutions[stage]
        reals_full = downsample_images(images, res)
        gen_params = {n: p for n, p in params.items() if n.startswith("g/")}
        disc_params = {n: p for n, p in params.items() if n.startswith("d/")}
        for step in range(cfg.steps_per_stage):
            alpha = schedule.alpha_at(stage, step)
            idx = rng.integers(0, images.shape[0], cfg.batch_size)
            real = reals_full[idx]
            canvas = canvases[idx] if cfg.conditioned else None
            canvas_stage = downsample_images(canvas, res) if cfg.conditioned else None
            critic = make_critic(disc, bp, stage, alpha, canvas_stage)

            d_loss_val = 0.0
            for _ in range(cfg.critic_iters):
                z = rng.standard_normal((cfg.batch_size, bp.latent)).astype(np.float32)
                with T.no_grad():
                    fake = generator_forward(gen, bp, stage, z, alpha, canvas)
                r, f = (fake.data, real) if (flip and label_flip_gate(flip)) else (real, fake.data)
                batch = AdversarialBatch(
                    real=Tensor(r), synthetic=Tensor(f),
                    noise=Tensor(z), interpolates=make_interpolates(Tensor(r), Tensor(f), rng))
                d_loss = wgan_gp_loss(batch, critic, gp_cfg)
                d_loss_val = float(d_loss.data)
                grads = T.grad_of(d_loss, list(disc_params.values()))
                optimizer_step(opt_d, disc_params,
                               {n: g.data for n, g in zip(disc_params, grads)})

            z = rng.standard_normal((cfg.batch_size, bp.latent)).astype(np.float32)
            fake = generator_forward(gen, bp, stage, z, alpha, canvas)
            g_loss = T.neg(T.mean(critic(fake)))
            grads = T.grad_of(g_loss, list(gen_params.values()))
            optimizer_step(opt_g, gen_params, {n: g.data for n, g in zip(gen_params, grads)})

            if loss_log is not None:
                loss_log(global_step, "critic", d_loss_val)
                loss_log(global_step, "generator", float(g_loss.data))
            result.stage, result.alpha, result.step = stage, alpha, global_step
            global_step += 1
        result.params = params
        if checkpoint_dir is not None:
            save_stage_checkpoint(checkpoint_dir, result)
    return result


def save_stage_checkpoint(directory: str | Path, result: ProgressiveResult) -> Path:
    from .checkpoint import save_checkpoint
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    res = result.schedule.resolutions[result.stage]
    path = directory / f"stage_{res}.glt"
    save_checkpoint(path, result.params)
    sidecar = {"stage": result.stage, "alpha": result.alpha, "step": result.step}
    path.with_suffix(".json").write_text(json.dumps(sidecar))
    return path


def synthesize(result: ProgressiveResult, count: int, seed: int = 0,
               canvases: np.ndarray | None = None) -> np.ndarray:
    """Sample images from a trained progressive generator."""
    bp = result.blueprint
    gen = build_generator(bp, result.stage, result.params)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, bp.latent)).astype(np.float32)
    if bp.conditioned:
        if canvases is None or canvases.shape[0] != count:
            raise ValueError("conditioned synthesis needs one canvas per sample")
        canvases = downsample_images(canvases, result.schedule.resolutions[result.stage])
    with T.no_grad():
        out = generator_forward(gen, bp, result.stage, z, result.alpha, canvases)
    return out.data
