"""Patch sampling, the alternating optimization loop, and checkpointing.

One training step renders a batch end to end (transmission from the clean
patch, airlight from the exemplar patch, haze composite), updates the
discriminator on real exemplars vs detached renders, then updates the
transmission and airlight networks on the weighted total objective.

Everything is seed-deterministic in single-threaded mode: the same config
on the same corpus reproduces the loss log, and a run resumed from its
last checkpoint continues the identical RNG stream.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import load_corpus
from .errors import CheckpointError, ConfigError, NumericsError
from .imaging import apply_density, render_haze, to_grayscale
from .losses import (
    FeatureTaps,
    LossWeights,
    SsimConfig,
    adversarial_loss_discriminator,
    adversarial_loss_generator,
    airlight_loss,
    content_perceptual_loss,
    edge_loss,
    luminance_loss,
    smoothness_loss,
    style_perceptual_loss,
    total_generator_loss,
)
from .networks import AirlightNet, FeatureBackbone, PatchDiscriminator, TransmissionNet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LOG_FILENAME = "train_log.tsv"

REPORT_KEYS = (
    "edge", "luminance", "smoothness", "structure",
    "style", "content", "airlight",
    "adv_disc", "adv_gen", "total",
)

ADAM_BETAS = (0.9, 0.999)


@dataclass
class TrainConfig:
    """Everything a training run needs; serialized into every checkpoint."""

    clean_dir: str = ""
    exemplar_dir: str = ""
    checkpoint_dir: str = ""
    backbone_weights: str | None = None
    learning_rate: float = 0.001
    iterations: int = 100
    batches_per_iteration: int = 100
    batch_size: int = 32
    patch_size: int = 128
    # a single float fixes the density; a (low, high) pair samples uniformly
    alpha_sampling: float | tuple[float, float] = (0.2, 1.0)
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.alpha_sampling, list):
            self.alpha_sampling = tuple(self.alpha_sampling)
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)

    def validate(self) -> None:
        if not self.clean_dir:
            raise ConfigError("missing required key: clean_dir")
        if not self.exemplar_dir:
            raise ConfigError("missing required key: exemplar_dir")
        if not self.checkpoint_dir:
            raise ConfigError("missing required key: checkpoint_dir")
        if not (self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch_size < 64:
            raise ConfigError(f"patch_size must be >= 64, got {self.patch_size}")
        if self.iterations < 1 or self.batches_per_iteration < 1:
            raise ConfigError("iterations and batches_per_iteration must be >= 1")
        if isinstance(self.alpha_sampling, tuple):
            lo, hi = self.alpha_sampling
            if not (0.0 <= lo <= hi <= 1.0):
                raise ConfigError(f"alpha range must satisfy 0 <= low <= high <= 1, got {self.alpha_sampling}")
        elif not (0.0 <= float(self.alpha_sampling) <= 1.0):
            raise ConfigError(f"fixed alpha must lie in [0,1], got {self.alpha_sampling}")


@dataclass
class Batch:
    clean: torch.Tensor     # (B, 3, p, p)
    exemplar: torch.Tensor  # (B, 3, p, p)
    alpha: float


@dataclass
class TrainState:
    cfg: TrainConfig
    ten: TransmissionNet
    atn: AirlightNet
    disc: PatchDiscriminator
    backbone: FeatureBackbone
    opt_gen: torch.optim.Adam
    opt_disc: torch.optim.Adam
    rng: np.random.Generator
    step: int = 0
    taps: FeatureTaps = field(default_factory=FeatureTaps)
    ssim_cfg: SsimConfig = field(default_factory=SsimConfig)


def make_adam(params, learning_rate: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=learning_rate, betas=ADAM_BETAS)


def init_state(cfg: TrainConfig, backbone: FeatureBackbone | None = None) -> TrainState:
    """Fresh training state with seed-deterministic parameters."""
    cfg.validate()
    net_seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    ten = TransmissionNet(seed=int(net_seeds[0]))
    atn = AirlightNet(seed=int(net_seeds[1]))
    disc = PatchDiscriminator(seed=int(net_seeds[2]))
    if backbone is None:
        backbone = FeatureBackbone.load(cfg.backbone_weights, seed=int(net_seeds[3]))
    opt_gen = make_adam(list(ten.parameters()) + list(atn.parameters()), cfg.learning_rate)
    opt_disc = make_adam(disc.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    return TrainState(cfg=cfg, ten=ten, atn=atn, disc=disc, backbone=backbone,
                      opt_gen=opt_gen, opt_disc=opt_disc, rng=rng)


def _random_crop(img: torch.Tensor, size: int, rng: np.random.Generator) -> torch.Tensor:
    h, w = img.shape[-2:]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[..., top : top + size, left : left + size]


def sample_batch(
    clean_set: list[torch.Tensor],
    exemplar_set: list[torch.Tensor],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Batch:
    """Draw unpaired random crops plus a density value for one step.

    Images are chosen with replacement and crop origins uniformly; the
    draw order (clean crops, exemplar crops, alpha) is fixed so a given
    RNG state always yields the same batch.
    """
    if not clean_set or not exemplar_set:
        raise ConfigError("clean and exemplar sets must be nonempty")
    p = cfg.patch_size
    clean = torch.stack([
        _random_crop(clean_set[int(rng.integers(0, len(clean_set)))], p, rng)
        for _ in range(cfg.batch_size)
    ])
    exemplar = torch.stack([
        _random_crop(exemplar_set[int(rng.integers(0, len(exemplar_set)))], p, rng)
        for _ in range(cfg.batch_size)
    ])
    if isinstance(cfg.alpha_sampling, tuple):
        lo, hi = cfg.alpha_sampling
        alpha = float(rng.uniform(lo, hi))
    else:
        alpha = float(cfg.alpha_sampling)
    return Batch(clean=clean, exemplar=exemplar, alpha=alpha)


def _guard_finite(report: dict[str, float]) -> None:
    for key in REPORT_KEYS:
        if key in report and not math.isfinite(report[key]):
            raise NumericsError(key, report[key])


def train_step(state: TrainState, batch: Batch) -> dict[str, float]:
    """One alternating optimization step; returns all component scalars.

    Order: render, one discriminator update on (exemplar, detached render),
    then one generator update on the re-scored render.
    """
    cfg, w = state.cfg, state.cfg.loss_weights
    x, y, alpha = batch.clean, batch.exemplar, batch.alpha

    t = state.ten(x)
    t_alpha = apply_density(t, alpha)
    airlight_pred = state.atn(y)
    z = render_haze(x, t_alpha, airlight_pred)

    # discriminator sees the render as a constant
    d_real = state.disc(y)
    d_fake = state.disc(z.detach())
    loss_disc = adversarial_loss_discriminator(d_real, d_fake)
    if not math.isfinite(float(loss_disc)):
        raise NumericsError("adv_disc", float(loss_disc))
    state.opt_disc.zero_grad()
    loss_disc.backward()
    state.opt_disc.step()

    # generator terms (structure on the raw transmission, not the
    # density-adjusted one; the prior ties t itself to the clean image)
    x_lum = to_grayscale(x)
    l_edge = edge_loss(x_lum, t)
    l_lum = luminance_loss(x_lum, t, state.ssim_cfg)
    l_smooth = smoothness_loss(t)
    l_structure = w.edge * l_edge + w.luminance * l_lum + w.smoothness * l_smooth

    l_style = style_perceptual_loss(y, z, state.taps, state.backbone)
    l_content = content_perceptual_loss(x, z, state.taps, state.backbone)
    l_airlight = w.style * l_style + w.content * l_content

    l_adv_gen = adversarial_loss_generator(state.disc(z))
    loss_total = total_generator_loss(l_structure, l_airlight, l_adv_gen, w)

    report = {
        "edge": float(l_edge), "luminance": float(l_lum), "smoothness": float(l_smooth),
        "structure": float(l_structure),
        "style": float(l_style), "content": float(l_content), "airlight": float(l_airlight),
        "adv_disc": float(loss_disc), "adv_gen": float(l_adv_gen),
        "total": float(loss_total),
    }
    _guard_finite(report)

    state.opt_gen.zero_grad()
    loss_total.backward()
    state.opt_gen.step()
    state.step += 1
    return report


def save_checkpoint(state: TrainState, path) -> None:
    """Atomically write the full training state to a single file."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": state.step,
        "config": dataclasses.asdict(state.cfg),
        "ten": state.ten.state_dict(),
        "atn": state.atn.state_dict(),
        "disc": state.disc.state_dict(),
        "opt_gen": state.opt_gen.state_dict(),
        "opt_disc": state.opt_disc.state_dict(),
        "rng": state.rng.bit_generator.state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    """Read and version-check a checkpoint payload."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} is incompatible with "
            f"supported version {CHECKPOINT_FORMAT_VERSION}"
        )
    return payload


def state_from_checkpoint(payload: dict, backbone: FeatureBackbone | None = None) -> TrainState:
    """Rebuild a live training state from a checkpoint payload."""
    cfg = TrainConfig(**payload["config"])
    state = init_state(cfg, backbone=backbone)
    state.ten.load_state_dict(payload["ten"])
    state.atn.load_state_dict(payload["atn"])
    state.disc.load_state_dict(payload["disc"])
    state.opt_gen.load_state_dict(payload["opt_gen"])
    state.opt_disc.load_state_dict(payload["opt_disc"])
    state.rng.bit_generator.state = payload["rng"]
    state.step = int(payload["step"])
    return state


def checkpoint_path(checkpoint_dir, step: int) -> Path:
    return Path(checkpoint_dir) / f"ckpt_step{step:08d}.pt"


def latest_checkpoint(checkpoint_dir) -> Path | None:
    directory = Path(checkpoint_dir)
    if not directory.is_dir():
        return None
    candidates = sorted(directory.glob("ckpt_step*.pt"))
    return candidates[-1] if candidates else None


def _append_log_line(log_path: Path, iteration: int, step: int, means: dict[str, float]) -> None:
    new_file = not log_path.exists()
    with open(log_path, "a") as fh:
        if new_file:
            fh.write("\t".join(["iteration", "step"] + list(REPORT_KEYS)) + "\n")
        values = [f"{means[k]:.8f}" for k in REPORT_KEYS]
        fh.write("\t".join([str(iteration), str(step)] + values) + "\n")


def fit(cfg: TrainConfig, backbone: FeatureBackbone | None = None, step_callback=None) -> TrainState:
    """Run (or resume) the full training loop.

    Executes ``iterations x batches_per_iteration`` steps, appending one
    line of per-iteration loss means to ``checkpoint_dir/train_log.tsv``
    and checkpointing at every iteration boundary. If ``checkpoint_dir``
    already holds a checkpoint, training resumes after its step with the
    stored RNG stream. ``step_callback(step, report)``, when given, fires
    after every step.
    """
    cfg.validate()
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    resume_from = latest_checkpoint(ckpt_dir)
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        stored = TrainConfig(**payload["config"])
        if dataclasses.asdict(stored) != dataclasses.asdict(cfg):
            log.warning("resuming with a config that differs from the checkpointed one")
        state = state_from_checkpoint(payload, backbone=backbone)
        state.cfg = cfg
        log.info("resumed from %s at step %d", resume_from.name, state.step)
    else:
        state = init_state(cfg, backbone=backbone)

    clean_set = load_corpus(cfg.clean_dir, min_side=cfg.patch_size)
    exemplar_set = load_corpus(cfg.exemplar_dir, min_side=cfg.patch_size)

    log_path = ckpt_dir / LOG_FILENAME
    start_iteration = state.step // cfg.batches_per_iteration
    for iteration in range(start_iteration, cfg.iterations):
        sums = {k: 0.0 for k in REPORT_KEYS}
        t0 = time.time()
        for _ in range(cfg.batches_per_iteration):
            batch = sample_batch(clean_set, exemplar_set, cfg, state.rng)
            report = train_step(state, batch)
            for k in REPORT_KEYS:
                sums[k] += report[k]
            if step_callback is not None:
                step_callback(state.step, report)
        means = {k: v / cfg.batches_per_iteration for k, v in sums.items()}
        _append_log_line(log_path, iteration + 1, state.step, means)
        save_checkpoint(state, checkpoint_path(ckpt_dir, state.step))
        log.info(
            "iteration %d/%d step %d total %.5f (%.1fs)",
            iteration + 1, cfg.iterations, state.step, means["total"], time.time() - t0,
        )
    return state
