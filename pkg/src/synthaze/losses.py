"""Differentiable objective terms.

The generator objective is a weighted sum of three groups:

  * structure terms tying the predicted transmission map to the clean
    input's luminance structure (edge/L1, SSIM, edge-aware smoothness)
  * airlight-consistency terms tying the rendered image to a real hazy
    exemplar (style) and to the clean input (content) in frozen VGG
    feature space
  * an adversarial term from a patch discriminator

Every loss is nonnegative, finite for valid inputs, and differentiable
w.r.t. its tensor arguments. Losses accept single images ``(C, H, W)`` or
batches ``(B, C, H, W)``; batched inputs are reduced by the batch mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import NumericsError
from .imaging import to_grayscale

LOG_EPS = 1e-7


@dataclass(frozen=True)
class SsimConfig:
    """Stability constants and windowing for the structural-similarity term.

    ``global`` mode uses whole-image statistics; ``windowed`` mode uses
    an odd Gaussian window (classic SSIM) for local statistics.
    """

    dynamic_range: float = 1.0
    mode: str = "global"
    window: int = 11
    window_sigma: float = 1.5

    def __post_init__(self):
        if self.dynamic_range <= 0:
            raise ValueError(f"dynamic_range must be positive, got {self.dynamic_range}")
        if self.mode not in ("global", "windowed"):
            raise ValueError(f"mode must be 'global' or 'windowed', got {self.mode!r}")
        if self.mode == "windowed" and (self.window < 3 or self.window % 2 == 0):
            raise ValueError(f"window must be odd and >= 3, got {self.window}")

    @property
    def c1(self) -> float:
        return (0.01 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.dynamic_range) ** 2


@dataclass(frozen=True)
class LossWeights:
    """All balancing coefficients; zeroing one weight is an ablation arm."""

    structure: float = 1.0
    airlight: float = 0.1
    adversarial: float = 1.0
    edge: float = 0.25
    luminance: float = 0.25
    smoothness: float = 1.0
    style: float = 0.1
    content: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {f.name} must be a nonnegative float, got {v!r}")


@dataclass(frozen=True)
class FeatureTaps:
    """Named backbone activations used by the perceptual terms."""

    style_layers: tuple[str, ...] = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")
    content_layers: tuple[str, ...] = ("relu3_3",)

    def __post_init__(self):
        if not self.style_layers or not self.content_layers:
            raise ValueError("style_layers and content_layers must be nonempty")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def edge_loss(x_lum: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between luminance and transmission."""
    _check_same_shape(x_lum, t, "edge_loss")
    return (x_lum - t).abs().mean()


def _ssim_global(x: torch.Tensor, t: torch.Tensor, cfg: SsimConfig) -> torch.Tensor:
    # per-sample whole-image statistics (population moments)
    mu_x = x.mean(dim=(-2, -1))
    mu_t = t.mean(dim=(-2, -1))
    var_x = (x * x).mean(dim=(-2, -1)) - mu_x * mu_x
    var_t = (t * t).mean(dim=(-2, -1)) - mu_t * mu_t
    cov = (x * t).mean(dim=(-2, -1)) - mu_x * mu_t
    num = (2 * mu_x * mu_t + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_x**2 + mu_t**2 + cfg.c1) * (var_x + var_t + cfg.c2)
    return (num / den).mean()


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g1 = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g2 = torch.outer(g1, g1)
    return g2 / g2.sum()


def _ssim_windowed(x: torch.Tensor, t: torch.Tensor, cfg: SsimConfig) -> torch.Tensor:
    if x.dim() == 3:
        x, t = x.unsqueeze(0), t.unsqueeze(0)
    kernel = gaussian_window(cfg.window, cfg.window_sigma, dtype=x.dtype).view(
        1, 1, cfg.window, cfg.window
    )
    pad = cfg.window // 2
    mu_x = F.conv2d(x, kernel, padding=pad)
    mu_t = F.conv2d(t, kernel, padding=pad)
    var_x = F.conv2d(x * x, kernel, padding=pad) - mu_x * mu_x
    var_t = F.conv2d(t * t, kernel, padding=pad) - mu_t * mu_t
    cov = F.conv2d(x * t, kernel, padding=pad) - mu_x * mu_t
    num = (2 * mu_x * mu_t + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_x**2 + mu_t**2 + cfg.c1) * (var_x + var_t + cfg.c2)
    return (num / den).mean()


def luminance_loss(
    x_lum: torch.Tensor, t: torch.Tensor, cfg: SsimConfig | None = None
) -> torch.Tensor:
    """1 - SSIM(x, t): zero when the maps are identical, up to 2 at worst."""
    cfg = cfg or SsimConfig()
    _check_same_shape(x_lum, t, "luminance_loss")
    s = _ssim_global(x_lum, t, cfg) if cfg.mode == "global" else _ssim_windowed(x_lum, t, cfg)
    return 1.0 - s


def smoothness_loss(t: torch.Tensor, weight_source: torch.Tensor | None = None) -> torch.Tensor:
    """Edge-aware smoothness of the transmission map.

    Forward differences along rows and columns; each absolute gradient is
    damped by exp(-|gradient|) so strong edges are penalized less. By
    default the damping comes from the map's own gradients; pass
    ``weight_source`` (e.g. the clean luminance) to damp by image gradients
    instead. Directions with no valid positions (1-pixel extent) contribute 0.
    """
    if t.dim() not in (3, 4):
        raise ValueError(f"expected (1,H,W) or (B,1,H,W) transmission, got {tuple(t.shape)}")
    if weight_source is not None:
        _check_same_shape(t, weight_source, "smoothness_loss")
    grad_r = t[..., 1:, :] - t[..., :-1, :]
    grad_c = t[..., :, 1:] - t[..., :, :-1]
    if weight_source is None:
        w_r, w_c = grad_r, grad_c
    else:
        w_r = weight_source[..., 1:, :] - weight_source[..., :-1, :]
        w_c = weight_source[..., :, 1:] - weight_source[..., :, :-1]
    total = t.sum() * 0.0  # keeps autograd connectivity for degenerate sizes
    if grad_r.numel():
        total = total + (grad_r.abs() * torch.exp(-w_r.abs())).mean()
    if grad_c.numel():
        total = total + (grad_c.abs() * torch.exp(-w_c.abs())).mean()
    return total


def structure_loss(
    x: torch.Tensor,
    t: torch.Tensor,
    weights: LossWeights | None = None,
    ssim_cfg: SsimConfig | None = None,
) -> torch.Tensor:
    """Weighted sum of the edge, luminance, and smoothness terms.

    ``x`` may be the 3-channel clean image (converted to luminance here)
    or an already-converted 1-channel map.
    """
    w = weights or LossWeights()
    x_lum = to_grayscale(x)
    return (
        w.edge * edge_loss(x_lum, t)
        + w.luminance * luminance_loss(x_lum, t, ssim_cfg)
        + w.smoothness * smoothness_loss(t)
    )


def _tap_distance(feats_a, feats_b) -> torch.Tensor:
    # squared L2 per tap, normalized by the tap's element count, then
    # averaged over taps
    per_tap = [((fa - fb) ** 2).mean() for fa, fb in zip(feats_a, feats_b)]
    return torch.stack(per_tap).mean()


def style_perceptual_loss(
    y: torch.Tensor, z: torch.Tensor, taps: FeatureTaps, backbone
) -> torch.Tensor:
    """Feature-space distance between the exemplar and the rendered image."""
    if backbone is None:
        raise ValueError("a loaded feature backbone is required")
    fy = backbone.extract(y, taps.style_layers)
    fz = backbone.extract(z, taps.style_layers)
    return _tap_distance(fy, fz)


def content_perceptual_loss(
    x: torch.Tensor, z: torch.Tensor, taps: FeatureTaps, backbone
) -> torch.Tensor:
    """Feature-space distance between the clean input and the rendered image."""
    if backbone is None:
        raise ValueError("a loaded feature backbone is required")
    fx = backbone.extract(x, taps.content_layers)
    fz = backbone.extract(z, taps.content_layers)
    return _tap_distance(fx, fz)


def airlight_loss(
    x: torch.Tensor,
    y: torch.Tensor,
    z: torch.Tensor,
    weights: LossWeights | None = None,
    taps: FeatureTaps | None = None,
    backbone=None,
) -> torch.Tensor:
    """Weighted style + content consistency of the rendered image.

    Extracts the rendered image's features once for both terms.
    """
    if backbone is None:
        raise ValueError("a loaded feature backbone is required")
    w = weights or LossWeights()
    taps = taps or FeatureTaps()
    all_taps = list(dict.fromkeys(taps.style_layers + taps.content_layers))
    fz = dict(zip(all_taps, backbone.extract(z, all_taps)))
    fy = backbone.extract(y, taps.style_layers)
    fx = backbone.extract(x, taps.content_layers)
    style = _tap_distance(fy, [fz[n] for n in taps.style_layers])
    content = _tap_distance(fx, [fz[n] for n in taps.content_layers])
    return w.style * style + w.content * content


def adversarial_loss_discriminator(
    d_real: torch.Tensor, d_fake: torch.Tensor
) -> torch.Tensor:
    """-(mean log D(real) + mean log(1 - D(fake))), log args floored at 1e-7."""
    real_term = d_real.clamp(min=LOG_EPS).log().mean()
    fake_term = (1.0 - d_fake).clamp(min=LOG_EPS).log().mean()
    return -(real_term + fake_term)


def adversarial_loss_generator(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: -mean log D(fake)."""
    return -d_fake.clamp(min=LOG_EPS).log().mean()


def _as_float(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def total_generator_loss(
    structure, airlight, adversarial, weights: LossWeights | None = None
):
    """Weighted total of the three generator components.

    Raises NumericsError naming the offending component if any of them is
    non-finite.
    """
    w = weights or LossWeights()
    for name, v in (("structure", structure), ("airlight", airlight), ("adversarial", adversarial)):
        fv = _as_float(v)
        if not math.isfinite(fv):
            raise NumericsError(name, fv)
    return w.structure * structure + w.airlight * airlight + w.adversarial * adversarial
