"""Procedural desk-scale corpora: clean scenes, depth maps, hazy exemplars.

Real training corpora are large photo collections; these generators build
small synthetic stand-ins with the same moving parts (clean images with
plausible depth structure, plus an exemplar set whose haze shares a
consistent airlight distribution) so the whole pipeline can be exercised
on a laptop and in CI.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import render_haze, save_image, transmission_from_depth

# exemplar haze statistics: a slightly blue airlight and moderately dense
# scattering, shared by the whole exemplar set
EXEMPLAR_AIRLIGHT_BASE = (0.72, 0.76, 0.85)
EXEMPLAR_AIRLIGHT_JITTER = 0.04
EXEMPLAR_BETA_RANGE = (1.5, 2.5)


def smooth_noise(rng: np.random.Generator, height: int, width: int) -> torch.Tensor:
    """Multi-scale smooth noise field in [0, 1], shape (height, width)."""
    out = torch.zeros(height, width)
    for cells, weight in ((3, 1.0), (6, 0.5), (12, 0.25)):
        coarse = torch.from_numpy(rng.standard_normal((1, 1, cells, cells)).astype(np.float32))
        fine = F.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=False)
        out += weight * fine[0, 0]
    lo, hi = float(out.min()), float(out.max())
    return (out - lo) / (hi - lo + 1e-8)


def random_scene(
    rng: np.random.Generator, height: int = 96, width: int = 96
) -> tuple[torch.Tensor, torch.Tensor]:
    """One synthetic scene: a (3, H, W) clean image and its (1, H, W) depth.

    The background is a colored smooth field that recedes from bottom
    (near) to top (far); a handful of boxes sit at their own depths and
    occlude whatever is behind them.
    """
    base_color = rng.uniform(0.25, 0.75, size=3)
    texture = smooth_noise(rng, height, width)
    img = torch.empty(3, height, width)
    for c in range(3):
        img[c] = base_color[c] * (0.6 + 0.4 * texture)

    ramp = torch.linspace(1.0, 0.15, height).view(height, 1).expand(height, width)
    depth = (0.75 * ramp + 0.25 * smooth_noise(rng, height, width)).clone()

    for _ in range(int(rng.integers(3, 7))):
        bh = int(rng.integers(height // 8, height // 3))
        bw = int(rng.integers(width // 8, width // 3))
        top = int(rng.integers(0, height - bh))
        left = int(rng.integers(0, width - bw))
        color = torch.from_numpy(rng.uniform(0.05, 0.95, size=3).astype(np.float32))
        box_depth = float(rng.uniform(0.05, 0.9))
        img[:, top : top + bh, left : left + bw] = color.view(3, 1, 1)
        depth[top : top + bh, left : left + bw] = box_depth

    img.clamp_(0.0, 1.0)
    return img, depth.clamp(0.0, 1.0).unsqueeze(0)


def exemplar_airlight(rng: np.random.Generator) -> tuple[float, float, float]:
    base = np.asarray(EXEMPLAR_AIRLIGHT_BASE)
    jitter = rng.uniform(-EXEMPLAR_AIRLIGHT_JITTER, EXEMPLAR_AIRLIGHT_JITTER, size=3)
    return tuple(np.clip(base + jitter, 0.0, 1.0))


def hazy_exemplar(
    clean: torch.Tensor, depth: torch.Tensor, rng: np.random.Generator
) -> torch.Tensor:
    """Haze a scene with the exemplar set's shared airlight statistics."""
    beta = float(rng.uniform(*EXEMPLAR_BETA_RANGE))
    t = transmission_from_depth(depth, beta)
    return render_haze(clean, t, exemplar_airlight(rng))


def make_desk_corpus(
    root,
    n_clean: int = 50,
    n_exemplar: int = 30,
    seed: int = 0,
    height: int = 96,
    width: int = 96,
) -> dict[str, Path]:
    """Write a small corpus: clean/ and depth/ pairs plus an exemplar/ set.

    Exemplars are hazed renderings of scenes held out from the clean set,
    so the two directories stay unpaired. Returns the three directories.
    """
    root = Path(root)
    dirs = {name: root / name for name in ("clean", "depth", "exemplar")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_clean):
        clean, depth = random_scene(rng, height, width)
        save_image(clean, dirs["clean"] / f"scene_{i:03d}.png")
        np.save(dirs["depth"] / f"scene_{i:03d}.npy", depth.numpy())
    for i in range(n_exemplar):
        clean, depth = random_scene(rng, height, width)
        save_image(hazy_exemplar(clean, depth, rng), dirs["exemplar"] / f"hazy_{i:03d}.png")
    return dirs
