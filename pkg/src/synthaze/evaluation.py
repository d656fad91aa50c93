"""Depth-based baseline rendering and set-level quantitative metrics.

The baseline mirrors the classic synthetic-haze recipe: given an external
depth map, sample a scattering coefficient and a gray airlight uniformly
and push them through the physical model. Rendered sets are compared to
real hazy sets with the Fréchet distance between Gaussian fits of pooled
backbone activations; paired images are compared with PSNR.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .data import list_image_files
from .errors import DataError
from .imaging import load_image, render_haze, transmission_from_depth

DEFAULT_FID_TAP = "relu3_3"


@dataclass(frozen=True)
class BaselineConfig:
    beta_range: tuple[float, float] = (0.6, 1.8)
    airlight_range: tuple[float, float] = (0.7, 1.0)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.beta_range
        if not (0 < lo <= hi):
            raise ValueError(f"beta_range must satisfy 0 < low <= high, got {self.beta_range}")
        lo, hi = self.airlight_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(
                f"airlight_range must satisfy 0 <= low <= high <= 1, got {self.airlight_range}"
            )


class BaselineRender(NamedTuple):
    image: torch.Tensor
    beta: float
    airlight: float


def baseline_render(
    x: torch.Tensor, depth: torch.Tensor, cfg: BaselineConfig, rng: np.random.Generator
) -> BaselineRender:
    """Render haze from an external depth map with randomly sampled physics.

    beta ~ U(beta_range); a single gray airlight value ~ U(airlight_range)
    is used for all three channels. Returns the render plus the sampled
    coefficients so callers can log them.
    """
    if depth is None:
        raise ValueError("the baseline requires an external depth map")
    if x.shape[-2:] != depth.shape[-2:]:
        raise ValueError(
            f"spatial shape mismatch: image {tuple(x.shape[-2:])} vs depth {tuple(depth.shape[-2:])}"
        )
    beta = float(rng.uniform(*cfg.beta_range))
    a = float(rng.uniform(*cfg.airlight_range))
    t = transmission_from_depth(depth, beta)
    z = render_haze(x, t, (a, a, a))
    return BaselineRender(image=z, beta=beta, airlight=a)


@dataclass(frozen=True)
class SetStatistics:
    """Gaussian fit (mean, unbiased covariance) of per-image feature vectors."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_vectors(cls, vectors: np.ndarray) -> "SetStatistics":
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 2:
            raise DataError(
                f"need at least 2 feature vectors to fit statistics, got shape {vectors.shape}"
            )
        mean = vectors.mean(axis=0)
        cov = np.cov(vectors, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        return cls(mean=mean, cov=cov, count=vectors.shape[0])


def pooled_features(backbone, img: torch.Tensor, tap: str = DEFAULT_FID_TAP) -> np.ndarray:
    """Spatially averaged activation vector of one image at a named tap."""
    with torch.no_grad():
        feat = backbone.extract(img, [tap])[0]
    return feat.mean(dim=(-2, -1)).flatten().double().numpy()


def compute_set_statistics(
    images, backbone, tap: str = DEFAULT_FID_TAP
) -> SetStatistics:
    """Fit set statistics over an iterable of (3, H, W) images."""
    vectors = [pooled_features(backbone, img, tap) for img in images]
    if len(vectors) < 2:
        raise DataError(f"need at least 2 images to fit set statistics, got {len(vectors)}")
    return SetStatistics.from_vectors(np.stack(vectors))


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    # symmetric matrix square root; negative eigenvalues (numerical noise)
    # clamp to zero
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(s1: SetStatistics, s2: SetStatistics) -> float:
    """Fréchet distance between two Gaussian feature fits.

    ||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)), with the trace term
    evaluated through the symmetric product C1^(1/2) C2 C1^(1/2) so only
    symmetric eigendecompositions are needed.
    """
    if s1.mean.shape != s2.mean.shape:
        raise ValueError(f"dimension mismatch: {s1.mean.shape} vs {s2.mean.shape}")
    diff = s1.mean - s2.mean
    c1_half = _sqrt_psd(s1.cov)
    inner = c1_half @ s2.cov @ c1_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    return float(diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * tr_sqrt)


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs report +infinity."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float((a.double() - b.double()).pow(2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def evaluate_sets(
    rendered_dir, reference_dir, backbone, tap: str = DEFAULT_FID_TAP, out_dir=None
) -> dict:
    """FID between a rendered set and a reference set of real hazy images.

    Returns the report dict and, when ``out_dir`` is given, writes it as
    JSON plus a small human-readable table.
    """
    rendered = [load_image(p) for p in list_image_files(rendered_dir)]
    reference = [load_image(p) for p in list_image_files(reference_dir)]
    s_rendered = compute_set_statistics(rendered, backbone, tap)
    s_reference = compute_set_statistics(reference, backbone, tap)
    report = {
        "fid": fid(s_rendered, s_reference),
        "n_rendered": len(rendered),
        "n_reference": len(reference),
        "extractor_id": f"{backbone.extractor_id}:{tap}",
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(json.dumps(report, indent=2) + "\n")
        (out / "eval_report.txt").write_text(format_report(report))
    return report


def format_report(report: dict) -> str:
    lines = [
        f"{'metric':<14}{'value'}",
        f"{'fid':<14}{report['fid']:.4f}",
        f"{'n_rendered':<14}{report['n_rendered']}",
        f"{'n_reference':<14}{report['n_reference']}",
        f"{'extractor':<14}{report['extractor_id']}",
    ]
    return "\n".join(lines) + "\n"
