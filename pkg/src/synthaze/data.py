"""Unpaired corpus ingestion.

A corpus is just a directory of PNG/JPEG files. Clean images and hazy
exemplars live in separate directories and are never paired.
"""

from __future__ import annotations

import logging
from pathlib import Path

import torch
import torch.nn.functional as F

from .errors import DataError
from .imaging import IMAGE_SUFFIXES, load_image

log = logging.getLogger(__name__)


def list_image_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/JPEG images found in {directory}")
    return files


def upscale_to_min_side(img: torch.Tensor, min_side: int) -> torch.Tensor:
    """Bilinearly upscale so the shorter side reaches ``min_side``."""
    h, w = img.shape[-2:]
    scale = min_side / min(h, w)
    new_h, new_w = max(min_side, round(h * scale)), max(min_side, round(w * scale))
    out = F.interpolate(
        img.unsqueeze(0), size=(new_h, new_w), mode="bilinear", align_corners=False
    ).squeeze(0)
    return out.clamp(0.0, 1.0)


def load_corpus(directory, min_side: int | None = None) -> list[torch.Tensor]:
    """Load every image in a directory as (3, H, W) tensors.

    Images smaller than ``min_side`` on either side are upscaled with a
    logged warning instead of rejected.
    """
    images = []
    for path in list_image_files(directory):
        img = load_image(path)
        if min_side is not None and min(img.shape[-2:]) < min_side:
            log.warning(
                "image %s is %dx%d, upscaling to reach a %d-pixel short side",
                path.name, img.shape[-2], img.shape[-1], min_side,
            )
            img = upscale_to_min_side(img, min_side)
        images.append(img)
    return images
