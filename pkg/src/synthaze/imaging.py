"""Image containers, file I/O, and the atmospheric-scattering forward model.

Conventions used throughout the package:

  * images are ``torch`` float tensors shaped ``(3, H, W)`` (or batched
    ``(B, 3, H, W)``) with intensities in ``[0, 1]``
  * transmission maps are ``(1, H, W)`` / ``(B, 1, H, W)`` with values in
    ``(0, 1]``; ``1`` means clear air, values near ``0`` mean opaque haze
  * depth maps are ``(1, H, W)`` / ``(B, 1, H, W)`` with values ``>= 0``
    in relative units
  * an airlight is a 3-vector (or ``(B, 3)`` batch) in ``[0, 1]``

The hazing model is the classical scattering law

    z = t * x + (1 - t) * A

with transmission ``t = exp(-beta * d)`` for scattering coefficient
``beta`` and depth ``d``. All functions here are pure and safe to call
concurrently.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import FormatError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _leading_dims_ok(t: torch.Tensor) -> bool:
    return t.dim() in (3, 4)


def check_image(img: torch.Tensor, channels: tuple[int, ...] = (1, 3)) -> None:
    """Validate the image tensor convention; raises ValueError on violation."""
    if not isinstance(img, torch.Tensor) or not _leading_dims_ok(img):
        raise ValueError(f"expected a (C,H,W) or (B,C,H,W) tensor, got {type(img)}")
    if img.shape[-3] not in channels:
        raise ValueError(f"expected channel count in {channels}, got {img.shape[-3]}")
    if img.shape[-2] < 1 or img.shape[-1] < 1:
        raise ValueError(f"degenerate spatial shape {tuple(img.shape)}")
    if img.numel() and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError(
            f"image intensities must lie in [0,1], got range "
            f"[{float(img.min()):g}, {float(img.max()):g}]"
        )


def check_transmission(t: torch.Tensor) -> None:
    if not isinstance(t, torch.Tensor) or not _leading_dims_ok(t) or t.shape[-3] != 1:
        raise ValueError("transmission map must be a (1,H,W) or (B,1,H,W) tensor")
    if t.numel() and (t.min() <= 0.0 or t.max() > 1.0):
        raise ValueError(
            f"transmission values must lie in (0,1], got range "
            f"[{float(t.min()):g}, {float(t.max()):g}]"
        )


def check_depth(d: torch.Tensor) -> None:
    if not isinstance(d, torch.Tensor) or not _leading_dims_ok(d) or d.shape[-3] != 1:
        raise ValueError("depth map must be a (1,H,W) or (B,1,H,W) tensor")
    if d.numel() and d.min() < 0.0:
        raise ValueError(f"depth must be nonnegative, got min {float(d.min()):g}")


def as_airlight(a, dtype=None) -> torch.Tensor:
    """Coerce a 3-sequence / (3,) / (B,3) tensor into a validated airlight."""
    t = torch.as_tensor(a, dtype=dtype if dtype is not None else torch.get_default_dtype())
    if t.dim() not in (1, 2) or t.shape[-1] != 3:
        raise ValueError(f"airlight must have exactly 3 components, got shape {tuple(t.shape)}")
    if t.min() < 0.0 or t.max() > 1.0:
        raise ValueError(
            f"airlight components must lie in [0,1], got range "
            f"[{float(t.min()):g}, {float(t.max()):g}]"
        )
    return t


def load_image(path) -> torch.Tensor:
    """Decode a PNG/JPEG file into a (3, H, W) float32 tensor in [0, 1].

    8-bit values map to [0, 1] by division by 255; grayscale sources are
    replicated to 3 channels. Raises FileNotFoundError for missing paths
    and FormatError for undecodable bytes.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"cannot decode image file: {path}") from exc
    data = torch.from_numpy(arr.astype(np.float32) / 255.0)
    return data.permute(2, 0, 1).contiguous()


def save_image(img: torch.Tensor, path) -> None:
    """Quantize by round(v * 255), clamp to [0, 255], and encode by suffix."""
    check_image(img, channels=(1, 3))
    if img.dim() != 3:
        raise ValueError("save_image expects a single (C,H,W) image")
    arr = torch.round(img.detach() * 255.0).clamp(0, 255).to(torch.uint8)
    arr = arr.permute(1, 2, 0).numpy()
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_depth(path) -> torch.Tensor:
    """Load a (1, H, W) depth map from a .npy array or a grayscale image.

    Image sources are interpreted as relative depth in [0, 1]. Arrays are
    used as-is (any nonnegative unit).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such depth file: {path}")
    if path.suffix.lower() == ".npy":
        arr = np.load(path)
        d = torch.as_tensor(arr, dtype=torch.float32)
        if d.dim() == 2:
            d = d.unsqueeze(0)
        elif d.dim() == 3 and d.shape[0] != 1 and d.shape[2] == 1:
            d = d.permute(2, 0, 1)
    else:
        d = to_grayscale(load_image(path))
    check_depth(d)
    return d


def to_grayscale(img: torch.Tensor) -> torch.Tensor:
    """Rec.601 luminance: 0.299 R + 0.587 G + 0.114 B.

    1-channel inputs are returned unchanged.
    """
    check_image(img, channels=(1, 3))
    if img.shape[-3] == 1:
        return img
    w = torch.tensor(LUMA_WEIGHTS, dtype=img.dtype, device=img.device)
    lum = (img * w.view(3, 1, 1)).sum(dim=-3, keepdim=True)
    return lum.clamp(0.0, 1.0)


def transmission_from_depth(depth: torch.Tensor, beta: float) -> torch.Tensor:
    """t = exp(-beta * d), elementwise; result lies in (0, 1].

    The output is floored at the smallest positive normal float so deep
    scenes never collapse to an exact zero transmission.
    """
    check_depth(depth)
    if not (isinstance(beta, (int, float)) and math.isfinite(beta) and beta > 0):
        raise ValueError(f"scattering coefficient beta must be a positive float, got {beta!r}")
    t = torch.exp(-beta * depth)
    return t.clamp(min=torch.finfo(t.dtype).tiny, max=1.0)


def apply_density(t: torch.Tensor, alpha: float) -> torch.Tensor:
    """Density control: raise the transmission to the power alpha in [0, 1].

    alpha = 1 keeps the map unchanged, alpha = 0 yields all-ones (no haze
    after rendering); intermediate values thin the haze monotonically.
    """
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha) and 0.0 <= alpha <= 1.0):
        raise ValueError(f"density alpha must lie in [0,1], got {alpha!r}")
    check_transmission(t)
    return t.pow(alpha)


def render_haze(clean: torch.Tensor, transmission: torch.Tensor, airlight) -> torch.Tensor:
    """Composite haze into a clean image: z = t * x + (1 - t) * A per channel.

    ``clean`` is (3,H,W) or (B,3,H,W); ``transmission`` has matching spatial
    shape with 1 channel; ``airlight`` is a 3-sequence, (3,) or (B,3) tensor.
    Every output pixel is a convex combination of x and A, so it stays inside
    [min(x, A), max(x, A)] per channel.
    """
    check_image(clean, channels=(3,))
    check_transmission(transmission)
    if clean.shape[-2:] != transmission.shape[-2:]:
        raise ValueError(
            f"spatial shape mismatch: image {tuple(clean.shape[-2:])} vs "
            f"transmission {tuple(transmission.shape[-2:])}"
        )
    if clean.dim() == 4 and transmission.dim() == 4 and clean.shape[0] != transmission.shape[0]:
        raise ValueError("batch size mismatch between image and transmission")
    a = as_airlight(airlight, dtype=clean.dtype)
    if a.dim() == 1:
        a = a.view(3, 1, 1)
    else:
        if clean.dim() != 4 or a.shape[0] != clean.shape[0]:
            raise ValueError("batched airlight requires a matching batched image")
        a = a.view(-1, 3, 1, 1)
    z = transmission * clean + (1.0 - transmission) * a
    return z.clamp(0.0, 1.0)
