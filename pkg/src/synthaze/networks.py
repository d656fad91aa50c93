"""Trainable networks and the frozen perceptual feature backbone.

Three trainable networks:

  * :class:`TransmissionNet` — predicts a full-resolution transmission map
    from a clean image. Plain conv + LeakyReLU stack with additive skip
    connections and no down/upsampling, so spatial detail is preserved.
  * :class:`AirlightNet` — same trunk, but the head pools globally to a
    single RGB airlight triple.
  * :class:`PatchDiscriminator` — 4 stride-2 stages scoring overlapping
    patches as real/fake.

Plus :class:`FeatureBackbone`, a frozen VGG16 convolutional stack exposing
the named activations relu1_2 / relu2_2 / relu3_3 / relu4_3 for the
perceptual losses and for pooled-feature set statistics.
"""

from __future__ import annotations

import math
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

MIN_GENERATOR_INPUT = 16
MIN_DISCRIMINATOR_INPUT = 64

# indices into the VGG16 conv stack (torchvision layer numbering)
TAP_LAYERS = {"relu1_2": 3, "relu2_2": 8, "relu3_3": 15, "relu4_3": 22}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def seeded_kaiming_init_(module: nn.Module, seed: int, negative_slope: float = 0.2) -> None:
    """Overwrite all conv parameters with fan-in-scaled Gaussian draws.

    Uses a private generator so the global torch RNG state is irrelevant:
    the same seed always produces identical parameters.
    """
    gen = torch.Generator().manual_seed(int(seed))
    gain = math.sqrt(2.0 / (1.0 + negative_slope**2))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = gain / math.sqrt(fan_in)
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()


def _check_min_size(x: torch.Tensor, minimum: int, who: str) -> None:
    if x.dim() not in (3, 4) or x.shape[-3] != 3:
        raise ValueError(f"{who} expects a (3,H,W) or (B,3,H,W) tensor, got {tuple(x.shape)}")
    if x.shape[-2] < minimum or x.shape[-1] < minimum:
        raise ValueError(
            f"{who} requires spatial size >= {minimum}, got {tuple(x.shape[-2:])}"
        )


class TransmissionNet(nn.Module):
    """Full-resolution transmission estimator.

    Seven 3x3 stride-1 convolutions at 64 channels with LeakyReLU(0.2),
    additive skips from layer 2 to 4 and 4 to 6, and a sigmoid head mapping
    to a single channel in (0, 1). Output spatial size always equals input
    spatial size.
    """

    def __init__(self, seed: int = 0, channels: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(3, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv3 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv4 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv5 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv6 = nn.Conv2d(channels, channels, 3, padding=1)
        self.head = nn.Conv2d(channels, 1, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        seeded_kaiming_init_(self, seed)

    def trunk(self, x: torch.Tensor) -> torch.Tensor:
        a1 = self.act(self.conv1(x))
        a2 = self.act(self.conv2(a1))
        a3 = self.act(self.conv3(a2))
        a4 = self.act(self.conv4(a3)) + a2
        a5 = self.act(self.conv5(a4))
        return self.act(self.conv6(a5)) + a4

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_min_size(x, MIN_GENERATOR_INPUT, "TransmissionNet")
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        t = torch.sigmoid(self.head(self.trunk(x)))
        return t.squeeze(0) if squeeze else t


class AirlightNet(nn.Module):
    """Airlight estimator: TransmissionNet trunk + pooled 3-channel head.

    The head convolution maps to 3 channels which are globally average
    pooled and squashed by a sigmoid, yielding one RGB triple in (0, 1)
    regardless of input size.
    """

    def __init__(self, seed: int = 0, channels: int = 64):
        super().__init__()
        self.trunk_net = TransmissionNet(seed=seed, channels=channels)
        del self.trunk_net.head
        self.head = nn.Conv2d(channels, 3, 3, padding=1)
        seeded_kaiming_init_(self.head, seed + 1)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        _check_min_size(y, MIN_GENERATOR_INPUT, "AirlightNet")
        squeeze = y.dim() == 3
        if squeeze:
            y = y.unsqueeze(0)
        h = self.head(self.trunk_net.trunk(y))
        a = torch.sigmoid(F.adaptive_avg_pool2d(h, 1).flatten(1))
        return a.squeeze(0) if squeeze else a


class PatchDiscriminator(nn.Module):
    """Patch-level real/fake classifier.

    Four stride-2 4x4 convolutions (64 -> 128 -> 256 -> 512 channels) with
    LeakyReLU(0.2), then a stride-1 conv to one channel and a sigmoid. An
    input of side S yields a score map of side S / 16.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        chans = [3, 64, 128, 256, 512]
        stages = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            stages += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        stages.append(nn.Conv2d(512, 1, 3, padding=1))
        self.stages = nn.Sequential(*stages)
        seeded_kaiming_init_(self, seed)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        _check_min_size(img, MIN_DISCRIMINATOR_INPUT, "PatchDiscriminator")
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        scores = torch.sigmoid(self.stages(img))
        return scores.squeeze(0) if squeeze else scores


# VGG16 conv configuration up to relu4_3 ('M' = 2x2 max pool)
_VGG_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512)


class FeatureBackbone(nn.Module):
    """Frozen VGG16 feature stack with named activation taps.

    Weights come either from a local file (a plain state dict, or a full
    torchvision vgg16 checkpoint whose ``features.*`` entries are used) or,
    when no file is given, from a seeded random initialization. Random
    features are deterministic and serve desk-scale tests and relative
    comparisons; absolute perceptual quality needs pretrained weights.

    Pooling uses ceil mode so arbitrarily small inputs still reach the
    deepest tap; sizes divisible by 8 are unaffected.
    """

    def __init__(self, extractor_id: str = "vgg16"):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 3
        for v in _VGG_CFG:
            if v == "M":
                layers.append(nn.MaxPool2d(2, stride=2, ceil_mode=True))
            else:
                layers += [nn.Conv2d(cin, v, 3, padding=1), nn.ReLU(inplace=False)]
                cin = v
        self.features = nn.Sequential(*layers)
        self.extractor_id = extractor_id
        mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)
        self.freeze()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def load(cls, weights_path=None, seed: int = 0) -> "FeatureBackbone":
        """Build the backbone from a local weights file or a seeded init."""
        if weights_path is None:
            backbone = cls(extractor_id=f"vgg16-random-seed{seed}")
            seeded_kaiming_init_(backbone, seed, negative_slope=0.0)
            backbone.freeze()
            return backbone
        path = Path(weights_path)
        if not path.exists():
            raise FileNotFoundError(f"no such backbone weights file: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        if any(k.startswith("features.") for k in state):
            state = {
                k[len("features.") :]: v for k, v in state.items() if k.startswith("features.")
            }
        backbone = cls(extractor_id=f"vgg16-file-{path.name}")
        missing = backbone.features.load_state_dict(state, strict=False)
        if missing.missing_keys:
            raise ValueError(f"backbone weights file lacks keys: {missing.missing_keys}")
        backbone.freeze()
        return backbone

    def normalize(self, img: torch.Tensor) -> torch.Tensor:
        return (img - self.input_mean.to(img.dtype)) / self.input_std.to(img.dtype)

    def extract(self, img: torch.Tensor, taps) -> list[torch.Tensor]:
        """Run the stack once and return the requested taps in request order."""
        taps = list(taps)
        if not taps:
            raise ValueError("at least one tap name is required")
        for name in taps:
            if name not in TAP_LAYERS:
                raise ValueError(f"unknown tap {name!r}; known taps: {sorted(TAP_LAYERS)}")
        squeeze = img.dim() == 3
        if squeeze:
            img = img.unsqueeze(0)
        wanted = {TAP_LAYERS[name]: name for name in taps}
        outputs: dict[str, torch.Tensor] = {}
        h = self.normalize(img)
        last = max(wanted)
        for idx, layer in enumerate(self.features):
            h = layer(h)
            if idx in wanted:
                outputs[wanted[idx]] = h.squeeze(0) if squeeze else h
            if idx == last:
                break
        return [outputs[name] for name in taps]
