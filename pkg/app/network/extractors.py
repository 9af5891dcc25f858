"""Feature extractors with named stages for perceptual loss and LPIPS."""
import logging
from collections import OrderedDict
from typing import Dict, Optional

import torch
from torch import nn

from app.errors import ConfigurationError
from app.models import ExtractorKind

logger = logging.getLogger(__name__)


class FeatureExtractor(nn.Module):
    """Frozen convolutional network returning ``{stage_name: feature_map}``."""

    stage_names: tuple = ()

    def freeze(self) -> "FeatureExtractor":
        for param in self.parameters():
            param.requires_grad_(False)
        return self.eval()

    def match(self, reference: torch.Tensor) -> "FeatureExtractor":
        param = next(self.parameters(), None)
        if param is not None and (param.dtype != reference.dtype or param.device != reference.device):
            self.to(dtype=reference.dtype, device=reference.device)
        return self


class RandomConvExtractor(FeatureExtractor):
    """Seeded random-weight conv stack; network-free stand-in for a pretrained backbone."""

    stage_names = ("conv1", "conv2", "conv3")

    def __init__(self, seed: int = 0, widths=(16, 32, 64)):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        in_channels = 3
        stages = []
        for i, width in enumerate(widths):
            conv = nn.Conv2d(in_channels, width, kernel_size=3, stride=1 if i == 0 else 2, padding=1)
            with torch.no_grad():
                fan_in = in_channels * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            stages.append(nn.Sequential(conv, nn.ReLU()))
            in_channels = width
        self.stages = nn.ModuleList(stages)
        self.freeze()

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = x * 2.0 - 1.0
        features = OrderedDict()
        for name, stage in zip(self.stage_names, self.stages):
            h = stage(h)
            features[name] = h
        return features


class VGG16Extractor(FeatureExtractor):
    """ImageNet-pretrained VGG16 cut at relu1_2, relu2_2, relu3_3 and relu4_3."""

    stage_names = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")
    _cuts = (4, 9, 16, 23)

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16

            features = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        except Exception as e:
            logger.error(f"Could not load pretrained VGG16: {e}")
            raise ConfigurationError(f"vgg16 extractor unavailable: {e}") from e

        slices = []
        start = 0
        for cut in self._cuts:
            slices.append(nn.Sequential(*list(features)[start:cut]))
            start = cut
        self.slices = nn.ModuleList(slices)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        h = (x - self.mean) / self.std
        features = OrderedDict()
        for name, block in zip(self.stage_names, self.slices):
            h = block(h)
            features[name] = h
        return features


def build_extractor(kind: ExtractorKind, seed: int = 0) -> Optional[FeatureExtractor]:
    """Instantiate the configured extractor; ``none`` yields None."""
    kind = ExtractorKind(kind)
    if kind == ExtractorKind.NONE:
        return None
    if kind == ExtractorKind.RANDOM:
        return RandomConvExtractor(seed=seed)
    return VGG16Extractor()
