"""Branch-specific decoder with encoder skip fusion."""
import torch
import torch.nn.functional as F
from torch import nn

from app.errors import ConfigurationError
from app.models import Branch
from app.network.blocks import ConvResBlock, check_channels


class Decoder(nn.Module):
    """1x1 skip fusion -> 3x3 conv -> ConvResBlock x2 -> ReLU -> transposed convs.

    The global decoder upsamples x2 (1/8 -> 1/4 of the image) and keeps C
    channels. The local decoder upsamples x4 to full resolution and emits 3
    linear channels.
    """

    def __init__(self, branch: Branch, in_channels: int, channels: int, skip_channels: int = None):
        super().__init__()
        self.branch = Branch(branch)
        self.in_channels = in_channels
        self.skip_channels = channels if skip_channels is None else skip_channels
        self.fuse = nn.Conv2d(in_channels + self.skip_channels, channels, kernel_size=1)
        self.initial = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.res1 = ConvResBlock(channels)
        self.res2 = ConvResBlock(channels)
        if self.branch == Branch.GLOBAL:
            self.upsample = nn.Sequential(
                nn.ConvTranspose2d(channels, channels, kernel_size=4, stride=2, padding=1),
            )
            self.out_channels = channels
        else:
            self.upsample = nn.Sequential(
                nn.ConvTranspose2d(channels, channels, kernel_size=4, stride=2, padding=1),
                nn.ReLU(),
                nn.ConvTranspose2d(channels, 3, kernel_size=4, stride=2, padding=1),
            )
            self.out_channels = 3

    def forward(self, z: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        check_channels(z, self.in_channels, f"Decoder[{self.branch.value}] input")
        check_channels(skip, self.skip_channels, f"Decoder[{self.branch.value}] skip")
        if z.shape[0] != skip.shape[0] or z.shape[-2:] != skip.shape[-2:]:
            raise ConfigurationError(
                f"Decoder[{self.branch.value}]: input {tuple(z.shape)} and skip "
                f"{tuple(skip.shape)} differ in batch or spatial size"
            )
        h = self.fuse(torch.cat([z, skip], dim=1))
        h = F.relu(self.res2(self.res1(self.initial(h))))
        return self.upsample(h)
