"""Reusable convolution and attention blocks for the encoders and decoders.

Every tensor flowing through these blocks is a 4-D feature map laid out as
(batch, channels, height, width).
"""
import logging
import math

import torch
import torch.nn.functional as F
from torch import nn

from app.errors import ConfigurationError, PreconditionError
from app.models import Branch

logger = logging.getLogger(__name__)


def check_channels(x: torch.Tensor, expected: int, where: str) -> None:
    if x.dim() != 4:
        raise ConfigurationError(f"{where}: expected a 4-D feature map, got shape {tuple(x.shape)}")
    if x.shape[1] != expected:
        raise ConfigurationError(f"{where}: expected {expected} channels, got {x.shape[1]}")


def check_divisible(x: torch.Tensor, factor: int, where: str) -> None:
    height, width = x.shape[-2:]
    if height % factor or width % factor:
        raise PreconditionError(
            f"{where}: spatial dims {height}x{width} must be divisible by {factor}"
        )


class ConvResBlock(nn.Module):
    """Residual block ``x + conv1x1(relu(conv3x3(relu(x))))`` without normalization."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv3 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=1)

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv1(F.relu(self.conv3(F.relu(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.channels, "ConvResBlock")
        return x + self.residual(x)


class InitialBlock(nn.Module):
    """Branch-specific entry convolutions.

    The local branch reads the RGB image through three 3x3 convolutions
    (strides 2, 2, 1), each followed by ReLU. The global branch reads the
    local encoder output through two 3x3 convolutions (strides 2, 1) with a
    single ReLU between them.
    """

    def __init__(self, branch: Branch, channels: int, in_channels: int = None):
        super().__init__()
        self.branch = Branch(branch)
        self.channels = channels
        if self.branch == Branch.LOCAL:
            self.in_channels = in_channels or 3
            self.layers = nn.Sequential(
                nn.Conv2d(self.in_channels, channels, 3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(channels, channels, 3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(channels, channels, 3, stride=1, padding=1),
                nn.ReLU(),
            )
            self.stride = 4
        else:
            self.in_channels = in_channels or channels
            self.layers = nn.Sequential(
                nn.Conv2d(self.in_channels, channels, 3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            )
            self.stride = 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.in_channels, f"InitialBlock[{self.branch.value}]")
        check_divisible(x, self.stride, f"InitialBlock[{self.branch.value}]")
        return self.layers(x)


class SpatialSelfAttention(nn.Module):
    """Multi-head self-attention over the H*W positions of a feature map.

    No positional encoding is added. The block is residual: the attention
    output is added back to its input.
    """

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if heads < 1 or channels % heads != 0:
            raise ConfigurationError(f"channels ({channels}) must be divisible by heads ({heads})")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        self.query = nn.Linear(channels, channels)
        self.key = nn.Linear(channels, channels)
        self.value = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)

    def _split_heads(self, tokens: torch.Tensor) -> torch.Tensor:
        batch, length, _ = tokens.shape
        return tokens.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

    def _tokens(self, x: torch.Tensor) -> torch.Tensor:
        return x.flatten(2).transpose(1, 2)

    def attention_map(self, x: torch.Tensor) -> torch.Tensor:
        """Explicit (batch, heads, H*W, H*W) attention probabilities."""
        check_channels(x, self.channels, "SpatialSelfAttention")
        tokens = self._tokens(x)
        q = self._split_heads(self.query(tokens))
        k = self._split_heads(self.key(tokens))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_channels(x, self.channels, "SpatialSelfAttention")
        batch, channels, height, width = x.shape
        tokens = self._tokens(x)
        q = self._split_heads(self.query(tokens))
        k = self._split_heads(self.key(tokens))
        v = self._split_heads(self.value(tokens))
        attended = F.scaled_dot_product_attention(q, k, v)
        attended = attended.transpose(1, 2).reshape(batch, height * width, channels)
        out = self.out(attended).transpose(1, 2).reshape(batch, channels, height, width)
        return x + out


def init_weights(module: nn.Module) -> None:
    """He fan-in initialization for convolutions, zero biases."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
