"""Attention-augmented encoder, one instance per receptive-field branch."""
import torch
import torch.nn.functional as F
from torch import nn

from app.models import Branch
from app.network.blocks import ConvResBlock, InitialBlock, SpatialSelfAttention


class Attencoder(nn.Module):
    """initial block -> ConvResBlock x2 -> ReLU -> multi-head self-attention.

    The local branch maps an RGB image to 1/4 resolution; the global branch
    maps the local output to a further 1/2 (1/8 of the image).
    """

    def __init__(self, branch: Branch, channels: int, heads: int, use_attention: bool = True):
        super().__init__()
        self.branch = Branch(branch)
        self.initial = InitialBlock(self.branch, channels)
        self.res1 = ConvResBlock(channels)
        self.res2 = ConvResBlock(channels)
        self.attn = SpatialSelfAttention(channels, heads) if use_attention else nn.Identity()

    @property
    def stride(self) -> int:
        return self.initial.stride

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.initial(x)
        h = F.relu(self.res2(self.res1(h)))
        return self.attn(h)
