"""Attention-weighted vector quantization.

Each spatial feature vector ``v`` gets per-dimension weights
``w = softmax(down(LeakyReLU(up(v))))`` and is snapped to the codebook row
minimizing ``sum_d w_d (v_d - e_d)^2``. The latent loss uses plain squared
Euclidean norms:

    ||sg[v] - e||^2 + beta * ||v - sg[e]||^2

averaged over vectors. Gradients reach the encoder through a straight-through
copy; the codebook learns only from the first latent term.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from app.errors import ConfigurationError, NumericError
from app.network.blocks import check_channels

logger = logging.getLogger(__name__)

# Upper bound on elements materialized per distance chunk (vectors x entries x dims).
DISTANCE_CHUNK_ELEMENTS = 1 << 24


@dataclass
class QuantizeResult:
    quantized: torch.Tensor
    indices: torch.Tensor
    latent_loss: torch.Tensor
    weights: Optional[torch.Tensor] = None


@dataclass
class FrozenCodes:
    indices: torch.Tensor
    residual: torch.Tensor


class _StraightThrough(torch.autograd.Function):
    """Returns the codebook vectors unchanged; passes the gradient to z_e."""

    @staticmethod
    def forward(ctx, z_e, quantized):
        return quantized.clone()

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


class AttentionProjection(nn.Module):
    """D -> D_h -> D projection whose softmax gives per-dimension weights."""

    def __init__(self, dim: int, hidden: int, leaky_slope: float = 0.01):
        super().__init__()
        if hidden <= dim:
            raise ConfigurationError(f"hidden width ({hidden}) must exceed dim ({dim})")
        self.up = nn.Linear(dim, hidden)
        self.down = nn.Linear(hidden, dim)
        self.activation = nn.LeakyReLU(leaky_slope)

    def scores(self, v: torch.Tensor) -> torch.Tensor:
        return self.down(self.activation(self.up(v)))

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return attention_weights(v, self)


def attention_weights(v: torch.Tensor, projection: AttentionProjection) -> torch.Tensor:
    """Softmax-normalized weights over the last dimension of ``v``."""
    if not torch.isfinite(v).all():
        raise NumericError("attention_weights received non-finite feature values")
    return torch.softmax(projection.scores(v), dim=-1)


def weighted_distance(v: torch.Tensor, w: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """``sum_d w_d (v_d - e_d)^2`` over the last dimension."""
    return (w * (v - e) ** 2).sum(dim=-1)


def nearest_codes(
    vectors: torch.Tensor,
    codebook: torch.Tensor,
    weights: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Index of the closest codebook row for every vector.

    Distances are evaluated directly (no expansion of the square), chunked
    over vectors. Ties resolve to the smallest index.
    """
    count, dim = vectors.shape
    entries = codebook.shape[0]
    chunk = max(1, DISTANCE_CHUNK_ELEMENTS // max(1, entries * dim))
    indices = torch.empty(count, dtype=torch.long, device=vectors.device)
    for start in range(0, count, chunk):
        v = vectors[start:start + chunk, None, :]
        if weights is None:
            distances = ((v - codebook[None]) ** 2).sum(dim=-1)
        else:
            distances = weighted_distance(v, weights[start:start + chunk, None, :], codebook[None])
        indices[start:start + chunk] = torch.argmin(distances, dim=1)
    return indices


class AttenQuantizer(nn.Module):
    """Codebook lookup with optional attention-weighted index selection."""

    def __init__(
        self,
        dim: int,
        codebook_size: int,
        beta: float = 0.25,
        use_attention: bool = True,
        hidden: Optional[int] = None,
        leaky_slope: float = 0.01,
    ):
        super().__init__()
        if codebook_size < 1:
            raise ConfigurationError("codebook must have at least one entry")
        self.dim = dim
        self.codebook_size = codebook_size
        self.beta = beta
        self.codebook = nn.Embedding(codebook_size, dim)
        self.projection = (
            AttentionProjection(dim, hidden or 2 * dim, leaky_slope) if use_attention else None
        )
        self._frozen: Optional[FrozenCodes] = None
        self.reset_codebook()

    def reset_codebook(self) -> None:
        bound = 1.0 / self.codebook_size
        with torch.no_grad():
            self.codebook.weight.uniform_(-bound, bound)

    @property
    def uses_attention(self) -> bool:
        return self.projection is not None

    def freeze(self, codes: FrozenCodes) -> None:
        self._frozen = codes

    def unfreeze(self) -> None:
        self._frozen = None

    def select(self, flat: torch.Tensor):
        """Per-vector weights (or None) and selected indices, without gradients."""
        with torch.no_grad():
            weights = attention_weights(flat, self.projection) if self.uses_attention else None
            indices = nearest_codes(flat, self.codebook.weight, weights)
        return weights, indices

    def forward(self, z_e: torch.Tensor) -> QuantizeResult:
        check_channels(z_e, self.dim, "AttenQuantizer")
        if not torch.isfinite(z_e).all():
            raise NumericError("AttenQuantizer received non-finite encoder output")
        batch, dim, height, width = z_e.shape
        flat = z_e.permute(0, 2, 3, 1).reshape(-1, dim)

        weights = None
        if self._frozen is not None:
            indices = self._frozen.indices.reshape(-1)
            codes = self.codebook.weight[indices]
            out = flat + self._frozen.residual
        else:
            weights, indices = self.select(flat.detach())
            codes = self.codebook.weight[indices]
            out = _StraightThrough.apply(flat, codes.detach())

        codebook_term = ((flat.detach() - codes) ** 2).sum(dim=-1).mean()
        commitment_term = ((flat - codes.detach()) ** 2).sum(dim=-1).mean()
        latent = codebook_term + self.beta * commitment_term

        quantized = out.view(batch, height, width, dim).permute(0, 3, 1, 2).contiguous()
        if weights is not None:
            weights = weights.view(batch, height, width, dim)
        return QuantizeResult(
            quantized=quantized,
            indices=indices.view(batch, height, width),
            latent_loss=latent,
            weights=weights,
        )

    def residual(self, z_e: torch.Tensor) -> FrozenCodes:
        """Indices and ``e - z_e`` at ``z_e``, for straight-through linearization."""
        flat = z_e.detach().permute(0, 2, 3, 1).reshape(-1, self.dim)
        _, indices = self.select(flat)
        codes = self.codebook.weight.detach()[indices]
        return FrozenCodes(indices=indices, residual=codes - flat)
