"""Training losses: restoration, latent, total, and the candidate similarity terms.

All image losses take (batch, channels, H, W) tensors, compute a value per
image and average over the batch.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import torch
import torch.nn.functional as F

from app.errors import ConfigurationError, PreconditionError
from app.models import BrightVAEConfig, LossBreakdown, SimilarityKind
from app.network.extractors import FeatureExtractor
from app.services.metrics import ssim_per_image

logger = logging.getLogger(__name__)

EPS = 1e-8
GMS_C = 0.0026
LUMA = (0.299, 0.587, 0.114)

SOBEL_X = ((1.0, 0.0, -1.0), (2.0, 0.0, -2.0), (1.0, 0.0, -1.0))


def _check_pair(pred: torch.Tensor, target: torch.Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise PreconditionError(f"{name}: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")


def rest_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel of every channel."""
    _check_pair(pred, target, "rest_loss")
    return torch.mean((target - pred) ** 2)


def latent_loss_total(latent_global, latent_local):
    """Per-branch latent losses combine by summation."""
    return latent_global + latent_local


def ssi_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_pair(pred, target, "ssi_loss")
    return (1.0 - ssim_per_image(pred, target)).mean()


def jaccard_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Soft IoU loss with product intersection, on values clamped to [0, 1]."""
    _check_pair(pred, target, "jaccard_loss")
    p = pred.clamp(0.0, 1.0).flatten(1)
    t = target.clamp(0.0, 1.0).flatten(1)
    intersection = (p * t).sum(dim=1)
    union = p.sum(dim=1) + t.sum(dim=1) - intersection
    return (1.0 - intersection / (union + eps)).mean()


def tv_loss(pred: torch.Tensor) -> torch.Tensor:
    """Mean squared horizontal plus mean squared vertical neighbour difference."""
    zero = pred.new_zeros(())
    horizontal = ((pred[..., :, 1:] - pred[..., :, :-1]) ** 2).mean() if pred.shape[-1] > 1 else zero
    vertical = ((pred[..., 1:, :] - pred[..., :-1, :]) ** 2).mean() if pred.shape[-2] > 1 else zero
    return horizontal + vertical


def cosine_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    _check_pair(pred, target, "cosine_loss")
    cos = F.cosine_similarity(pred.flatten(1), target.flatten(1), dim=1, eps=eps)
    return (1.0 - cos).mean()


def hard_histogram(x: torch.Tensor, bins: int, eps: float = EPS) -> torch.Tensor:
    """Per-image normalized histogram over [0, 1], epsilon-smoothed."""
    flat = x.detach().flatten(1).clamp(0.0, 1.0)
    index = torch.clamp((flat * bins).long(), max=bins - 1)
    counts = torch.zeros(flat.shape[0], bins, dtype=x.dtype, device=x.device)
    counts.scatter_add_(1, index, torch.ones_like(flat))
    hist = counts / flat.shape[1] + eps
    return hist / hist.sum(dim=1, keepdim=True)


def soft_histogram(x: torch.Tensor, bins: int, eps: float = EPS) -> torch.Tensor:
    """Differentiable histogram: Gaussian kernels of bandwidth one bin width."""
    flat = x.flatten(1)
    width = 1.0 / bins
    centers = (torch.arange(bins, dtype=x.dtype, device=x.device) + 0.5) * width
    kernel = torch.exp(-0.5 * ((flat.unsqueeze(-1) - centers) / width) ** 2)
    kernel = kernel / (kernel.sum(dim=-1, keepdim=True) + eps)
    hist = kernel.mean(dim=1) + eps
    return hist / hist.sum(dim=1, keepdim=True)


def kld_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    bins: int = 256,
    soft: bool = False,
    eps: float = EPS,
) -> torch.Tensor:
    """KL(hist(target) || hist(pred)). ``soft`` selects the trainable binning."""
    _check_pair(pred, target, "kld_loss")
    histogram = soft_histogram if soft else hard_histogram
    p = histogram(pred, bins, eps)
    t = histogram(target, bins, eps)
    return torch.sum(t * (torch.log(t) - torch.log(p)), dim=1).mean()


def _grayscale(x: torch.Tensor) -> torch.Tensor:
    if x.shape[1] == 1:
        return x
    weights = torch.tensor(LUMA, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
    return (x * weights).sum(dim=1, keepdim=True)


def _gradient_magnitude(gray: torch.Tensor) -> torch.Tensor:
    kx = torch.tensor(SOBEL_X, dtype=gray.dtype, device=gray.device).view(1, 1, 3, 3)
    ky = kx.transpose(2, 3)
    padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, ky)
    return torch.sqrt(gx ** 2 + gy ** 2 + 1e-12)


def gmsd_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    c: float = GMS_C,
    pooling: str = "mean",
) -> torch.Tensor:
    """Gradient-magnitude similarity on luminance with 3x3 Sobel filters.

    ``mean`` pooling returns 1 - mean(GMS); ``std`` pooling returns the
    standard deviation of the GMS map.
    """
    _check_pair(pred, target, "gmsd_loss")
    g1 = _gradient_magnitude(_grayscale(pred))
    g2 = _gradient_magnitude(_grayscale(target))
    gms = (2.0 * g1 * g2 + c) / (g1 ** 2 + g2 ** 2 + c)
    gms = gms.flatten(1)
    if pooling == "mean":
        return (1.0 - gms.mean(dim=1)).mean()
    if pooling == "std":
        return gms.std(dim=1, unbiased=False).mean()
    raise ConfigurationError(f"unknown gmsd pooling '{pooling}'")


def perceptual_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: Optional[FeatureExtractor],
) -> torch.Tensor:
    """Mean over extractor stages of the feature-map MSE."""
    _check_pair(pred, target, "perceptual_loss")
    if extractor is None:
        raise ConfigurationError("perceptual loss requires a feature extractor")
    extractor.match(pred)
    feats_p = extractor(pred)
    feats_t = extractor(target)
    terms = [F.mse_loss(feats_p[name], feats_t[name]) for name in feats_p]
    return torch.stack(terms).mean()


def color_consistency_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Sum over channels of squared mean and variance differences."""
    _check_pair(pred, target, "color_consistency_loss")
    mu_p, mu_t = pred.mean(dim=(2, 3)), target.mean(dim=(2, 3))
    var_p = pred.var(dim=(2, 3), unbiased=False)
    var_t = target.var(dim=(2, 3), unbiased=False)
    per_image = ((mu_p - mu_t) ** 2 + (var_p - var_t) ** 2).sum(dim=1)
    return per_image.mean()


@dataclass
class LossTerms:
    """Differentiable loss components plus their weighted total."""
    rest: torch.Tensor
    latent: torch.Tensor
    similarity: torch.Tensor
    total: torch.Tensor
    kind: SimilarityKind

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            rest=float(self.rest.detach()),
            latent=float(self.latent.detach()),
            similarity=float(self.similarity.detach()),
            total=float(self.total.detach()),
            kind=self.kind,
        )

    def first_non_finite(self) -> Optional[str]:
        for name in ("rest", "latent", "similarity", "total"):
            value = float(getattr(self, name).detach())
            if not math.isfinite(value):
                return name
        return None


def total_loss(
    rest: torch.Tensor,
    latent: torch.Tensor,
    similarity: torch.Tensor,
    weights=(1.0, 0.25, 0.08),
    use_similarity: bool = True,
    kind: SimilarityKind = SimilarityKind.SSI,
) -> LossTerms:
    """Weighted sum of restoration, latent and (optionally) similarity terms."""
    lambda_rest, lambda_latent, lambda_similarity = weights
    if min(weights) < 0:
        raise ConfigurationError(f"loss weights must be non-negative, got {weights}")
    total = lambda_rest * rest + lambda_latent * latent
    if use_similarity:
        total = total + lambda_similarity * similarity
    return LossTerms(rest=rest, latent=latent, similarity=similarity, total=total, kind=SimilarityKind(kind))


class SimilarityLoss:
    """Callable selecting one similarity term by kind."""

    def __init__(
        self,
        kind: SimilarityKind,
        extractor: Optional[FeatureExtractor] = None,
        kld_bins: int = 256,
        gmsd_pooling: str = "mean",
        training: bool = True,
    ):
        self.kind = SimilarityKind(kind)
        self.extractor = extractor
        self.kld_bins = kld_bins
        self.gmsd_pooling = gmsd_pooling
        self.training = training
        if self.kind == SimilarityKind.PERCEPTUAL and extractor is None:
            raise ConfigurationError("similarity kind 'perceptual' needs an extractor (train.extractor)")
        self._fn: Dict[SimilarityKind, Callable] = {
            SimilarityKind.JACCARD: jaccard_loss,
            SimilarityKind.TV: lambda p, t: tv_loss(p),
            SimilarityKind.COSINE: cosine_loss,
            SimilarityKind.KLD: lambda p, t: kld_loss(p, t, bins=self.kld_bins, soft=self.training),
            SimilarityKind.GMSD: lambda p, t: gmsd_loss(p, t, pooling=self.gmsd_pooling),
            SimilarityKind.PERCEPTUAL: lambda p, t: perceptual_loss(p, t, self.extractor),
            SimilarityKind.COLOR: color_consistency_loss,
            SimilarityKind.SSI: ssi_loss,
        }

    def __call__(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if self.kind == SimilarityKind.NONE:
            return pred.new_zeros(())
        return self._fn[self.kind](pred, target)


class Criterion:
    """Weighted rest + latent + similarity loss bound to a model config."""

    def __init__(self, config: BrightVAEConfig, extractor: Optional[FeatureExtractor] = None):
        self.config = config
        self.weights = (config.lambda_rest, config.lambda_latent, config.lambda_similarity)
        kind = config.similarity_loss_kind if config.similarity_active else SimilarityKind.NONE
        self.similarity = SimilarityLoss(
            kind,
            extractor=extractor,
            kld_bins=config.kld_bins,
            gmsd_pooling=config.gmsd_pooling,
        )

    def __call__(self, result, target: torch.Tensor) -> LossTerms:
        pred = result.enhanced
        rest = rest_loss(pred, target)
        latent = latent_loss_total(result.latent_loss_global, result.latent_loss_local)
        similarity = self.similarity(pred, target)
        return total_loss(
            rest,
            latent,
            similarity,
            weights=self.weights,
            use_similarity=self.config.similarity_active,
            kind=self.similarity.kind,
        )
