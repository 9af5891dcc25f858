"""Full-reference image quality metrics: PSNR, SSIM and an LPIPS-style distance."""
import logging
import math
from typing import Dict, Optional, Sequence

import torch
import torch.nn.functional as F

from app.errors import PreconditionError
from app.network.extractors import FeatureExtractor

logger = logging.getLogger(__name__)

PSNR_SENTINEL_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pred: torch.Tensor, target: torch.Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise PreconditionError(f"{name}: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3:
        return x.unsqueeze(0)
    return x


def psnr(pred: torch.Tensor, target: torch.Tensor, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; zero error reports the 100 dB sentinel."""
    _check_pair(pred, target, "psnr")
    mse = torch.mean((pred.double() - target.double()) ** 2).item()
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return 10.0 * math.log10(max_val ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float32, device=None) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype=dtype, device=device)


def ssim_map(pred: torch.Tensor, target: torch.Tensor, data_range: float = 1.0) -> torch.Tensor:
    """Local SSIM over valid (unpadded) 11x11 Gaussian windows, per channel."""
    _check_pair(pred, target, "ssim")
    pred, target = _as_batch(pred), _as_batch(target)
    height, width = pred.shape[-2:]
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise PreconditionError(
            f"ssim: image {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    channels = pred.shape[1]
    window = gaussian_window(dtype=pred.dtype, device=pred.device)
    window = window.expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)

    def blur(x):
        return F.conv2d(x, window, groups=channels)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_p, mu_t = blur(pred), blur(target)
    var_p = blur(pred * pred) - mu_p ** 2
    var_t = blur(target * target) - mu_t ** 2
    cov = blur(pred * target) - mu_p * mu_t
    numerator = (2 * mu_p * mu_t + c1) * (2 * cov + c2)
    denominator = (mu_p ** 2 + mu_t ** 2 + c1) * (var_p + var_t + c2)
    return numerator / denominator


def ssim_per_image(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Differentiable SSIM, one value per batch element."""
    return ssim_map(pred, target).flatten(1).mean(dim=1)


def ssim(pred: torch.Tensor, target: torch.Tensor) -> float:
    """Mean SSIM over channels, positions and batch."""
    return ssim_per_image(pred, target).mean().item()


def _normalize_channels(features: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    norm = torch.sqrt(torch.sum(features ** 2, dim=1, keepdim=True))
    return features / (norm + eps)


def lpips_per_image(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: FeatureExtractor,
    stage_weights: Optional[Dict[str, Sequence[float]]] = None,
) -> torch.Tensor:
    """Sum over stages of the channel-weighted, spatially averaged squared
    difference of unit-normalized features. Differentiable."""
    _check_pair(pred, target, "lpips")
    pred, target = _as_batch(pred), _as_batch(target)
    extractor.match(pred)
    feats_p = extractor(pred)
    feats_t = extractor(target)
    total = torch.zeros(pred.shape[0], dtype=pred.dtype, device=pred.device)
    for name, fp in feats_p.items():
        diff = (_normalize_channels(fp) - _normalize_channels(feats_t[name])) ** 2
        if stage_weights is not None and name in stage_weights:
            weights = torch.as_tensor(stage_weights[name], dtype=diff.dtype, device=diff.device)
            if any(w < 0 for w in stage_weights[name]):
                raise PreconditionError(f"lpips: negative weight for stage '{name}'")
            diff = diff * weights.view(1, -1, 1, 1)
        total = total + diff.sum(dim=1).mean(dim=(1, 2))
    return total


def lpips(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: Optional[FeatureExtractor],
    stage_weights: Optional[Dict[str, Sequence[float]]] = None,
) -> Optional[float]:
    """LPIPS-style distance, or None when no extractor is configured."""
    if extractor is None:
        return None
    with torch.no_grad():
        return lpips_per_image(pred, target, extractor, stage_weights).mean().item()
