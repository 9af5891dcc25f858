"""Two-branch hierarchical VQ autoencoder for low-light enhancement.

Data flow with both receptive fields enabled (resolutions relative to the
input image):

    f_loc  = local Attencoder(x)                          1/4
    f_glob = global Attencoder(f_loc)                     1/8
    zq_g   = global quantizer(f_glob)
    d_glob = global decoder(zq_g, skip=f_glob)            1/4
    f_mix  = 1x1 conv(f_loc ++ d_glob); zq_l = local quantizer(f_mix)
    out    = local decoder(zq_l ++ d_glob, skip=f_loc)    1/1
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

import torch
from torch import nn

from app.errors import PreconditionError
from app.models import Branch, BrightVAEConfig
from app.network.attencoder import Attencoder
from app.network.attenquant import AttenQuantizer
from app.network.blocks import init_weights
from app.network.decoder import Decoder

logger = logging.getLogger(__name__)

IMAGE_STRIDE = 8


@dataclass
class ForwardResult:
    enhanced: torch.Tensor
    latent_loss_global: torch.Tensor
    latent_loss_local: torch.Tensor
    indices_global: Optional[torch.Tensor]
    indices_local: torch.Tensor


def validate_image(x: torch.Tensor) -> None:
    """Raise PreconditionError unless ``x`` is a (batch, 3, H, W) image in [0, 1]."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise PreconditionError(f"expected an image batch of shape (B, 3, H, W), got {tuple(x.shape)}")
    height, width = x.shape[-2:]
    if height % IMAGE_STRIDE or width % IMAGE_STRIDE:
        raise PreconditionError(
            f"image size {height}x{width} must be divisible by {IMAGE_STRIDE}"
        )
    if x.numel() and (x.min() < 0 or x.max() > 1):
        raise PreconditionError("image values must lie in [0, 1]")


class BrightVAE(nn.Module):
    """Local/global Attencoders, Attenquants and Decoders with skip fusion."""

    def __init__(self, config: BrightVAEConfig):
        super().__init__()
        self.config = config
        channels = config.channels

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder_local = Attencoder(
                Branch.LOCAL, channels, config.heads, use_attention=config.use_attencoder
            )
            self.quantizer_local = self._quantizer()
            if config.two_receptive_fields:
                self.encoder_global = Attencoder(
                    Branch.GLOBAL, channels, config.heads, use_attention=config.use_attencoder
                )
                self.quantizer_global = self._quantizer()
                self.decoder_global = Decoder(Branch.GLOBAL, in_channels=channels, channels=channels)
                self.mix = nn.Conv2d(2 * channels, channels, kernel_size=1)
                self.decoder_local = Decoder(Branch.LOCAL, in_channels=2 * channels, channels=channels)
            else:
                self.decoder_local = Decoder(Branch.LOCAL, in_channels=channels, channels=channels)
            self.apply(init_weights)
            for quantizer in self.quantizers():
                quantizer.reset_codebook()

        if config.dtype == "float64":
            self.double()
        logger.info(
            "BrightVAE built",
            extra={"parameters": self.parameter_count(), "two_receptive_fields": config.two_receptive_fields},
        )

    def _quantizer(self) -> AttenQuantizer:
        cfg = self.config
        return AttenQuantizer(
            dim=cfg.dim,
            codebook_size=cfg.codebook_size,
            beta=cfg.beta,
            use_attention=cfg.use_attenquant,
            hidden=cfg.hidden,
            leaky_slope=cfg.leaky_slope,
        )

    def quantizers(self):
        if self.config.two_receptive_fields:
            return [self.quantizer_global, self.quantizer_local]
        return [self.quantizer_local]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def _skip(self, features: torch.Tensor) -> torch.Tensor:
        return features if self.config.skip_connection else torch.zeros_like(features)

    def forward(self, x: torch.Tensor) -> ForwardResult:
        validate_image(x)
        f_loc = self.encoder_local(x)

        if self.config.two_receptive_fields:
            f_glob = self.encoder_global(f_loc)
            global_q = self.quantizer_global(f_glob)
            d_glob = self.decoder_global(global_q.quantized, self._skip(f_glob))
            f_mix = self.mix(torch.cat([f_loc, d_glob], dim=1))
            local_q = self.quantizer_local(f_mix)
            z_local = torch.cat([local_q.quantized, d_glob], dim=1)
            latent_global = global_q.latent_loss
            indices_global = global_q.indices
        else:
            local_q = self.quantizer_local(f_loc)
            z_local = local_q.quantized
            latent_global = torch.zeros((), dtype=x.dtype, device=x.device)
            indices_global = None

        enhanced = self.decoder_local(z_local, self._skip(f_loc))
        return ForwardResult(
            enhanced=enhanced,
            latent_loss_global=latent_global,
            latent_loss_local=local_q.latent_loss,
            indices_global=indices_global,
            indices_local=local_q.indices,
        )

    @torch.no_grad()
    def enhance(self, x: torch.Tensor) -> torch.Tensor:
        """Inference entry point: forward pass clamped to [0, 1]."""
        return self.forward(x).enhanced.clamp(0.0, 1.0)

    @contextmanager
    def frozen_codes(self, x: torch.Tensor) -> Iterator["BrightVAE"]:
        """Pin every quantizer to the codes selected for ``x``.

        While active, each quantizer outputs ``z_e + (e - z_e)|_x``: the same
        value at ``x``, differentiable exactly the way the straight-through
        estimator assumes. Used for finite-difference gradient checks.
        """
        captured = {}
        handles = []
        for name, quantizer in (("global", getattr(self, "quantizer_global", None)),
                                ("local", self.quantizer_local)):
            if quantizer is None:
                continue

            def hook(module, inputs, _name=name):
                captured[_name] = module.residual(inputs[0])

            handles.append(quantizer.register_forward_pre_hook(hook))
        try:
            with torch.no_grad():
                self.forward(x)
        finally:
            for handle in handles:
                handle.remove()

        if self.config.two_receptive_fields:
            self.quantizer_global.freeze(captured["global"])
        self.quantizer_local.freeze(captured["local"])
        try:
            yield self
        finally:
            for quantizer in self.quantizers():
                quantizer.unfreeze()


def parameter_count(config: BrightVAEConfig) -> int:
    """Trainable scalar parameters of the network built from ``config``."""
    return BrightVAE(config).parameter_count()
