import hashlib
import json
import math
from datetime import datetime, timezone
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class SimilarityKind(str, Enum):
    """Similarity-loss identifiers accepted in configs and on the CLI."""
    NONE = "none"
    JACCARD = "jaccard"
    TV = "tv"
    COSINE = "cosine"
    KLD = "kld"
    GMSD = "gmsd"
    PERCEPTUAL = "perceptual"
    COLOR = "color"
    SSI = "ssi"


class ExtractorKind(str, Enum):
    """Feature extractors available to the perceptual loss and LPIPS."""
    NONE = "none"
    RANDOM = "random"
    VGG16 = "vgg16"


class Branch(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"


class StrictModel(BaseModel):
    """Base for config schemas: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class BrightVAEConfig(StrictModel):
    """Architectural and loss hyperparameters of the enhancement network."""

    channels: int = Field(default=128, ge=1, description="Feature width C shared by both branches")
    codebook_size: int = Field(default=512, description="Number of codebook entries K")
    embedding_dim: Optional[int] = Field(default=None, description="Codebook dimension D; must equal channels")
    heads: int = Field(default=8, ge=1)
    attention_hidden: Optional[int] = Field(default=None, description="Quantizer projection width D_h (default 2D)")
    leaky_slope: float = Field(default=0.01, gt=0.0, lt=1.0)
    beta: float = Field(default=0.25, gt=0.0)

    lambda_rest: float = Field(default=1.0, ge=0.0)
    lambda_latent: float = Field(default=0.25, ge=0.0)
    lambda_similarity: float = Field(default=0.08, ge=0.0)
    similarity_loss_kind: SimilarityKind = SimilarityKind.SSI
    kld_bins: int = Field(default=256, ge=2)
    gmsd_pooling: str = Field(default="mean", pattern="^(mean|std)$")

    two_receptive_fields: bool = True
    skip_connection: bool = True
    use_attencoder: bool = True
    use_attenquant: bool = True
    use_similarity_loss: bool = True

    dtype: str = Field(default="float32", pattern="^(float32|float64)$")
    seed: int = 0

    @field_validator("codebook_size")
    @classmethod
    def _positive_codebook(cls, value: int) -> int:
        if value < 1:
            raise ValueError("codebook_size must be >= 1")
        return value

    @model_validator(mode="after")
    def _check_widths(self) -> "BrightVAEConfig":
        if self.embedding_dim is not None and self.embedding_dim != self.channels:
            raise ValueError(
                f"embedding_dim ({self.embedding_dim}) must equal channels ({self.channels})"
            )
        if self.use_attencoder and self.channels % self.heads != 0:
            raise ValueError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.attention_hidden is not None and self.attention_hidden <= self.dim:
            raise ValueError("attention_hidden must exceed the embedding dimension")
        return self

    @property
    def dim(self) -> int:
        return self.channels

    @property
    def hidden(self) -> int:
        return self.attention_hidden or 2 * self.dim

    @property
    def similarity_active(self) -> bool:
        return self.use_similarity_loss and self.similarity_loss_kind != SimilarityKind.NONE


class TrainConfig(StrictModel):
    """Optimization schedule and run cadence."""

    epochs: int = Field(default=1000, ge=1)
    batch_size: int = Field(default=5, ge=1)
    lr_max: float = Field(default=3e-4, gt=0.0)
    lr_min: float = Field(default=3e-5, gt=0.0)
    warmup_epochs: int = Field(default=5, ge=0)
    cycle_epochs: int = Field(default=50, ge=2)
    adam_betas: List[float] = Field(default_factory=lambda: [0.9, 0.999], min_length=2, max_length=2)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    grad_clip: Optional[float] = Field(default=None, gt=0.0)
    seed: int = 0
    checkpoint_every: int = Field(default=50, ge=0)
    eval_every: int = Field(default=0, ge=0)
    device: Optional[str] = None
    extractor: ExtractorKind = ExtractorKind.NONE
    extractor_seed: int = 0

    @model_validator(mode="after")
    def _check_lr(self) -> "TrainConfig":
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        return self


class RunConfig(StrictModel):
    """Root of a YAML run config file."""
    model: BrightVAEConfig = Field(default_factory=BrightVAEConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


class LossBreakdown(BaseModel):
    """Detached per-term loss values."""
    rest: float
    latent: float
    similarity: float
    total: float
    kind: SimilarityKind

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.rest, self.latent, self.similarity, self.total))


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    losses: LossBreakdown


class MetricRow(BaseModel):
    id: str
    psnr: float
    ssim: float
    lpips: Optional[float] = None


class MetricAggregate(BaseModel):
    psnr: float
    ssim: float
    lpips: Optional[float] = None
    count: int


class MetricReport(BaseModel):
    """Per-image and aggregate PSNR/SSIM/LPIPS."""
    per_image: List[MetricRow]
    aggregate: MetricAggregate

    @classmethod
    def from_rows(cls, rows: List[MetricRow]) -> "MetricReport":
        count = len(rows)
        if count == 0:
            raise ValueError("MetricReport needs at least one row")
        lpips_values = [r.lpips for r in rows]
        lpips_mean = None
        if all(v is not None for v in lpips_values):
            lpips_mean = math.fsum(lpips_values) / count
        return cls(
            per_image=rows,
            aggregate=MetricAggregate(
                psnr=math.fsum(r.psnr for r in rows) / count,
                ssim=math.fsum(r.ssim for r in rows) / count,
                lpips=lpips_mean,
                count=count,
            ),
        )


class AblationRow(BaseModel):
    label: str
    toggles: Dict[str, bool] = Field(default_factory=dict)
    parameters: Optional[int] = None
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    lpips: Optional[float] = None
    output_tv: Optional[float] = None
    skipped: bool = False
    duration_seconds: float = 0.0


class RunManifest(BaseModel):
    """Written alongside the outputs of every CLI command."""
    command: str
    status: str = "running"
    config: Dict = Field(default_factory=dict)
    config_hash: Optional[str] = None
    seed: Optional[int] = None
    started_at: datetime = Field(default_factory=_utcnow)
    finished_at: Optional[datetime] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    arguments: Dict[str, Optional[str]] = Field(default_factory=dict)
    error: Optional[str] = None
