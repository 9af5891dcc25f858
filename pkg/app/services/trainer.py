"""Training loop: Adam with the cyclic schedule, straight-through quantizers,
epoch history and periodic checkpoints."""
import csv
import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Tuple

import torch
from torch.utils.data import DataLoader

from app.config import settings
from app.errors import ConfigurationError, PreconditionError, TrainingError
from app.models import BrightVAEConfig, EpochRecord, LossBreakdown, TrainConfig
from app.monitoring import RunMetrics
from app.network.brightvae import BrightVAE
from app.network.extractors import FeatureExtractor, build_extractor
from app.services.checkpoint import Checkpoint, save_checkpoint
from app.services.dataset import DatasetSplit, PairedImageDataset
from app.services.evaluator import evaluate
from app.services.losses import Criterion
from app.services.schedule import cyclic_lr

logger = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class Trainer:
    """Owns one model, its optimizer and the loader RNG for a training run."""

    def __init__(
        self,
        model_config: BrightVAEConfig,
        train_config: TrainConfig,
        output_dir: Optional[Path] = None,
        extractor: Optional[FeatureExtractor] = None,
    ):
        self.model_config = model_config
        self.train_config = train_config
        self.output_dir = Path(output_dir) if output_dir else None
        self.device = torch.device(train_config.device or settings.device)
        self.dtype = _DTYPES[model_config.dtype]

        self.model = BrightVAE(model_config).to(self.device)
        if extractor is None:
            extractor = build_extractor(train_config.extractor, train_config.extractor_seed)
        self.extractor = extractor
        self.criterion = Criterion(model_config, extractor)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=train_config.lr_max,
            betas=tuple(train_config.adam_betas),
            eps=train_config.adam_eps,
        )
        self.loader_generator = torch.Generator().manual_seed(train_config.seed)
        self.epoch = 0
        self.history: List[EpochRecord] = []
        metrics_path = self.output_dir / settings.metrics_filename if self.output_dir else None
        self.metrics = RunMetrics(metrics_path)

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        train_config: Optional[TrainConfig] = None,
        output_dir: Optional[Path] = None,
        extractor: Optional[FeatureExtractor] = None,
    ) -> "Trainer":
        """Rebuild a trainer that continues exactly where ``checkpoint`` stopped."""
        train_config = train_config or checkpoint.train_config
        trainer = cls(checkpoint.model_config, train_config, output_dir, extractor)
        trainer.model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            trainer.optimizer.load_state_dict(checkpoint.optimizer_state)
        if checkpoint.loader_rng_state is not None:
            trainer.loader_generator.set_state(checkpoint.loader_rng_state)
        if checkpoint.torch_rng_state is not None:
            torch.set_rng_state(checkpoint.torch_rng_state)
        trainer.epoch = checkpoint.epoch
        trainer.history = list(checkpoint.history)
        logger.info("Resumed trainer", extra={"epoch": trainer.epoch})
        return trainer

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            model_config=self.model_config,
            train_config=self.train_config,
            model_state={k: v.detach().cpu().clone() for k, v in self.model.state_dict().items()},
            epoch=self.epoch,
            optimizer_state=self.optimizer.state_dict(),
            loader_rng_state=self.loader_generator.get_state(),
            torch_rng_state=torch.get_rng_state(),
            history=list(self.history),
        )

    def _loader(self, data: DatasetSplit) -> DataLoader:
        return DataLoader(
            PairedImageDataset(data),
            batch_size=self.train_config.batch_size,
            shuffle=True,
            generator=self.loader_generator,
            num_workers=settings.loader_workers,
        )

    def train_epoch(self, loader: DataLoader) -> EpochRecord:
        self.epoch += 1
        lr = cyclic_lr(self.epoch, self.train_config)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        self.model.train()
        sums = {"rest": 0.0, "latent": 0.0, "similarity": 0.0, "total": 0.0}
        seen = 0
        kind = self.criterion.similarity.kind
        for low, gt, _ in loader:
            low = low.to(self.device, self.dtype)
            gt = gt.to(self.device, self.dtype)
            result = self.model(low)
            terms = self.criterion(result, gt)
            bad = terms.first_non_finite()
            if bad is not None:
                error = TrainingError(bad, self.epoch, float(getattr(terms, bad).detach()))
                logger.error(str(error))
                raise error

            self.optimizer.zero_grad(set_to_none=True)
            terms.total.backward()
            if self.train_config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.train_config.grad_clip)
            self.optimizer.step()

            batch = low.shape[0]
            values = terms.breakdown()
            for key in sums:
                sums[key] += getattr(values, key) * batch
            seen += batch

        losses = LossBreakdown(kind=kind, **{k: v / seen for k, v in sums.items()})
        return EpochRecord(epoch=self.epoch, lr=lr, losses=losses)

    def train(
        self,
        data: DatasetSplit,
        eval_data: Optional[DatasetSplit] = None,
    ) -> Tuple[Checkpoint, List[EpochRecord]]:
        """Train until ``train_config.epochs``; returns the final checkpoint and history."""
        if len(data) == 0:
            raise PreconditionError("training split is empty")
        if self.epoch >= self.train_config.epochs:
            logger.warning(
                f"Checkpoint already at epoch {self.epoch}; nothing to train "
                f"(epochs={self.train_config.epochs})"
            )
        loader = self._loader(data)
        cfg = self.train_config
        while self.epoch < cfg.epochs:
            started = time.perf_counter()
            record = self.train_epoch(loader)
            duration = time.perf_counter() - started
            self.history.append(record)
            self.metrics.record_epoch(record, duration, steps=len(loader))
            logger.info(
                "Epoch finished",
                extra={
                    "epoch": record.epoch,
                    "lr": record.lr,
                    "total": record.losses.total,
                    "rest": record.losses.rest,
                    "latent": record.losses.latent,
                    "similarity": record.losses.similarity,
                    "duration": duration,
                },
            )
            if self.output_dir and cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(self.checkpoint(), self.output_dir / "checkpoints" / f"epoch_{self.epoch:04d}.pt")
            if eval_data is not None and len(eval_data) and cfg.eval_every and self.epoch % cfg.eval_every == 0:
                report = evaluate(self.model, eval_data, self.extractor)
                logger.info(
                    "Validation",
                    extra={"epoch": self.epoch, "psnr": report.aggregate.psnr, "ssim": report.aggregate.ssim},
                )

        final = self.checkpoint()
        if self.output_dir:
            save_checkpoint(final, self.output_dir / "final.pt")
            write_history(self.history, self.output_dir / "history.csv")
        return final, self.history


def train(
    model_config: BrightVAEConfig,
    train_config: TrainConfig,
    data: DatasetSplit,
    output_dir: Optional[Path] = None,
    extractor: Optional[FeatureExtractor] = None,
) -> Tuple[Checkpoint, List[EpochRecord]]:
    return Trainer(model_config, train_config, output_dir, extractor).train(data)


def write_history(history: List[EpochRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "rest", "latent", "similarity", "total", "kind"])
        for r in history:
            writer.writerow([
                r.epoch, repr(r.lr), repr(r.losses.rest), repr(r.losses.latent),
                repr(r.losses.similarity), repr(r.losses.total), r.losses.kind.value,
            ])


def check_resume_compatible(checkpoint: Checkpoint, model_config: BrightVAEConfig) -> None:
    if checkpoint.model_config != model_config:
        raise ConfigurationError("model config differs from the checkpoint being resumed")


def is_finite_history(history: List[EpochRecord]) -> bool:
    return all(r.losses.is_finite() and math.isfinite(r.lr) for r in history)
