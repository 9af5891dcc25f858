"""Per-run prometheus registry, exported as a node-exporter textfile."""
import logging
from pathlib import Path
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from app.config import settings

logger = logging.getLogger(__name__)


class RunMetrics:
    """Training and evaluation telemetry for a single run."""

    def __init__(self, output_path: Optional[Path] = None):
        self.registry = CollectorRegistry()
        self.output_path = Path(output_path) if output_path else None

        self.epochs = Counter(
            "brightvae_epochs", "Completed training epochs", registry=self.registry
        )
        self.steps = Counter(
            "brightvae_optimizer_steps", "Optimizer steps taken", registry=self.registry
        )
        self.loss = Gauge(
            "brightvae_loss", "Mean loss of the last epoch", ["term"], registry=self.registry
        )
        self.learning_rate = Gauge(
            "brightvae_learning_rate", "Learning rate of the last epoch", registry=self.registry
        )
        self.eval_metric = Gauge(
            "brightvae_eval_metric", "Aggregate evaluation metric", ["metric"], registry=self.registry
        )
        self.epoch_duration = Histogram(
            "brightvae_epoch_duration_seconds", "Wall time per training epoch", registry=self.registry
        )

    def record_epoch(self, record, duration: float, steps: int) -> None:
        self.epochs.inc()
        self.steps.inc(steps)
        self.learning_rate.set(record.lr)
        for term in ("rest", "latent", "similarity", "total"):
            self.loss.labels(term=term).set(getattr(record.losses, term))
        self.epoch_duration.observe(duration)
        self.flush()

    def record_report(self, report) -> None:
        aggregate = report.aggregate
        self.eval_metric.labels(metric="psnr").set(aggregate.psnr)
        self.eval_metric.labels(metric="ssim").set(aggregate.ssim)
        if aggregate.lpips is not None:
            self.eval_metric.labels(metric="lpips").set(aggregate.lpips)
        self.flush()

    def flush(self) -> None:
        if not settings.enable_metrics or self.output_path is None:
            return
        try:
            self.output_path.parent.mkdir(parents=True, exist_ok=True)
            write_to_textfile(str(self.output_path), self.registry)
        except OSError as e:
            logger.warning(f"Could not write metrics textfile: {e}")
