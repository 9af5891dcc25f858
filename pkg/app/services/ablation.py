"""Component-toggle grid and similarity-loss sweep.

Each row trains a fresh model with identical seeds, evaluates it on the test
split and becomes one line of a CSV with fixed column headers.
"""
import csv
import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from app.errors import ConfigurationError, PreconditionError
from app.models import AblationRow, BrightVAEConfig, SimilarityKind, TrainConfig
from app.network.extractors import FeatureExtractor, build_extractor
from app.services.dataset import DatasetSplit, write_image
from app.services.evaluator import evaluate, mean_output_tv
from app.services.trainer import Trainer

logger = logging.getLogger(__name__)

CHECK = "✓"
CROSS = "×"

COMPONENT_COLUMNS = {
    "Two Receptive Fields": "two_receptive_fields",
    "SSI Loss": "use_similarity_loss",
    "Skip Connection": "skip_connection",
    "Attencoder Module": "use_attencoder",
    "Attenquant Module": "use_attenquant",
}
COMPONENT_HEADERS = ["Configuration", *COMPONENT_COLUMNS, "PSNR", "SSIM", "LPIPS"]
LOSS_HEADERS = ["Loss Function", "PSNR", "SSIM", "LPIPS"]

LOSS_ROWS: List[Tuple[str, SimilarityKind]] = [
    ("Rest & Latent", SimilarityKind.NONE),
    ("Rest & Latent & Jaccard", SimilarityKind.JACCARD),
    ("Rest & Latent & TV", SimilarityKind.TV),
    ("Rest & Latent & Cosine Similarity", SimilarityKind.COSINE),
    ("Rest & Latent & KLD", SimilarityKind.KLD),
    ("Rest & Latent & GMSD", SimilarityKind.GMSD),
    ("Rest & Latent & Perceptual", SimilarityKind.PERCEPTUAL),
    ("Rest & Latent & Color Consistency", SimilarityKind.COLOR),
    ("Rest & Latent & Structural Similarity", SimilarityKind.SSI),
]


def component_configs(base: BrightVAEConfig) -> List[Tuple[str, Dict[str, bool], BrightVAEConfig]]:
    """The six cumulative toggle rows, from everything off to everything on."""
    order = list(COMPONENT_COLUMNS.values())
    rows = []
    for enabled in range(len(order) + 1):
        toggles = {field: i < enabled for i, field in enumerate(order)}
        config = base.model_copy(update={**toggles, "similarity_loss_kind": SimilarityKind.SSI})
        rows.append((str(enabled + 1), toggles, BrightVAEConfig.model_validate(config.model_dump())))
    return rows


def loss_configs(base: BrightVAEConfig) -> List[Tuple[str, SimilarityKind, BrightVAEConfig]]:
    """One row per similarity loss on the full architecture."""
    full = {field: True for field in COMPONENT_COLUMNS.values()}
    rows = []
    for label, kind in LOSS_ROWS:
        update = {**full, "similarity_loss_kind": kind, "use_similarity_loss": kind != SimilarityKind.NONE}
        config = BrightVAEConfig.model_validate(base.model_copy(update=update).model_dump())
        rows.append((label, kind, config))
    return rows


class AblationRunner:
    """Trains and scores every row of a grid."""

    def __init__(
        self,
        train_config: TrainConfig,
        train_split: DatasetSplit,
        test_split: DatasetSplit,
        output_dir: Optional[Path] = None,
        extractor: Optional[FeatureExtractor] = None,
    ):
        if len(train_split) == 0:
            raise PreconditionError("ablation needs a non-empty training split")
        self.train_config = train_config
        self.train_split = train_split
        if len(test_split) == 0:
            logger.warning("Test split is empty; ablation rows are scored on the training split")
            test_split = train_split
        self.test_split = test_split
        self.output_dir = Path(output_dir) if output_dir else None
        if extractor is None:
            extractor = build_extractor(train_config.extractor, train_config.extractor_seed)
        self.extractor = extractor

    def _save_samples(self, slug: str, model) -> None:
        if self.output_dir is None:
            return
        first = self.test_split.pairs[0]
        samples = self.output_dir / "samples"
        if not (samples / "low.png").exists():
            write_image(first.low, samples / "low.png")
            write_image(first.gt, samples / "gt.png")
        param = next(model.parameters())
        enhanced = model.enhance(first.low.unsqueeze(0).to(param.device, param.dtype))[0]
        write_image(enhanced.float().cpu(), samples / f"{slug}.png")

    def run_row(self, label: str, slug: str, config: BrightVAEConfig, toggles=None) -> AblationRow:
        started = time.perf_counter()
        run_dir = self.output_dir / "runs" / slug if self.output_dir else None
        trainer = Trainer(config, self.train_config, output_dir=run_dir, extractor=self.extractor)
        trainer.train(self.train_split)
        report = evaluate(trainer.model, self.test_split, self.extractor)
        self._save_samples(slug, trainer.model)
        row = AblationRow(
            label=label,
            toggles=toggles or {},
            parameters=trainer.model.parameter_count(),
            psnr=report.aggregate.psnr,
            ssim=report.aggregate.ssim,
            lpips=report.aggregate.lpips,
            output_tv=mean_output_tv(trainer.model, self.test_split),
            duration_seconds=time.perf_counter() - started,
        )
        logger.info("Ablation row finished", extra=row.model_dump())
        return row

    def components(self, base: BrightVAEConfig) -> List[AblationRow]:
        rows = []
        for label, toggles, config in component_configs(base):
            row = self.run_row(label, f"row_{label}", config, toggles)
            if rows and row.parameters < rows[-1].parameters:
                raise ConfigurationError(
                    f"row {label} has fewer parameters ({row.parameters}) than row {rows[-1].label} "
                    f"({rows[-1].parameters}); enabling a component must not shrink the model"
                )
            rows.append(row)
        return rows

    def losses(self, base: BrightVAEConfig) -> List[AblationRow]:
        rows = []
        for index, (label, kind, config) in enumerate(loss_configs(base), start=1):
            if kind == SimilarityKind.PERCEPTUAL and self.extractor is None:
                logger.warning("No feature extractor configured; skipping the perceptual row")
                rows.append(AblationRow(label=label, skipped=True))
                continue
            rows.append(self.run_row(label, f"row_{index}", config))
        return rows


def ablate_components(
    base: BrightVAEConfig,
    train_config: TrainConfig,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    output_dir: Optional[Path] = None,
    extractor: Optional[FeatureExtractor] = None,
) -> List[AblationRow]:
    runner = AblationRunner(train_config, train_split, test_split, output_dir, extractor)
    rows = runner.components(base)
    if output_dir:
        write_component_table(rows, Path(output_dir) / "components.csv")
        write_sidecar(rows, "components", base, train_config, Path(output_dir) / "components.json")
    return rows


def ablate_losses(
    base: BrightVAEConfig,
    train_config: TrainConfig,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    output_dir: Optional[Path] = None,
    extractor: Optional[FeatureExtractor] = None,
) -> List[AblationRow]:
    runner = AblationRunner(train_config, train_split, test_split, output_dir, extractor)
    rows = runner.losses(base)
    if output_dir:
        write_loss_table(rows, Path(output_dir) / "losses.csv")
        write_sidecar(rows, "losses", base, train_config, Path(output_dir) / "losses.json")
    return rows


def _cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6f}"


def write_component_table(rows: List[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(COMPONENT_HEADERS)
        for row in rows:
            marks = [CHECK if row.toggles.get(field) else CROSS for field in COMPONENT_COLUMNS.values()]
            writer.writerow([row.label, *marks, _cell(row.psnr), _cell(row.ssim), _cell(row.lpips)])


def write_loss_table(rows: List[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_HEADERS)
        for row in rows:
            writer.writerow([row.label, _cell(row.psnr), _cell(row.ssim), _cell(row.lpips)])


def write_sidecar(
    rows: List[AblationRow],
    grid: str,
    base: BrightVAEConfig,
    train_config: TrainConfig,
    path: Path,
) -> None:
    payload = {
        "grid": grid,
        "seed": {"model": base.seed, "train": train_config.seed},
        "config_hash": base.config_hash(),
        "train_config_hash": train_config.config_hash(),
        "duration_seconds": sum(r.duration_seconds for r in rows),
        "rows": [r.model_dump(mode="json") for r in rows],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
