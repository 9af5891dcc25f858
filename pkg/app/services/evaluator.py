"""Scores enhanced images against ground truth."""
import csv
import json
import logging
from pathlib import Path
from typing import Optional

import torch

from app.errors import PreconditionError
from app.models import MetricReport, MetricRow
from app.network.brightvae import BrightVAE
from app.network.extractors import FeatureExtractor
from app.services.checkpoint import Checkpoint
from app.services.dataset import DatasetSplit, write_image
from app.services.losses import tv_loss
from app.services.metrics import lpips, psnr, ssim

logger = logging.getLogger(__name__)


def model_from_checkpoint(checkpoint: Checkpoint, device: str = "cpu") -> BrightVAE:
    model = BrightVAE(checkpoint.model_config)
    model.load_state_dict(checkpoint.model_state)
    return model.to(device).eval()


def evaluate(
    model: BrightVAE,
    data: DatasetSplit,
    extractor: Optional[FeatureExtractor] = None,
    save_dir: Optional[Path] = None,
) -> MetricReport:
    """Enhance every low image of ``data`` and score it against its ground truth.

    Args:
        model: Trained network (float32 or float64).
        data: Split to evaluate; must be non-empty.
        extractor: Optional feature extractor; without one LPIPS is absent.
        save_dir: When given, enhanced images are written there as ``<id>.png``.

    Returns:
        MetricReport with one row per pair.
    """
    if len(data) == 0:
        raise PreconditionError(f"cannot evaluate empty split '{data.name}'")
    param = next(model.parameters())
    was_training = model.training
    model.eval()
    rows = []
    try:
        for pair in data:
            low = pair.low.unsqueeze(0).to(param.device, param.dtype)
            gt = pair.gt.unsqueeze(0).to(param.device, param.dtype)
            enhanced = model.enhance(low)
            rows.append(
                MetricRow(
                    id=pair.id,
                    psnr=psnr(enhanced, gt),
                    ssim=ssim(enhanced, gt),
                    lpips=lpips(enhanced, gt, extractor),
                )
            )
            if save_dir is not None:
                write_image(enhanced[0].float().cpu(), Path(save_dir) / f"{pair.id}.png")
    finally:
        model.train(was_training)
    report = MetricReport.from_rows(rows)
    logger.info(
        "Evaluation finished",
        extra={
            "split": data.name,
            "count": report.aggregate.count,
            "psnr": report.aggregate.psnr,
            "ssim": report.aggregate.ssim,
            "lpips": report.aggregate.lpips,
        },
    )
    return report


def baseline_report(data: DatasetSplit) -> MetricReport:
    """Scores of the un-enhanced low images, for before/after comparisons."""
    rows = [
        MetricRow(id=p.id, psnr=psnr(p.low, p.gt), ssim=ssim(p.low.unsqueeze(0), p.gt.unsqueeze(0)))
        for p in data
    ]
    return MetricReport.from_rows(rows)


def _cell(value: Optional[float]) -> str:
    return "-" if value is None else repr(value)


def write_report(report: MetricReport, output_dir: Path) -> dict:
    """Write ``metrics.csv`` (per image) and ``metrics.json`` (aggregate)."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = output_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "psnr", "ssim", "lpips"])
        for row in report.per_image:
            writer.writerow([row.id, repr(row.psnr), repr(row.ssim), _cell(row.lpips)])
    json_path = output_dir / "metrics.json"
    with open(json_path, "w") as f:
        json.dump({"aggregate": report.aggregate.model_dump()}, f, indent=2, sort_keys=True)
    return {"metrics_csv": str(csv_path), "metrics_json": str(json_path)}


def read_report(output_dir: Path) -> MetricReport:
    rows = []
    with open(Path(output_dir) / "metrics.csv", newline="") as f:
        for record in csv.DictReader(f):
            rows.append(
                MetricRow(
                    id=record["id"],
                    psnr=float(record["psnr"]),
                    ssim=float(record["ssim"]),
                    lpips=None if record["lpips"] == "-" else float(record["lpips"]),
                )
            )
    return MetricReport.from_rows(rows)


@torch.no_grad()
def mean_output_tv(model: BrightVAE, data: DatasetSplit) -> float:
    """Mean total-variation of the enhanced test outputs."""
    param = next(model.parameters())
    values = [
        float(tv_loss(model.enhance(p.low.unsqueeze(0).to(param.device, param.dtype))))
        for p in data
    ]
    return sum(values) / len(values)
