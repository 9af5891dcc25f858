"""Plots derived from run directories.

Reports never recompute metrics: they read the CSV/JSON artifacts a run wrote
and the images it saved, so a plot always agrees with its table.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from app.config import settings  # noqa: E402
from app.errors import DatasetError, PreconditionError  # noqa: E402
from app.models import RunManifest  # noqa: E402
from app.services.dataset import read_image, to_uint8  # noqa: E402
from app.services.evaluator import read_report  # noqa: E402

logger = logging.getLogger(__name__)


def find_runs(root: Path) -> List[Path]:
    """``root`` itself if it holds a manifest, else its immediate run subdirectories."""
    root = Path(root)
    if not root.is_dir():
        raise PreconditionError(f"runs directory '{root}' does not exist")
    if (root / settings.manifest_filename).is_file():
        return [root]
    runs = sorted(p for p in root.iterdir() if (p / settings.manifest_filename).is_file())
    if not runs:
        raise PreconditionError(f"no run manifests found under '{root}'")
    return runs


def read_manifest(run_dir: Path) -> RunManifest:
    with open(Path(run_dir) / settings.manifest_filename, encoding="utf-8") as f:
        return RunManifest.model_validate_json(f.read())


def _show(ax, image, title: str) -> None:
    ax.imshow(to_uint8(image))
    ax.set_title(title, fontsize=9)
    ax.axis("off")


def plot_triptych(low, enhanced, gt, path: Path, title: str = "") -> Path:
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.3))
    for ax, image, label in zip(axes, (low, enhanced, gt), ("Low light", "Enhanced", "Ground truth")):
        _show(ax, image, label)
    if title:
        fig.suptitle(title, fontsize=10)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_metric_bars(labels: List[str], values: Dict[str, List], path: Path, title: str) -> Path:
    """One panel per metric; ``None`` values are drawn as gaps."""
    metrics = [m for m, v in values.items() if any(x is not None for x in v)]
    fig, axes = plt.subplots(1, len(metrics), figsize=(max(4, 0.6 * len(labels)) * len(metrics), 4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        heights = [0.0 if v is None else v for v in values[metric]]
        ax.bar(range(len(labels)), heights, color="tab:blue")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_title(metric.upper())
        ax.grid(True, axis="y", alpha=0.3)
    fig.suptitle(title)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history_csv: Path, path: Path) -> Path:
    with open(history_csv, newline="") as f:
        records = list(csv.DictReader(f))
    epochs = [int(r["epoch"]) for r in records]
    plt.figure(figsize=(8, 5))
    for term in ("total", "rest", "latent", "similarity"):
        plt.plot(epochs, [float(r[term]) for r in records], label=term)
    plt.xlabel("Epoch")
    plt.ylabel("Loss")
    plt.yscale("log")
    plt.grid(True, alpha=0.3)
    plt.legend()
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close()
    return path


def report_eval_run(run_dir: Path, manifest: RunManifest, out_dir: Path) -> Dict[str, str]:
    """One triptych per evaluated image plus a per-image metric chart."""
    data_root = manifest.arguments.get("data")
    split = manifest.arguments.get("split") or "test"
    if not data_root:
        raise PreconditionError(f"eval manifest in '{run_dir}' does not record its data directory")
    report = read_report(run_dir)
    artifacts = {}
    for row in report.per_image:
        enhanced_path = run_dir / "enhanced" / f"{row.id}.png"
        low_path = Path(data_root) / split / "low" / f"{row.id}.png"
        gt_path = Path(data_root) / split / "gt" / f"{row.id}.png"
        missing = [str(p) for p in (enhanced_path, low_path, gt_path) if not p.is_file()]
        if missing:
            raise DatasetError(f"cannot build triptych for '{row.id}': missing {', '.join(missing)}")
        title = f"{row.id}  PSNR {row.psnr:.2f} dB  SSIM {row.ssim:.3f}"
        target = plot_triptych(read_image(low_path), read_image(enhanced_path), read_image(gt_path),
                               out_dir / "triptychs" / f"{row.id}.png", title)
        artifacts[f"triptych_{row.id}"] = str(target)
    labels = [r.id for r in report.per_image]
    values = {
        "psnr": [r.psnr for r in report.per_image],
        "ssim": [r.ssim for r in report.per_image],
        "lpips": [r.lpips for r in report.per_image],
    }
    artifacts["metrics_chart"] = str(plot_metric_bars(labels, values, out_dir / "metrics.png", run_dir.name))
    return artifacts


def report_train_run(run_dir: Path, out_dir: Path) -> Dict[str, str]:
    history = run_dir / "history.csv"
    if not history.is_file():
        raise PreconditionError(f"training run '{run_dir}' has no history.csv")
    return {"loss_curve": str(plot_history(history, out_dir / "loss_history.png"))}


def report_ablation_run(run_dir: Path, out_dir: Path) -> Dict[str, str]:
    """Metric bars per grid and the low | row 1 ... row N | gt comparison strip."""
    artifacts = {}
    for grid in ("components", "losses"):
        sidecar = run_dir / f"{grid}.json"
        if not sidecar.is_file():
            continue
        with open(sidecar, encoding="utf-8") as f:
            rows = json.load(f)["rows"]
        labels = [r["label"] for r in rows]
        values = {m: [r[m] for r in rows] for m in ("psnr", "ssim", "lpips")}
        artifacts[f"{grid}_chart"] = str(plot_metric_bars(labels, values, out_dir / f"{grid}.png", grid))
        strip = plot_comparison_strip(run_dir / "samples", rows, grid, out_dir / f"{grid}_strip.png")
        if strip is not None:
            artifacts[f"{grid}_strip"] = str(strip)
    if not artifacts:
        raise PreconditionError(f"ablation run '{run_dir}' has no grid sidecar")
    return artifacts


def plot_comparison_strip(samples: Path, rows: List[dict], grid: str, path: Path):
    if not (samples / "low.png").is_file():
        logger.warning(f"No sample images in {samples}; skipping comparison strip")
        return None
    panels = [("Low light", samples / "low.png")]
    for index, row in enumerate(rows, start=1):
        slug = f"row_{row['label']}" if grid == "components" else f"row_{index}"
        if not row.get("skipped") and (samples / f"{slug}.png").is_file():
            panels.append((row["label"], samples / f"{slug}.png"))
    panels.append(("Ground truth", samples / "gt.png"))

    fig, axes = plt.subplots(1, len(panels), figsize=(2.4 * len(panels), 2.8))
    for ax, (label, image_path) in zip(axes, panels):
        _show(ax, read_image(image_path), label.replace(" & ", "\n& ") if grid == "losses" else label)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def build_report(runs_dir: Path, out_dir: Path) -> Dict[str, str]:
    """Render every run found under ``runs_dir`` into ``out_dir/<run name>/``."""
    out_dir = Path(out_dir)
    artifacts: Dict[str, str] = {}
    for run_dir in find_runs(runs_dir):
        manifest = read_manifest(run_dir)
        if manifest.status != "succeeded":
            logger.warning(f"Skipping run '{run_dir}' with status {manifest.status}")
            continue
        target = out_dir / run_dir.name
        if manifest.command == "eval":
            produced = report_eval_run(run_dir, manifest, target)
        elif manifest.command == "train":
            produced = report_train_run(run_dir, target)
        elif manifest.command == "ablate":
            produced = report_ablation_run(run_dir, target)
        else:
            logger.info(f"Nothing to plot for '{manifest.command}' run {run_dir}")
            continue
        artifacts.update({f"{run_dir.name}/{k}": v for k, v in produced.items()})
        logger.info("Report written", extra={"run": str(run_dir), "plots": len(produced)})
    return artifacts
