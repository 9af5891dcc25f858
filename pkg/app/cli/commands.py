"""One function per CLI command.

Every command writes exactly one manifest next to its outputs. On failure the
manifest records status ``failed`` and, if the output directory was created by
the command, everything else the command wrote is removed again.
"""
import logging
import shutil
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, Optional

import torch
import torch.nn.functional as F
import yaml
from pydantic import ValidationError

from app.config import settings
from app.errors import ConfigurationError, PreconditionError
from app.models import RunConfig, RunManifest
from app.monitoring import RunMetrics
from app.network.extractors import build_extractor
from app.services.ablation import ablate_components, ablate_losses
from app.services.checkpoint import load_checkpoint
from app.services.dataset import (
    ensure_empty,
    load_paired_dataset,
    make_synth_dataset,
    read_image,
    write_image,
    write_split,
)
from app.services.evaluator import evaluate, model_from_checkpoint, write_report
from app.services.report import build_report
from app.services.trainer import Trainer, check_resume_compatible

logger = logging.getLogger(__name__)


def load_run_config(path) -> RunConfig:
    """Parse a YAML run config; unknown keys and bad values name their field path."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file '{path}' not found")
    try:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config file '{path}' is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file '{path}' must contain a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigurationError(f"invalid config '{path}': {problems}") from e


def _is_fresh(path: Path) -> bool:
    return not path.exists() or (path.is_dir() and not any(path.iterdir()))


def _discard_outputs(out_dir: Path, manifest_path: Path) -> None:
    for child in out_dir.iterdir():
        if child == manifest_path:
            continue
        if child.is_dir():
            shutil.rmtree(child)
        else:
            child.unlink()


def _write_manifest(manifest: RunManifest, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))


def run_command(
    command: str,
    out_dir: Path,
    arguments: Dict[str, Optional[str]],
    body: Callable[[RunManifest], Dict[str, str]],
    manifest_path: Optional[Path] = None,
) -> RunManifest:
    """Execute ``body`` and record its outcome in a manifest.

    Args:
        command: Command name stored in the manifest.
        out_dir: Directory the command writes into.
        arguments: CLI arguments, stored verbatim.
        body: Does the work; may fill config fields of the manifest and
            returns the artifact paths it produced.
        manifest_path: Defaults to ``out_dir / settings.manifest_filename``.

    Returns:
        The final manifest.
    """
    out_dir = Path(out_dir)
    manifest_path = manifest_path or out_dir / settings.manifest_filename
    fresh = _is_fresh(out_dir)
    manifest = RunManifest(command=command, arguments={k: None if v is None else str(v) for k, v in arguments.items()})
    logger.info(f"Running {command}", extra={"out": str(out_dir)})
    try:
        manifest.artifacts = body(manifest)
        manifest.status = "succeeded"
    except Exception as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        logger.error(f"Command {command} failed: {e}", exc_info=True)
        if fresh and out_dir.is_dir():
            _discard_outputs(out_dir, manifest_path)
        raise
    finally:
        manifest.finished_at = datetime.now(timezone.utc)
        _write_manifest(manifest, manifest_path)
    logger.info(f"Finished {command}", extra={"artifacts": len(manifest.artifacts)})
    return manifest


def _record_config(manifest: RunManifest, config: RunConfig) -> None:
    manifest.config = config.model_dump(mode="json")
    manifest.config_hash = config.config_hash()
    manifest.seed = config.train.seed


def cmd_make_synth(args) -> RunManifest:
    out = Path(args.out)
    try:
        ensure_empty(out, force=args.force)
    except PreconditionError as e:
        # a busy directory is left untouched, so the failed manifest goes beside it
        def refuse(manifest: RunManifest) -> Dict[str, str]:
            raise e

        sidecar = out.with_name(f"{out.name}.{settings.manifest_filename}")
        return run_command("make-synth", out, vars_of(args), refuse, manifest_path=sidecar)

    def body(manifest: RunManifest) -> Dict[str, str]:
        manifest.seed = args.seed
        train = make_synth_dataset(args.pairs, args.size, seed=args.seed, name="train")
        write_split(train, out)
        artifacts = {"train": str(out / "train")}
        if args.test_pairs:
            test = make_synth_dataset(args.test_pairs, args.size, seed=args.seed + 1, name="test")
            write_split(test, out)
            artifacts["test"] = str(out / "test")
        return artifacts

    return run_command("make-synth", out, vars_of(args), body)


def cmd_train(args) -> RunManifest:
    out = Path(args.out)

    def body(manifest: RunManifest) -> Dict[str, str]:
        config = load_run_config(args.config)
        _record_config(manifest, config)
        train_split, test_split = load_paired_dataset(args.data, layout=args.layout)
        if args.resume:
            checkpoint = load_checkpoint(args.resume)
            check_resume_compatible(checkpoint, config.model)
            trainer = Trainer.from_checkpoint(checkpoint, config.train, out)
        else:
            trainer = Trainer(config.model, config.train, out)
        trainer.train(train_split, eval_data=test_split)
        artifacts = {"final_checkpoint": str(out / "final.pt"), "history": str(out / "history.csv")}
        if settings.enable_metrics:
            artifacts["metrics"] = str(out / settings.metrics_filename)
        return artifacts

    return run_command("train", out, vars_of(args), body)


def cmd_eval(args) -> RunManifest:
    out = Path(args.out)

    def body(manifest: RunManifest) -> Dict[str, str]:
        checkpoint = load_checkpoint(args.ckpt)
        _record_config(manifest, RunConfig(model=checkpoint.model_config, train=checkpoint.train_config))
        train_split, test_split = load_paired_dataset(args.data, layout=args.layout)
        split = test_split if args.split == "test" else train_split
        device = checkpoint.train_config.device or settings.device
        model = model_from_checkpoint(checkpoint, device)
        extractor = build_extractor(checkpoint.train_config.extractor, checkpoint.train_config.extractor_seed)
        if extractor is not None:
            extractor = extractor.to(device)
        report = evaluate(model, split, extractor, save_dir=out / "enhanced")
        artifacts = write_report(report, out)
        RunMetrics(out / settings.metrics_filename).record_report(report)
        artifacts["enhanced"] = str(out / "enhanced")
        return artifacts

    return run_command("eval", out, vars_of(args), body)


def pad_to_multiple(image: torch.Tensor, multiple: int = 8):
    """Pad a (B, C, H, W) batch on the bottom/right; returns the padded batch and the original size."""
    height, width = image.shape[-2:]
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    if not pad_h and not pad_w:
        return image, (height, width)
    mode = "reflect" if pad_h < height and pad_w < width else "replicate"
    return F.pad(image, (0, pad_w, 0, pad_h), mode=mode), (height, width)


def cmd_enhance(args) -> RunManifest:
    target = Path(args.out)
    manifest_path = target.with_name(f"{target.stem}.{settings.manifest_filename}")

    def body(manifest: RunManifest) -> Dict[str, str]:
        source = Path(args.input)
        if not source.is_file():
            raise PreconditionError(f"input image '{source}' not found")
        checkpoint = load_checkpoint(args.ckpt)
        _record_config(manifest, RunConfig(model=checkpoint.model_config, train=checkpoint.train_config))
        model = model_from_checkpoint(checkpoint, checkpoint.train_config.device or settings.device)
        param = next(model.parameters())
        image = read_image(source).unsqueeze(0).to(param.device, param.dtype)
        padded, (height, width) = pad_to_multiple(image)
        enhanced = model.enhance(padded)[..., :height, :width]
        write_image(enhanced[0].float().cpu(), target)
        return {"enhanced": str(target)}

    return run_command("enhance", target.parent, vars_of(args), body, manifest_path=manifest_path)


def cmd_ablate(args) -> RunManifest:
    out = Path(args.out)

    def body(manifest: RunManifest) -> Dict[str, str]:
        config = load_run_config(args.config)
        _record_config(manifest, config)
        train_split, test_split = load_paired_dataset(args.data, layout=args.layout)
        if args.grid == "components":
            ablate_components(config.model, config.train, train_split, test_split, out)
        else:
            ablate_losses(config.model, config.train, train_split, test_split, out)
        return {
            "table": str(out / f"{args.grid}.csv"),
            "sidecar": str(out / f"{args.grid}.json"),
            "samples": str(out / "samples"),
        }

    return run_command("ablate", out, vars_of(args), body)


def cmd_report(args) -> RunManifest:
    out = Path(args.out)

    def body(manifest: RunManifest) -> Dict[str, str]:
        return build_report(Path(args.runs), out)

    return run_command("report", out, vars_of(args), body)


def vars_of(args) -> Dict[str, Optional[str]]:
    return {k: v for k, v in vars(args).items() if k != "handler"}
