"""Versioned single-file checkpoints, written atomically."""
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch

from app.errors import CheckpointError
from app.models import BrightVAEConfig, EpochRecord, TrainConfig

logger = logging.getLogger(__name__)

MAGIC = "BRIGHTVAE-CHECKPOINT"
SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    model_config: BrightVAEConfig
    train_config: TrainConfig
    model_state: Dict[str, torch.Tensor]
    epoch: int
    optimizer_state: Optional[dict] = None
    loader_rng_state: Optional[torch.Tensor] = None
    torch_rng_state: Optional[torch.Tensor] = None
    history: List[EpochRecord] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "magic": MAGIC,
            "schema_version": SCHEMA_VERSION,
            "model_config": self.model_config.model_dump(mode="json"),
            "train_config": self.train_config.model_dump(mode="json"),
            "model_state": self.model_state,
            "optimizer_state": self.optimizer_state,
            "epoch": self.epoch,
            "rng": {"loader": self.loader_rng_state, "torch": self.torch_rng_state},
            "history": [record.model_dump(mode="json") for record in self.history],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Checkpoint":
        if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
            raise CheckpointError("not a BrightVAE checkpoint (bad magic string)")
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise CheckpointError(f"unsupported checkpoint schema {payload.get('schema_version')}")
        rng = payload.get("rng") or {}
        return cls(
            model_config=BrightVAEConfig.model_validate(payload["model_config"]),
            train_config=TrainConfig.model_validate(payload["train_config"]),
            model_state=payload["model_state"],
            epoch=int(payload["epoch"]),
            optimizer_state=payload.get("optimizer_state"),
            loader_rng_state=rng.get("loader"),
            torch_rng_state=rng.get("torch"),
            history=[EpochRecord.model_validate(r) for r in payload.get("history", [])],
        )


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(checkpoint.to_payload(), f)
        os.replace(tmp_name, path)
    except Exception as e:
        logger.error(f"Error saving checkpoint to {path}: {e}", exc_info=True)
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info("Checkpoint saved", extra={"path": str(path), "epoch": checkpoint.epoch})
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint '{path}' not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise CheckpointError(f"cannot read checkpoint '{path}': {e}") from e
    return Checkpoint.from_payload(payload)
