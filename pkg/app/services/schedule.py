"""Warm-up + triangular cyclic learning-rate schedule, epoch-granular."""
from app.models import TrainConfig


def cyclic_lr(step: int, cfg: TrainConfig) -> float:
    """Learning rate at ``step`` (in epochs).

    Ramps linearly from 0 to ``lr_max`` over ``warmup_epochs``, then oscillates
    lr_max -> lr_min -> lr_max with period ``cycle_epochs``.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if step < cfg.warmup_epochs:
        return cfg.lr_max * step / cfg.warmup_epochs
    phase = ((step - cfg.warmup_epochs) % cfg.cycle_epochs) / cfg.cycle_epochs
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * abs(1.0 - 2.0 * phase)
