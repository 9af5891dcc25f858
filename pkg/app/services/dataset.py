"""Paired low-light / ground-truth image datasets.

On-disk layout (lossless PNG):

    root/train/low/<name>.png   root/train/gt/<name>.png
    root/test/low/<name>.png    root/test/gt/<name>.png

Pixels are normalized to [0, 1] at load time.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

from app.config import settings
from app.errors import DatasetError, PreconditionError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}
EXPECTED_SIZE = 512
ENDO4IE_SPLITS = {"train": 690, "test": 266}


@dataclass
class ImagePair:
    id: str
    low: torch.Tensor
    gt: torch.Tensor

    def __post_init__(self):
        if self.low.shape != self.gt.shape:
            raise DatasetError(
                f"pair '{self.id}': low {tuple(self.low.shape)} and gt {tuple(self.gt.shape)} differ"
            )


@dataclass
class DatasetSplit:
    name: str
    pairs: List[ImagePair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(ids) != len(set(ids)):
            raise DatasetError(f"split '{self.name}' contains duplicate ids")


class PairedImageDataset(Dataset):
    """torch Dataset view over a DatasetSplit yielding (low, gt, id)."""

    def __init__(self, split: DatasetSplit):
        self.split = split

    def __len__(self) -> int:
        return len(self.split)

    def __getitem__(self, index: int):
        pair = self.split.pairs[index]
        return pair.low, pair.gt, pair.id


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """HWC uint8 array -> CHW float32 tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))).float() / 255.0


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """CHW tensor in [0, 1] -> HWC uint8 array."""
    array = image.detach().clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    return array.permute(1, 2, 0).cpu().numpy()


def quantize_8bit(image: torch.Tensor) -> torch.Tensor:
    return from_uint8(to_uint8(image))


def read_image(path: Path) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            return from_uint8(np.asarray(img.convert("RGB")))
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetError(f"cannot decode image '{path}': {e}") from e


def write_image(image: torch.Tensor, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def _list_images(folder: Path) -> dict:
    if not folder.is_dir():
        return {}
    return {
        p.stem: p
        for p in sorted(folder.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    }


def load_split(root: Path, name: str) -> DatasetSplit:
    """Load one split, matching low/ and gt/ files by filename stem."""
    low_files = _list_images(root / name / "low")
    gt_files = _list_images(root / name / "gt")
    orphans = sorted(set(low_files) ^ set(gt_files))
    if orphans:
        raise DatasetError(f"split '{name}': unmatched files between low/ and gt/: {', '.join(orphans)}")

    ids = sorted(low_files)

    def load(pair_id: str) -> ImagePair:
        return ImagePair(id=pair_id, low=read_image(low_files[pair_id]), gt=read_image(gt_files[pair_id]))

    with ThreadPoolExecutor(max_workers=max(1, settings.load_workers)) as pool:
        pairs = list(pool.map(load, ids))

    odd = [p.id for p in pairs if tuple(p.low.shape[-2:]) != (EXPECTED_SIZE, EXPECTED_SIZE)]
    if odd:
        logger.warning(
            f"Split '{name}': {len(odd)} image(s) are not {EXPECTED_SIZE}x{EXPECTED_SIZE}",
            extra={"split": name, "examples": odd[:5]},
        )
    return DatasetSplit(name=name, pairs=pairs)


def load_paired_dataset(root, layout: str = "generic") -> Tuple[DatasetSplit, DatasetSplit]:
    """Load the train and test splits under ``root``.

    Args:
        root: Dataset root containing ``train/`` and/or ``test/``.
        layout: ``endo4ie`` additionally warns when split sizes differ from
            the full 690/266.

    Returns:
        Tuple of (train, test) splits in filename-sorted order.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root '{root}' does not exist")
    try:
        train = load_split(root, "train")
        test = load_split(root, "test")
    except DatasetError as e:
        logger.error(f"Error loading dataset: {e}")
        raise

    if len(train) == 0 and len(test) == 0:
        raise DatasetError(f"no pairs found under '{root}'")
    if layout == "endo4ie":
        for split in (train, test):
            expected = ENDO4IE_SPLITS[split.name]
            if len(split) != expected:
                logger.warning(
                    f"Partial dataset: split '{split.name}' has {len(split)} pairs, expected {expected}"
                )
    logger.info(f"Loaded dataset from {root}", extra={"train": len(train), "test": len(test)})
    return train, test


def write_split(split: DatasetSplit, root) -> None:
    """Write a split to ``root/<split.name>/{low,gt}/<id>.png``."""
    root = Path(root)
    for pair in split:
        write_image(pair.low, root / split.name / "low" / f"{pair.id}.png")
        write_image(pair.gt, root / split.name / "gt" / f"{pair.id}.png")
    logger.info(f"Wrote {len(split)} pairs to {root / split.name}")


def synth_darken(
    gt: torch.Tensor,
    gamma: float,
    gain: float,
    noise_sigma: float,
    seed: int = 0,
) -> torch.Tensor:
    """``clamp(gain * gt**gamma + N(0, noise_sigma), 0, 1)``, deterministic in ``seed``."""
    if gamma < 1:
        raise PreconditionError(f"gamma must be >= 1, got {gamma}")
    if not 0 < gain <= 1:
        raise PreconditionError(f"gain must lie in (0, 1], got {gain}")
    if noise_sigma < 0:
        raise PreconditionError(f"noise_sigma must be >= 0, got {noise_sigma}")
    low = gain * gt.pow(gamma)
    if noise_sigma > 0:
        generator = torch.Generator().manual_seed(seed)
        noise = torch.randn(gt.shape, generator=generator, dtype=gt.dtype) * noise_sigma
        low = low + noise.to(gt.device)
    return low.clamp(0.0, 1.0)


def _tissue_image(rng: np.random.Generator, size: int) -> torch.Tensor:
    """Smooth reddish texture: upsampled coloured noise over a linear gradient."""
    coarse = torch.from_numpy(rng.standard_normal((1, 3, size // 8, size // 8)))
    texture = F.interpolate(coarse, size=(size, size), mode="bicubic", align_corners=False)[0]
    fine = torch.from_numpy(rng.standard_normal((1, 3, size // 2, size // 2)))
    texture = texture + 0.3 * F.interpolate(fine, size=(size, size), mode="bilinear", align_corners=False)[0]

    angle = rng.uniform(0.0, 2.0 * np.pi)
    axis = torch.linspace(-1.0, 1.0, size, dtype=torch.float64)
    yy, xx = torch.meshgrid(axis, axis, indexing="ij")
    gradient = (np.cos(angle) * xx + np.sin(angle) * yy) * 0.5 + 0.5

    base = torch.tensor([0.85, 0.45, 0.40], dtype=torch.float64).view(3, 1, 1)
    tint = torch.from_numpy(rng.uniform(-0.1, 0.1, size=(3, 1, 1)))
    image = (base + tint) * (0.55 + 0.45 * gradient) + 0.08 * texture
    return image.clamp(0.05, 0.98).float()


def make_synth_dataset(n_pairs: int, size: int, seed: int = 0, name: str = "train") -> DatasetSplit:
    """Procedural ground truths paired with synthetically darkened copies.

    Per pair: gamma ~ U[1.5, 3], gain ~ U[0.3, 0.7], sigma ~ U[0, 0.02].
    Both images are snapped to the 8-bit grid so a PNG round trip is exact.
    """
    if n_pairs <= 0:
        raise PreconditionError("n_pairs must be positive")
    if size <= 0 or size % 8:
        raise PreconditionError(f"size must be a positive multiple of 8, got {size}")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        gt = quantize_8bit(_tissue_image(rng, size))
        gamma = float(rng.uniform(1.5, 3.0))
        gain = float(rng.uniform(0.3, 0.7))
        sigma = float(rng.uniform(0.0, 0.02))
        noise_seed = int(rng.integers(0, 2 ** 31 - 1))
        low = quantize_8bit(synth_darken(gt, gamma, gain, sigma, seed=noise_seed))
        pairs.append(ImagePair(id=f"{i:04d}", low=low, gt=gt))
    logger.info(f"Generated {n_pairs} synthetic pairs", extra={"size": size, "seed": seed})
    return DatasetSplit(name=name, pairs=pairs)


def ensure_empty(path, force: bool = False) -> None:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise PreconditionError(f"output directory '{path}' is not empty (use --force)")
    os.makedirs(path, exist_ok=True)
