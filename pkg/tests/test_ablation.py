import csv
import json
import math
from pathlib import Path

import pytest

from app.cli.commands import load_run_config
from app.errors import PreconditionError
from app.models import SimilarityKind
from app.services.ablation import (
    CHECK,
    COMPONENT_HEADERS,
    CROSS,
    LOSS_HEADERS,
    AblationRunner,
    ablate_components,
    ablate_losses,
    component_configs,
    loss_configs,
)
from app.services.dataset import DatasetSplit, make_synth_dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_component_rows_enable_one_more_toggle_each(tiny_config):
    """Row n switches on the first n-1 components in column order."""
    rows = component_configs(tiny_config)
    assert [label for label, _, _ in rows] == ["1", "2", "3", "4", "5", "6"]
    for n, (_, toggles, config) in enumerate(rows):
        assert list(toggles.values()) == [i < n for i in range(5)]
        assert config.two_receptive_fields == (n >= 1)
        assert config.use_similarity_loss == (n >= 2)
        assert config.skip_connection == (n >= 3)
        assert config.use_attencoder == (n >= 4)
        assert config.use_attenquant == (n >= 5)
        assert config.similarity_loss_kind == SimilarityKind.SSI


def test_loss_rows_are_labelled_in_order(tiny_config):
    """Nine loss rows on the full architecture; only the first disables the similarity term."""
    rows = loss_configs(tiny_config)
    assert [label for label, _, _ in rows] == [
        "Rest & Latent",
        "Rest & Latent & Jaccard",
        "Rest & Latent & TV",
        "Rest & Latent & Cosine Similarity",
        "Rest & Latent & KLD",
        "Rest & Latent & GMSD",
        "Rest & Latent & Perceptual",
        "Rest & Latent & Color Consistency",
        "Rest & Latent & Structural Similarity",
    ]
    assert not rows[0][2].similarity_active
    for _, kind, config in rows[1:]:
        assert config.similarity_active and config.similarity_loss_kind == kind
        assert config.use_attencoder and config.use_attenquant and config.skip_connection


def test_component_grid_writes_table(tmp_path, tiny_config, tiny_train_config, train_split, test_split):
    """Six rows, the expected header and check marks, finite metrics and a sidecar."""
    train_config = tiny_train_config.model_copy(update={"epochs": 1, "checkpoint_every": 0})
    rows = ablate_components(tiny_config, train_config, train_split, test_split, tmp_path)

    table = _read_csv(tmp_path / "components.csv")
    assert table[0] == COMPONENT_HEADERS
    assert len(table) == 7
    assert table[1][1:6] == [CROSS] * 5
    assert table[6][1:6] == [CHECK] * 5
    assert table[3][1:6] == [CHECK, CHECK, CROSS, CROSS, CROSS]
    assert all(row[-1] == "-" for row in table[1:])

    counts = [row.parameters for row in rows]
    assert counts == sorted(counts)
    assert all(math.isfinite(row.psnr) and math.isfinite(row.ssim) for row in rows)

    sidecar = json.loads((tmp_path / "components.json").read_text())
    assert sidecar["grid"] == "components"
    assert sidecar["seed"] == {"model": tiny_config.seed, "train": train_config.seed}
    assert len(sidecar["rows"]) == 6
    assert (tmp_path / "samples" / "low.png").is_file()
    assert (tmp_path / "samples" / "row_6.png").is_file()


def test_loss_sweep_marks_perceptual_row_without_extractor(tmp_path, tiny_config, tiny_train_config, train_split, test_split):
    """Without a feature extractor the perceptual row is skipped and shown as '-'."""
    train_config = tiny_train_config.model_copy(update={"epochs": 1, "checkpoint_every": 0})
    rows = ablate_losses(tiny_config, train_config, train_split, test_split, tmp_path)

    table = _read_csv(tmp_path / "losses.csv")
    assert table[0] == LOSS_HEADERS
    assert len(table) == 10
    perceptual = table[7]
    assert perceptual == ["Rest & Latent & Perceptual", "-", "-", "-"]
    assert rows[6].skipped
    for row in rows:
        if not row.skipped:
            assert math.isfinite(row.psnr) and math.isfinite(row.ssim) and math.isfinite(row.output_tv)


def test_runner_needs_training_pairs(tiny_train_config, test_split):
    """An empty training split cannot be ablated."""
    with pytest.raises(PreconditionError):
        AblationRunner(tiny_train_config, DatasetSplit(name="train"), test_split)


def test_runner_scores_on_train_split_when_test_is_empty(tiny_train_config, train_split):
    """Missing test pairs fall back to the training split."""
    runner = AblationRunner(tiny_train_config, train_split, DatasetSplit(name="test"))
    assert runner.test_split is train_split


@pytest.mark.slow
def test_tv_row_smooths_outputs_more_than_plain_row():
    """On toy data the TV similarity row yields lower output total variation than rest + latent alone."""
    config = load_run_config(CONFIGS / "ablation_toy.yaml")
    train_split = make_synth_dataset(16, 64, seed=7, name="train")
    held_out = make_synth_dataset(4, 64, seed=8, name="test")
    rows = ablate_losses(config.model, config.train, train_split, held_out)
    assert rows[0].label == "Rest & Latent"
    assert rows[2].label == "Rest & Latent & TV"
    assert rows[2].output_tv < rows[0].output_tv
