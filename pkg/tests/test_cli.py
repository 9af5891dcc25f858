import csv
import json

import pytest
import torch
from PIL import Image

from app.main import main
from app.services.dataset import write_image

TINY_YAML = """\
model:
  channels: 8
  codebook_size: 16
  heads: 2
train:
  epochs: 1
  batch_size: 2
  warmup_epochs: 1
  cycle_epochs: 2
  checkpoint_every: 0
"""


def _manifest(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic data, a tiny config and one trained checkpoint shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.yaml"
    config.write_text(TINY_YAML)
    data = root / "data"
    assert main(["make-synth", "--out", str(data), "--pairs", "4", "--size", "16", "--seed", "3", "--test-pairs", "2"]) == 0
    run = root / "train_run"
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run)]) == 0
    return {"root": root, "config": config, "data": data, "ckpt": run / "final.pt", "run": run}


def test_make_synth_writes_pairs_and_manifest(workspace):
    """Both splits are written and the manifest records success."""
    data = workspace["data"]
    assert len(list((data / "train" / "low").glob("*.png"))) == 4
    assert len(list((data / "test" / "gt").glob("*.png"))) == 2
    manifest = _manifest(data / "manifest.json")
    assert manifest["status"] == "succeeded"
    assert manifest["seed"] == 3


def test_make_synth_force_rerun_is_bit_identical(tmp_path):
    """Regenerating with the same seed reproduces every file."""
    out = tmp_path / "synth"
    args = ["make-synth", "--out", str(out), "--pairs", "2", "--size", "16", "--seed", "5"]
    assert main(args) == 0
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*.png")}
    assert main(args + ["--force"]) == 0
    second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*.png")}
    assert first == second


def test_make_synth_usage_errors(tmp_path):
    """Sizes not divisible by 8 and non-empty outputs exit with 1."""
    bad = tmp_path / "bad"
    assert main(["make-synth", "--out", str(bad), "--pairs", "2", "--size", "60"]) == 1
    assert _manifest(bad / "manifest.json")["status"] == "failed"
    assert not (bad / "train").exists()

    busy = tmp_path / "busy"
    busy.mkdir()
    (busy / "keep.txt").write_text("x")
    assert main(["make-synth", "--out", str(busy), "--pairs", "2", "--size", "16"]) == 1
    assert (busy / "keep.txt").read_text() == "x"
    assert sorted(p.name for p in busy.iterdir()) == ["keep.txt"]
    refused = _manifest(tmp_path / "busy.manifest.json")
    assert refused["status"] == "failed"
    assert "not empty" in refused["error"]


def test_identical_pipelines_produce_identical_files(tmp_path):
    """Two make-synth, train and eval pipelines with one seed write byte-identical CSVs."""
    config = tmp_path / "tiny.yaml"
    config.write_text(TINY_YAML.replace("epochs: 1", "epochs: 2"))
    for tag in ("a", "b"):
        root = tmp_path / tag
        data, run, evaluation = root / "data", root / "train", root / "eval"
        assert main(["make-synth", "--out", str(data), "--pairs", "4", "--size", "16", "--seed", "11", "--test-pairs", "2"]) == 0
        assert main(["train", "--config", str(config), "--data", str(data), "--out", str(run)]) == 0
        assert main(["eval", "--ckpt", str(run / "final.pt"), "--data", str(data), "--out", str(evaluation)]) == 0
    for name in ("train/history.csv", "eval/metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_train_writes_final_checkpoint(workspace):
    """The shared training run succeeded with a checkpoint and history."""
    run = workspace["run"]
    assert workspace["ckpt"].is_file()
    assert (run / "history.csv").is_file()
    manifest = _manifest(run / "manifest.json")
    assert manifest["status"] == "succeeded"
    assert manifest["config"]["model"]["channels"] == 8
    assert len(manifest["config_hash"]) == 64


def test_train_rejects_unknown_config_key(tmp_path, workspace):
    """Unknown keys exit with 1 and the failed manifest names the field path."""
    config = tmp_path / "typo.yaml"
    config.write_text(TINY_YAML.replace("heads: 2", "heads: 2\n  unknown_key: 1"))
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(workspace["data"]), "--out", str(out)]) == 1
    manifest = _manifest(out / "manifest.json")
    assert manifest["status"] == "failed"
    assert "model.unknown_key" in manifest["error"]


def test_eval_writes_metrics_without_lpips(tmp_path, workspace):
    """Per-image rows for the test split with '-' where no extractor is configured."""
    out = tmp_path / "eval"
    assert main(["eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["data"]), "--out", str(out)]) == 0
    with open(out / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["id"] for r in rows] == ["0000", "0001"]
    assert all(r["lpips"] == "-" for r in rows)
    assert len(list((out / "enhanced").glob("*.png"))) == 2
    assert json.loads((out / "metrics.json").read_text())["aggregate"]["count"] == 2


def test_enhance_keeps_odd_image_size(tmp_path, workspace):
    """A 20x28 input is padded internally and cropped back."""
    source = tmp_path / "frame.png"
    write_image(torch.rand(3, 20, 28), source)
    target = tmp_path / "frame_enhanced.png"
    assert main(["enhance", "--ckpt", str(workspace["ckpt"]), "--in", str(source), "--out", str(target)]) == 0
    with Image.open(target) as img:
        assert img.size == (28, 20)
    assert _manifest(tmp_path / "frame_enhanced.manifest.json")["status"] == "succeeded"


def test_ablate_component_grid(tmp_path, workspace):
    """The component grid emits six rows."""
    out = tmp_path / "ablation"
    args = ["ablate", "--config", str(workspace["config"]), "--data", str(workspace["data"]),
            "--grid", "components", "--out", str(out)]
    assert main(args) == 0
    with open(out / "components.csv", newline="", encoding="utf-8") as f:
        assert len(list(csv.reader(f))) == 7


def test_report_renders_one_triptych_per_image(tmp_path, workspace):
    """Reporting an eval run draws a triptych for each test image."""
    runs = tmp_path / "runs"
    assert main(["eval", "--ckpt", str(workspace["ckpt"]), "--data", str(workspace["data"]),
                 "--out", str(runs / "eval")]) == 0
    out = tmp_path / "report"
    assert main(["report", "--runs", str(runs), "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "eval" / "triptychs").glob("*.png")) == ["0000.png", "0001.png"]
    assert (out / "eval" / "metrics.png").is_file()


def test_missing_checkpoint_fails(tmp_path, workspace):
    """A missing checkpoint is a runtime failure."""
    out = tmp_path / "eval"
    assert main(["eval", "--ckpt", str(tmp_path / "none.pt"), "--data", str(workspace["data"]), "--out", str(out)]) != 0
    assert _manifest(out / "manifest.json")["status"] == "failed"


def test_usage_errors_exit_with_one():
    """No subcommand or an unknown option is a usage error."""
    assert main([]) == 1
    assert main(["train", "--bogus"]) == 1
