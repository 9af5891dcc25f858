"""
Quick end-to-end script to verify the pipeline works.
Runs synth -> train -> eval twice with the same seeds and checks the two
metric reports agree bit for bit.

    python test_system.py [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

from app.main import main as cli

CONFIG = Path(__file__).resolve().parent / "configs" / "toy.yaml"


def run(step, argv):
    print(f"\n{step}: brightvae {' '.join(argv)}")
    code = cli(argv)
    print(f"Exit code: {code}")
    return code == 0


def pipeline(workdir: Path, tag: str):
    """Synthesize data, train the toy model and evaluate it."""
    data = workdir / tag / "data"
    run_dir = workdir / tag / "train"
    eval_dir = workdir / tag / "eval"
    steps = [
        ("1. Generating synthetic pairs", ["make-synth", "--out", str(data), "--pairs", "16", "--size", "64",
                                           "--seed", "7", "--test-pairs", "4"]),
        ("2. Training toy model", ["train", "--config", str(CONFIG), "--data", str(data), "--out", str(run_dir)]),
        ("3. Evaluating", ["eval", "--ckpt", str(run_dir / "final.pt"), "--data", str(data), "--out", str(eval_dir)]),
    ]
    for step, argv in steps:
        if not run(step, argv):
            return None
    return eval_dir


def compare(first: Path, second: Path):
    print("\n4. Comparing reports...")
    a = (first / "metrics.csv").read_text()
    b = (second / "metrics.csv").read_text()
    aggregate = json.loads((first / "metrics.json").read_text())["aggregate"]
    print(f"Aggregate: {json.dumps(aggregate, indent=2)}")
    return a == b


def main():
    """Run the pipeline twice."""
    print("=" * 60)
    print("BrightVAE - System Check")
    print("=" * 60)

    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="brightvae_"))
    print(f"Working directory: {workdir}")

    first = pipeline(workdir, "run_a")
    if first is None:
        print("\n❌ First pipeline failed. Check the manifest.json files for errors.")
        return
    second = pipeline(workdir, "run_b")
    if second is None:
        print("\n❌ Second pipeline failed.")
        return

    if compare(first, second):
        print("\n" + "=" * 60)
        print("✅ Both runs produced identical metric reports!")
        print("=" * 60)
    else:
        print("\n⚠️  Reports differ between identically seeded runs.")


if __name__ == "__main__":
    main()
