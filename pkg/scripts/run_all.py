#!/usr/bin/env python3
"""
Complete Pipeline Script
Runs every phase in sequence on one config:
1. Dataset generation
2. Training
3. Mitigation of a few test pairs
4. Evaluation of all methods
5. Rendering of one estimate

Run: python scripts/run_all.py [--config pipeline_config.json] [--train-steps 2000] [--force]
"""
import sys
import argparse
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.config import load_run_config
from scripts.dataset_io import load_manifest
from scripts.vfdm_cli import DEFAULT_CONFIG, main as vfdm_main


def _step(number, title):
    print("\n" + "=" * 80)
    print(f"STEP {number}: {title}")
    print("=" * 80)


def run_all(argv=None):
    """Run gen -> train -> mitigate -> eval -> render; stops at the first failing phase"""
    parser = argparse.ArgumentParser(description="Run the full VFDM pipeline")
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--train-steps", type=int, dest="train_steps", help="Override train.steps")
    parser.add_argument("--mitigate-count", type=int, default=3, dest="mitigate_count")
    parser.add_argument("--force", action="store_true", help="Regenerate an existing dataset")
    args = parser.parse_args(argv)

    cfg = load_run_config(args.config)
    data_dir = Path(cfg.dataset.output_dir)
    run_dir = Path(cfg.paths.runs_dir)
    common = ["--config", args.config, "--quiet"]

    print("🚀 Complete VFDM Pipeline")
    print("=" * 80)
    results = {}

    _step(1, "Dataset Generation")
    if (data_dir / "manifest.json").exists() and not args.force:
        print(f"✅ Dataset already present at {data_dir} (pass --force to regenerate)")
        results["gen"] = 0
    else:
        results["gen"] = vfdm_main(["gen", *common, "--out", str(data_dir), "--verify"]
                                   + (["--force"] if args.force else []))

    if results["gen"] == 0:
        _step(2, "Training")
        steps = ["--steps", str(args.train_steps)] if args.train_steps else []
        results["train"] = vfdm_main(["train", *common, "--data", str(data_dir),
                                      "--out", str(run_dir / "train"), *steps])

    if results.get("train") == 0:
        _step(3, "Mitigation")
        test_ids = load_manifest(data_dir).split["test"][:args.mitigate_count]
        results["mitigate"] = vfdm_main(["mitigate", *common, "--data", str(data_dir),
                                         "--checkpoint", str(run_dir / "train"),
                                         "--ids", ",".join(str(i) for i in test_ids),
                                         "--out", str(run_dir / "mitigate")])

        _step(4, "Evaluation")
        results["eval"] = vfdm_main(["eval", *common, "--data", str(data_dir),
                                     "--checkpoint", str(run_dir / "train"), "--out", str(run_dir / "eval")])

        if results["mitigate"] == 0 and test_ids:
            _step(5, "Rendering")
            results["render"] = vfdm_main(["render", *common,
                                           "--input", str(run_dir / "mitigate" / f"estimate_{test_ids[0]}_bt.npy"),
                                           "--out", str(run_dir / "render" / f"estimate_{test_ids[0]}.png")])

    print("\n" + "=" * 80)
    print("PIPELINE SUMMARY")
    print("=" * 80)
    for phase in ("gen", "train", "mitigate", "eval", "render"):
        if phase not in results:
            print(f"   ⏳ {phase}: skipped")
        elif results[phase] == 0:
            print(f"   ✅ {phase}")
        else:
            print(f"   ❌ {phase}: exit code {results[phase]}")

    failed = [code for code in results.values() if code != 0]
    return failed[0] if failed else 0


if __name__ == "__main__":
    sys.exit(run_all())
