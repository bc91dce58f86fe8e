#!/usr/bin/env python3
"""
Phase 2: VFDM Training
Train the conditional noise-prediction network on the train split.
Resumes from the latest checkpoint in the run directory.

Run: python scripts/02_train_vfdm.py [--steps N] [--fresh]
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.vfdm_cli import run_phase


def main(argv=None):
    return run_phase("train", argv, ("Ready for Phase 3: Mitigation", "python scripts/03_mitigate.py --checkpoint runs/desk/train"))


if __name__ == "__main__":
    sys.exit(main())
