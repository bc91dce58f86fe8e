#!/usr/bin/env python3
"""
Phase 4: Evaluation
RMSE / SSIM / TRE of every method on the test split, per RFI mode.

Run: python scripts/04_evaluate.py --checkpoint runs/desk/train [--methods none,clean,rpca,vfdm]
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.vfdm_cli import run_phase


def main(argv=None):
    return run_phase("eval", argv, ("Ready for Phase 5: Rendering", "python scripts/05_render_bt.py --input runs/desk/mitigate/estimate_<id>_bt.npy --out bt.png"))


if __name__ == "__main__":
    sys.exit(main())
