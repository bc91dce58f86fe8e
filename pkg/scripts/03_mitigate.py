#!/usr/bin/env python3
"""
Phase 3: RFI Mitigation
Run the reverse diffusion chain on dirty test pairs and write estimates.

Run: python scripts/03_mitigate.py --checkpoint runs/desk/train [--ids 0,1,2] [--eta 0.0]
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.vfdm_cli import run_phase


def main(argv=None):
    return run_phase("mitigate", argv, ("Ready for Phase 4: Evaluation", "python scripts/04_evaluate.py --checkpoint runs/desk/train"))


if __name__ == "__main__":
    sys.exit(main())
