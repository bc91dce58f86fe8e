#!/usr/bin/env python3
"""
Phase 5: Brightness Temperature Rendering
Write a grayscale PNG/PGM of a BT map or visibility file.

Run: python scripts/05_render_bt.py --input runs/desk/mitigate/estimate_0_bt.npy --out bt.png
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.vfdm_cli import run_phase


def main(argv=None):
    return run_phase("render", argv)


if __name__ == "__main__":
    sys.exit(main())
