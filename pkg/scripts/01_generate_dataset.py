#!/usr/bin/env python3
"""
Phase 1: Paired Dataset Generation
Simulate clean/dirty visibility pairs with RFI masks, write shards + manifest.

Run: python scripts/01_generate_dataset.py [--config pipeline_config.json] [--force] [--verify]
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.vfdm_cli import run_phase


def main(argv=None):
    return run_phase("gen", argv, ("Ready for Phase 2: Training", "python scripts/02_train_vfdm.py"))


if __name__ == "__main__":
    sys.exit(main())
