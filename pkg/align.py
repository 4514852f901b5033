#!/usr/bin/env python3
"""Command-line entry point, e.g. ``python align.py pretrain --task data/D_W_15K_V1``"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
