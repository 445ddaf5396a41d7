"""Run the restoration command line from a source checkout.

Example:
    python scripts/restore.py --task degrade --in cameraman.pgm --noise 0.3 --blur average --out runs/cm30
    python scripts/restore.py --task deblur --in runs/cm30/degraded.pgm --ref cameraman.pgm --noise 0.3 --blur average --out runs/cm30
"""

from __future__ import annotations

import sys
from pathlib import Path

# Ensure the project root is on sys.path so `imrestore` imports resolve
ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from imrestore.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
