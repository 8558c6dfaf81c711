"""Trained Plackett-Luce models against the tilted sampler on the synthetic feed.

    python scripts/run_synth_compare.py [--out out/synth_compare]
"""

import argparse
import sys
from pathlib import Path

from consequential.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", default="0")
    ap.add_argument("--out", default="out/synth_compare")
    a = ap.parse_args()
    sys.exit(main(["synth-compare", "--config", str(ROOT / "configs" / "synth_compare.ini"),
                   "--seed", a.seed, "--out", a.out]))
