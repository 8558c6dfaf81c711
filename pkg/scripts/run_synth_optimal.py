"""Tilted-sampler sweep on the synthetic feed; writes CSV tables and SVG charts.

    python scripts/run_synth_optimal.py [--reps 200] [--out out/synth_optimal]
"""

import argparse
import sys
from pathlib import Path

from consequential.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", default="200")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--out", default="out/synth_optimal")
    a = ap.parse_args()
    sys.exit(main(["synth-optimal", "--config", str(ROOT / "configs" / "synth_optimal.ini"),
                   "--reps", a.reps, "--seed", a.seed, "--out", a.out]))
