"""Replay training on a generated comment-thread fixture (or a real dataset).

    python scripts/run_replay_fixture.py [--dataset threads.jsonl] [--out out/replay]
"""

import argparse
import sys
from pathlib import Path

from consequential.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--dataset", help="JSON Lines replay dataset; default is the generated fixture")
    ap.add_argument("--seed", default="0")
    ap.add_argument("--out", default="out/replay")
    a = ap.parse_args()
    argv = ["replay-train", "--config", str(ROOT / "configs" / "replay_fixture.ini"), "--seed", a.seed, "--out", a.out]
    if a.dataset:
        argv += ["--dataset", a.dataset]
    sys.exit(main(argv))
