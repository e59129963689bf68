#!/usr/bin/env python3
"""
End-to-end desk-scale run on a synthetic corpus.
synth -> prepare -> pretrain -> train-proto / train-linear -> eval -> compare [-> efficiency]

Checks the held-out results afterwards. Returns exit code 0 if every
check passes, 1 otherwise (or the exit code of the failing step).

Usage:
    python scripts/run_desk.py --out runs/desk [--patients 64] [--seed 42] [--config run.ini]
    python scripts/run_desk.py --out runs/desk --efficiency --repeat
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from stethonet.desk import MIN_PROTO_F1, check_results, compare_runs, run_desk

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--patients", type=int, default=64)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--min-f1", type=float, default=MIN_PROTO_F1)
    parser.add_argument("--efficiency", action="store_true", help="also run the label-efficiency curve")
    parser.add_argument("--repeat", action="store_true", help="run twice and compare the outputs")
    args = parser.parse_args()

    code = run_desk(args.out, args.patients, args.seed, args.config, args.efficiency)
    if code != 0:
        return code

    problems = check_results(args.out, args.min_f1)
    if args.repeat:
        repeat = args.out / "repeat"
        code = run_desk(repeat, args.patients, args.seed, args.config, args.efficiency)
        if code != 0:
            return code
        problems += compare_runs(args.out, repeat)

    if problems:
        for problem in problems:
            print(f"UNHEALTHY: {problem}")
        return 1

    print("HEALTHY")
    return 0


if __name__ == "__main__":
    sys.exit(main())
