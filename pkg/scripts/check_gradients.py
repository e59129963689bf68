#!/usr/bin/env python3
"""
Gradient health check.
Runs central finite differences (float64, h=1e-5) over every primitive,
encoder, head and loss. Returns exit code 0 if all pass, 1 otherwise.

Usage:
    python scripts/check_gradients.py [--seed 0]
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from stethonet.gradcheck import TOLERANCE, run_all

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    try:
        results = run_all(args.seed)
    except Exception as e:
        print(f"UNHEALTHY: {e}")
        return 1

    failed = [r for r in results if not r.passed(TOLERANCE)]
    if failed:
        for r in failed:
            print(f"UNHEALTHY: {r.name} max rel error {r.max_rel_error:.2e} > {TOLERANCE:g}")
        return 1

    print(f"HEALTHY: {len(results)} gradient checks within {TOLERANCE:g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
