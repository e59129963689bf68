#!/usr/bin/env python3
"""
Health check script for monitoring.
Validates environment settings, the run configuration and, optionally, a
checkpoint. Returns exit code 0 if healthy, 1 if unhealthy.

Usage:
    python scripts/health_check.py [--config run.ini] [--checkpoint runs/proto/proto.ckpt]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from stethonet.config import Config, ConfigError, load_run_config
from stethonet.substrate import CheckpointError, checkpoint_load


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--checkpoint", type=Path, default=None)
    args = parser.parse_args()

    problems = Config.validate()
    try:
        load_run_config(args.config)
    except ConfigError as e:
        problems.append(str(e))

    if args.checkpoint is not None:
        try:
            checkpoint = checkpoint_load(args.checkpoint)
            if not checkpoint.tensors:
                problems.append(f"{args.checkpoint}: no tensors")
        except (CheckpointError, OSError) as e:
            problems.append(str(e))

    if problems:
        for problem in problems:
            print(f"UNHEALTHY: {problem}")
        return 1

    print("HEALTHY")
    return 0


if __name__ == "__main__":
    sys.exit(main())
