"""
Desk-scale end-to-end run on a synthetic corpus, and the checks its
results must pass.
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from stethonet.cli import main as cli

logger = logging.getLogger(__name__)

MIN_PROTO_F1 = 0.90
EFFICIENCY_FRACTION = 0.25
MIN_EFFICIENCY_GAIN = 0.03

# Outputs that must match between two runs with one seed
DETERMINISTIC_OUTPUTS = (
    "pretrain/pretrain_losses.json",
    "proto/proto_history.json",
    "linear/linear_history.json",
    "proto/eval_test.json",
    "linear/eval_test.json",
    "compare/comparison.json",
)


def desk_steps(out: Path, patients: int = 64, efficiency: bool = False) -> List[List[str]]:
    """CLI invocations of one desk run, in order."""
    data = str(out / "data")
    pretrained = str(out / "pretrain" / "pretrain.ckpt")
    steps = [
        ["synth", "--patients", str(patients), "--out", str(out / "corpus")],
        ["prepare", "--manifest", str(out / "corpus" / "manifest.jsonl"), "--out", data],
        ["pretrain", "--data", data, "--out", str(out / "pretrain")],
        ["train-proto", "--data", data, "--checkpoint", pretrained, "--out", str(out / "proto")],
        ["train-linear", "--data", data, "--checkpoint", pretrained, "--out", str(out / "linear")],
        ["eval", "--data", data, "--checkpoint", str(out / "proto" / "proto.ckpt"), "--out", str(out / "proto")],
        ["eval", "--data", data, "--checkpoint", str(out / "linear" / "linear.ckpt"), "--out", str(out / "linear")],
        [
            "compare",
            "--a", str(out / "proto" / "predictions_test.csv"),
            "--b", str(out / "linear" / "predictions_test.csv"),
            "--out", str(out / "compare"),
        ],
    ]
    if efficiency:
        steps.append([
            "efficiency", "--data", data, "--checkpoint", pretrained,
            "--fractions", str(EFFICIENCY_FRACTION), "--out", str(out / "efficiency"),
        ])
    return steps


def run_desk(
    out: Path,
    patients: int = 64,
    seed: int = 42,
    config: Optional[Path] = None,
    efficiency: bool = False,
) -> int:
    """Run every step; returns the exit code of the first failing step, or 0."""
    out = Path(out)
    common = ["--seed", str(seed)] + (["--config", str(config)] if config else [])
    for step in desk_steps(out, patients, efficiency):
        logger.info(f"Running {step[0]}")
        code = cli(step + common)
        if code != 0:
            logger.error(f"{step[0]} failed with exit code {code}")
            return code
    logger.info(f"Desk run complete: {out}")
    return 0


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def check_results(out: Path, min_f1: float = MIN_PROTO_F1) -> List[str]:
    """
    Problems with the held-out results of a finished desk run.

    The prototypical head must reach `min_f1` on test patients and at least
    the F1 of the linear probe on the same checkpoint. When an efficiency
    curve was run, the pretrained arm must beat the supervised arm by
    `MIN_EFFICIENCY_GAIN` F1 at the smallest fraction, with disjoint CIs.
    """
    out = Path(out)
    problems: List[str] = []
    try:
        proto = _read_json(out / "proto" / "eval_test.json")
        linear = _read_json(out / "linear" / "eval_test.json")
    except (OSError, ValueError) as e:
        return [f"missing eval report: {e}"]

    if proto["f1"] < min_f1:
        problems.append(f"proto test F1 {proto['f1']:.4f} below {min_f1:.2f}")
    if proto["f1"] < linear["f1"]:
        problems.append(f"proto test F1 {proto['f1']:.4f} below linear baseline {linear['f1']:.4f}")

    efficiency = out / "efficiency" / "efficiency.json"
    if efficiency.exists():
        rows = _read_json(efficiency)["rows"]
        if not rows:
            problems.append("efficiency curve has no rows")
        else:
            row = min(rows, key=lambda r: r["fraction"])
            gain = row["ssl_f1"] - row["supervised_f1"]
            if gain < MIN_EFFICIENCY_GAIN:
                problems.append(
                    f"at {row['fraction']:.2f} labels SSL F1 {row['ssl_f1']:.4f} beats supervised "
                    f"{row['supervised_f1']:.4f} by {gain:+.4f}, need {MIN_EFFICIENCY_GAIN:+.2f}"
                )
            if row["ssl_ci"][0] <= row["supervised_ci"][1]:
                problems.append(
                    f"at {row['fraction']:.2f} labels the F1 CIs overlap: "
                    f"SSL {row['ssl_ci']} vs supervised {row['supervised_ci']}"
                )
    return problems


def compare_runs(first: Path, second: Path, outputs: Sequence[str] = DETERMINISTIC_OUTPUTS) -> List[str]:
    """Outputs that differ between two desk runs."""
    problems = []
    for name in outputs:
        try:
            if _read_json(Path(first) / name) != _read_json(Path(second) / name):
                problems.append(f"{name} differs between runs")
        except (OSError, ValueError) as e:
            problems.append(f"{name}: {e}")
    return problems
