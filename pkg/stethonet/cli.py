"""
Command-line entry point.

Usage:
    python -m stethonet synth --patients 64 --out corpus/
    python -m stethonet prepare --manifest corpus/manifest.jsonl --out data/
    python -m stethonet pretrain --data data/ --out runs/pretrain
    python -m stethonet train-proto --data data/ --checkpoint runs/pretrain/pretrain.ckpt --out runs/proto
    python -m stethonet eval --data data/ --checkpoint runs/proto/proto.ckpt --out runs/proto
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from stethonet.config import ABLATION_PRESETS, Config, ConfigError, RunConfig, apply_preset, load_run_config
from stethonet.corpus import SynthSpec, synth_corpus, write_corpus
from stethonet.efficiency import DEFAULT_FRACTIONS, efficiency_curve
from stethonet.encoders.factory import encoder_kinds
from stethonet.export import export_embeddings, frozen_threshold, read_predictions, write_predictions
from stethonet.models import load_bundle, save_bundle
from stethonet.pipeline import evaluate, prepare
from stethonet.stats import BOOTSTRAP_RESAMPLES, compare
from stethonet.store import SPLITS, load_split
from stethonet.training import pretrain, train_linear_baseline, train_proto

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def write_run_manifest(out_dir: Path, command: str, argv: List[str], config: RunConfig) -> Path:
    """Resolved configuration and provenance for one CLI run."""
    return _write_json(out_dir / "run_manifest.json", {
        "command": command,
        "argv": argv,
        "seed": config.seed,
        "preset": config.preset,
        "wiring": encoder_kinds(config.ablation),
        "config": config.to_dict(),
        "created_at": datetime.now(timezone.utc).isoformat(),
    })


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config, seed=args.seed)
    if args.preset:
        apply_preset(config, args.preset)
    return config


# =============================================================================
# Subcommands
# =============================================================================


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> None:
    spec = SynthSpec(
        n_patients=args.patients,
        recordings_per_patient=args.recordings_per_patient,
        duration_s=args.duration,
        murmur_prevalence=args.prevalence,
        seed=config.seed,
    )
    manifest, recordings = synth_corpus(spec)
    path = write_corpus(manifest, recordings, args.out)
    logger.info(f"Synthetic corpus: {len(manifest)} recordings, manifest {path}")


def cmd_prepare(args: argparse.Namespace, config: RunConfig) -> None:
    prepare(args.manifest, args.out, config)


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> None:
    result = pretrain(config, load_split(args.data, "train"))
    save_bundle(args.out / "pretrain.ckpt", result.bundle, result.optimizer, result.named_params)
    _write_json(args.out / "pretrain_losses.json", result.history)


def cmd_train_proto(args: argparse.Namespace, config: RunConfig) -> None:
    pretrained = load_bundle(args.checkpoint)
    result = train_proto(config, pretrained, load_split(args.data, "train"), load_split(args.data, "val"))
    save_bundle(args.out / "proto.ckpt", result.bundle, result.optimizer, result.named_params)
    _write_json(args.out / "proto_history.json", result.history)


def cmd_train_linear(args: argparse.Namespace, config: RunConfig) -> None:
    pretrained = load_bundle(args.checkpoint) if args.checkpoint else None
    result = train_linear_baseline(config, pretrained, load_split(args.data, "train"), load_split(args.data, "val"))
    save_bundle(args.out / "linear.ckpt", result.bundle, result.optimizer, result.named_params)
    _write_json(args.out / "linear_history.json", result.history)


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> None:
    bundle = load_bundle(args.checkpoint)
    report, predictions = evaluate(bundle, args.data, args.split, args.threshold)
    _write_json(args.out / f"eval_{args.split}.json", report.to_dict())
    write_predictions(args.out / f"predictions_{args.split}.csv", predictions["patient_ids"], predictions["labels"], predictions["scores"])
    print(json.dumps({k: v for k, v in report.to_dict().items() if k not in ("roc_curve", "pr_curve", "calibration")}, indent=2))


def _comparison_threshold(explicit: Optional[float], predictions: Path) -> float:
    """An explicit threshold, else the frozen one from the sibling eval report, else 0.5."""
    if explicit is not None:
        return explicit
    threshold = frozen_threshold(predictions)
    if threshold is None:
        logger.warning(f"No eval report next to {predictions}; McNemar uses threshold 0.5")
        return 0.5
    return threshold


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> None:
    patients_a, labels_a, scores_a = read_predictions(args.a)
    patients_b, labels_b, scores_b = read_predictions(args.b)
    if patients_a != patients_b or labels_a.tolist() != labels_b.tolist():
        raise ValueError("prediction files are not paired on the same samples")
    report = compare(
        scores_a, scores_b, labels_a, patients_a,
        threshold_a=_comparison_threshold(args.threshold_a, args.a),
        threshold_b=_comparison_threshold(args.threshold_b, args.b),
        n=args.n_boot, seed=config.seed,
    )
    _write_json(args.out / "comparison.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))


def cmd_efficiency(args: argparse.Namespace, config: RunConfig) -> None:
    rows = efficiency_curve(
        config,
        load_split(args.data, "train"),
        load_split(args.data, "val"),
        load_split(args.data, "test"),
        fractions=args.fractions,
        pretrained=load_bundle(args.checkpoint) if args.checkpoint else None,
        n_boot=args.n_boot,
    )
    _write_json(args.out / "efficiency.json", {"rows": [row.to_dict() for row in rows]})


def cmd_embed(args: argparse.Namespace, config: RunConfig) -> None:
    windows = load_split(args.data, args.split)
    if args.unseal:
        windows = windows.unseal()
    export_embeddings(load_bundle(args.checkpoint), windows, args.out / f"embeddings_{args.split}.f32")


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "pretrain": cmd_pretrain,
    "train-proto": cmd_train_proto,
    "train-linear": cmd_train_linear,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "efficiency": cmd_efficiency,
    "embed": cmd_embed,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"global seed (default {Config.SEED})")
    common.add_argument("--config", type=Path, default=None, help="sectioned key = value run config")
    common.add_argument("--preset", choices=sorted(ABLATION_PRESETS), default=None, help="ablation row")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--log-level", default=Config.LOG_LEVEL)

    parser = argparse.ArgumentParser(prog="stethonet", description="Self-supervised dual-path murmur detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic PCG corpus")
    p.add_argument("--patients", type=int, default=64)
    p.add_argument("--recordings-per-patient", type=int, default=2)
    p.add_argument("--duration", type=float, default=12.0)
    p.add_argument("--prevalence", type=float, default=0.35)

    p = sub.add_parser("prepare", parents=[common], help="window a corpus into train/val/test")
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining")
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("train-proto", parents=[common], help="prototypical head on a frozen backbone")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("train-linear", parents=[common], help="linear baseline (from scratch without --checkpoint)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--threshold", type=float, default=None, help="override the frozen validation threshold")

    p = sub.add_parser("compare", parents=[common], help="DeLong, McNemar and bootstrap AUPRC of two prediction files")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--threshold-a", type=float, default=None, help="default: frozen threshold from the eval report beside --a")
    p.add_argument("--threshold-b", type=float, default=None, help="default: frozen threshold from the eval report beside --b")
    p.add_argument("--n-boot", type=int, default=BOOTSTRAP_RESAMPLES)

    p = sub.add_parser("efficiency", parents=[common], help="label-fraction curves")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None, help="reuse a pretrain checkpoint")
    p.add_argument("--fractions", type=float, nargs="+", default=list(DEFAULT_FRACTIONS))
    p.add_argument("--n-boot", type=int, default=BOOTSTRAP_RESAMPLES)

    p = sub.add_parser("embed", parents=[common], help="export embeddings for external projection")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--unseal", action="store_true", help="include test labels in the sidecar")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )

    problems = Config.validate()
    if problems:
        for problem in problems:
            logger.error(f"Configuration problem: {problem}")
        return 1

    try:
        config = resolve_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        write_run_manifest(args.out, args.command, argv, config)
        COMMANDS[args.command](args, config)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return 1
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0
