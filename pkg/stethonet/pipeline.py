"""Corpus preparation and final evaluation over the prepared window store."""

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from stethonet.config import RunConfig
from stethonet.corpus import load_manifest, read_recording, zscore
from stethonet.metrics import EvalReport, evaluate_scores
from stethonet.models import ModelBundle, score_windows
from stethonet.store import SPLITS, load_split, save_assignment, save_split
from stethonet.windows import Window, build_windows, estimate_heart_rate, extract_segments, split_patients

logger = logging.getLogger(__name__)


def prepare(
    manifest_path: Path,
    out_dir: Path,
    config: RunConfig,
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> dict:
    """
    Manifest to window store: split patients, segment every recording, build
    rollover windows, drop windows failing a quality check, z-score the rest
    and write one directory per split plus split.json and prepare_report.json.

    Raises:
        ManifestError, AudioError, SplitError
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    manifest = load_manifest(manifest_path)
    assignment = split_patients(manifest, ratios, config.seed)

    per_split: Dict[str, List[Window]] = {name: [] for name in SPLITS}
    skipped_intervals = 0
    failures: Counter = Counter()
    emitted = 0

    for meta in manifest.entries:
        recording = read_recording(meta, manifest_path.parent)
        segments, skipped = extract_segments(recording, config.windowing)
        skipped_intervals += skipped
        hr = estimate_heart_rate(recording, config.windowing)
        for window in build_windows(segments, hr, config.windowing):
            emitted += 1
            if not window.quality.passed:
                failures.update(window.quality.failures())
                continue
            window.samples = zscore(window.samples).astype(np.float32)
            per_split[assignment.split_of(meta.patient_id)].append(window)

    if skipped_intervals:
        logger.warning(f"Skipped {skipped_intervals} murmur intervals outside the segment length limits")
    if failures:
        logger.warning(f"Dropped windows failing quality checks: {dict(failures)}")

    for name, windows in per_split.items():
        save_split(out_dir, name, windows)
    save_assignment(out_dir, assignment)

    report = {
        "recordings": len(manifest),
        "patients": len(manifest.patients()),
        "windows_emitted": emitted,
        "windows_kept": sum(len(w) for w in per_split.values()),
        "windows_per_split": {name: len(w) for name, w in per_split.items()},
        "window_prevalence": {
            name: (float(np.mean([x.label for x in w])) if w else 0.0) for name, w in per_split.items()
        },
        "patient_prevalence": assignment.prevalence,
        "skipped_intervals": skipped_intervals,
        "quality_failures": dict(failures),
    }
    (out_dir / "prepare_report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    logger.info(f"Prepared {report['windows_kept']} windows: {report['windows_per_split']}")
    return report


def evaluate(bundle: ModelBundle, data_dir: Path, split: str = "test", threshold: Optional[float] = None) -> Tuple[EvalReport, dict]:
    """
    Score one split at the bundle's frozen validation threshold (or an
    explicit one). This is the only place test labels are unsealed.

    Returns the report and the per-window predictions.
    """
    windows = load_split(data_dir, split).unseal()
    _, scores = score_windows(bundle, windows)
    t = bundle.threshold if threshold is None else threshold
    report = evaluate_scores(scores, windows.labels, t, windows.patient_ids)
    predictions = {
        "patient_ids": list(windows.patient_ids),
        "labels": windows.labels.tolist(),
        "scores": scores.tolist(),
    }
    return report, predictions
