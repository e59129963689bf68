"""Embedding export and prediction files."""

import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from stethonet.models import ModelBundle, embed_windows
from stethonet.store import WindowSet

logger = logging.getLogger(__name__)


def export_embeddings(bundle: ModelBundle, windows: WindowSet, path: Path) -> Tuple[Path, Path]:
    """
    Write a little-endian float32 [N x M] matrix and a JSON sidecar
    (ids, patient ids, labels, dims). Labels of a sealed split are null.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vectors = embed_windows(bundle, windows.samples).cpu().numpy().astype("<f4")
    vectors.tofile(path)

    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({
        "split": windows.split,
        "ids": list(windows.window_ids),
        "patient_ids": list(windows.patient_ids),
        "labels": None if windows.sealed else windows.labels.tolist(),
        "dims": [int(vectors.shape[0]), int(vectors.shape[1])],
        "dtype": "float32-le",
        "stage": bundle.stage,
    }, indent=2), encoding="utf-8")
    logger.info(f"Exported {vectors.shape[0]} x {vectors.shape[1]} embeddings to {path}")
    return path, sidecar


def write_predictions(path: Path, patient_ids: Sequence[str], labels: Sequence[int], scores: Sequence[float]) -> None:
    """One `patient_id,true_label,score` line per sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for p, y, s in zip(patient_ids, labels, scores):
            writer.writerow([p, int(y), repr(float(s))])


def read_predictions(path: Path) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """
    Raises:
        ValueError: malformed line (reported with its line number)
    """
    patient_ids, labels, scores = [], [], []
    with open(path, encoding="utf-8", newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{line_no}: expected patient_id,true_label,score")
            try:
                label, score = int(row[1]), float(row[2])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: unparsable label or score") from None
            if label not in (0, 1):
                raise ValueError(f"{path}:{line_no}: label must be 0 or 1")
            patient_ids.append(row[0])
            labels.append(label)
            scores.append(score)
    return patient_ids, np.asarray(labels, dtype=np.int64), np.asarray(scores, dtype=np.float64)


def frozen_threshold(predictions_path: Path) -> Optional[float]:
    """
    Decision threshold from the `eval_<split>.json` report written next to
    `predictions_<split>.csv`, or None when there is no such report.
    """
    path = Path(predictions_path)
    if not path.stem.startswith("predictions_"):
        return None
    report = path.with_name(f"eval_{path.stem[len('predictions_'):]}.json")
    if not report.exists():
        return None
    try:
        return float(json.loads(report.read_text(encoding="utf-8"))["threshold"])
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"{report}: no usable threshold ({e})") from e
