"""
On-disk window sets, one directory per split.

Each split holds `windows.f32` (little-endian float32 rows) and
`index.jsonl` (one record per row). Labels of the test split stay sealed
until evaluation asks for them.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from stethonet.windows import QualityFlags, SegmentRef, SplitAssignment, SplitError, Window

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SEALED_SPLITS = frozenset({"test"})


@dataclass
class WindowSet:
    split: str
    window_ids: List[str]
    patient_ids: List[str]
    recording_ids: List[str]
    samples: np.ndarray = field(repr=False)
    _labels: np.ndarray = field(repr=False)
    sealed: bool = False

    def __len__(self) -> int:
        return len(self.window_ids)

    @property
    def labels(self) -> np.ndarray:
        """
        Raises:
            SplitError: labels of a sealed split
        """
        if self.sealed:
            raise SplitError(f"labels of the {self.split} split are sealed until final evaluation")
        return self._labels

    def unseal(self) -> "WindowSet":
        return replace(self, sealed=False)

    def subset(self, indices: Sequence[int]) -> "WindowSet":
        idx = list(indices)
        return replace(
            self,
            window_ids=[self.window_ids[i] for i in idx],
            patient_ids=[self.patient_ids[i] for i in idx],
            recording_ids=[self.recording_ids[i] for i in idx],
            samples=self.samples[idx],
            _labels=self._labels[idx],
        )

    def restrict_patients(self, patients: Iterable[str]) -> "WindowSet":
        keep = set(patients)
        return self.subset([i for i, p in enumerate(self.patient_ids) if p in keep])

    def patient_labels(self) -> dict:
        """Patient-level label: positive if any window is positive."""
        out: dict = {}
        for p, y in zip(self.patient_ids, self.labels):
            out[p] = max(out.get(p, 0), int(y))
        return out

    def as_windows(self) -> List[Window]:
        labels = self.labels
        return [
            Window(window_id=w, patient_id=p, recording_id=r, label=int(y), samples=s)
            for w, p, r, y, s in zip(self.window_ids, self.patient_ids, self.recording_ids, labels, self.samples)
        ]


def _window_record(window: Window, row: int) -> dict:
    return {
        "row": row,
        "window_id": window.window_id,
        "patient_id": window.patient_id,
        "recording_id": window.recording_id,
        "label": window.label,
        "sources": [[ref.recording_id, ref.start_s, ref.end_s, gap_ms] for ref, gap_ms in window.source_segments],
        "quality": vars(window.quality),
    }


def save_split(root: Path, split: str, windows: Sequence[Window]) -> Path:
    """Write one split's windows; returns the split directory."""
    if split not in SPLITS:
        raise SplitError(f"unknown split {split!r}")
    directory = Path(root) / split
    directory.mkdir(parents=True, exist_ok=True)

    width = len(windows[0].samples) if windows else 0
    matrix = np.zeros((len(windows), width), dtype="<f4")
    for row, window in enumerate(windows):
        matrix[row] = window.samples
    matrix.tofile(directory / "windows.f32")

    with open(directory / "index.jsonl", "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"split": split, "count": len(windows), "width": width}) + "\n")
        for row, window in enumerate(windows):
            handle.write(json.dumps(_window_record(window, row)) + "\n")

    logger.info(f"Stored {len(windows)} {split} windows in {directory}")
    return directory


def load_split(root: Path, split: str) -> WindowSet:
    """
    Read one split; the test split comes back sealed.

    Raises:
        SplitError: unknown split or inconsistent files
    """
    if split not in SPLITS:
        raise SplitError(f"unknown split {split!r}")
    directory = Path(root) / split
    with open(directory / "index.jsonl", encoding="utf-8") as handle:
        header = json.loads(handle.readline())
        records = [json.loads(line) for line in handle if line.strip()]
    if len(records) != header["count"]:
        raise SplitError(f"{directory}: index lists {len(records)} windows, header says {header['count']}")

    raw = np.fromfile(directory / "windows.f32", dtype="<f4")
    width = header["width"]
    if raw.size != len(records) * width:
        raise SplitError(f"{directory}: sample payload does not match {len(records)} x {width}")
    samples = raw.reshape(len(records), width) if width else np.zeros((0, 0), dtype=np.float32)

    return WindowSet(
        split=split,
        window_ids=[r["window_id"] for r in records],
        patient_ids=[r["patient_id"] for r in records],
        recording_ids=[r["recording_id"] for r in records],
        samples=samples,
        _labels=np.asarray([r["label"] for r in records], dtype=np.int64),
        sealed=split in SEALED_SPLITS,
    )


def load_index(root: Path, split: str) -> List[Window]:
    """Window metadata (provenance and quality) without samples."""
    with open(Path(root) / split / "index.jsonl", encoding="utf-8") as handle:
        handle.readline()
        records = [json.loads(line) for line in handle if line.strip()]
    return [
        Window(
            window_id=r["window_id"],
            patient_id=r["patient_id"],
            recording_id=r["recording_id"],
            label=r["label"],
            samples=np.zeros(0, dtype=np.float32),
            source_segments=[(SegmentRef(rid, s, e), gap) for rid, s, e, gap in r["sources"]],
            quality=QualityFlags(**r["quality"]),
        )
        for r in records
    ]


def save_assignment(root: Path, assignment: SplitAssignment) -> Path:
    path = Path(root) / "split.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(assignment.to_json(), indent=2), encoding="utf-8")
    return path


def load_assignment(root: Path) -> Optional[SplitAssignment]:
    path = Path(root) / "split.json"
    if not path.exists():
        return None
    return SplitAssignment.from_json(json.loads(path.read_text(encoding="utf-8")))
