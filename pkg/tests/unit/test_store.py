"""Unit tests for store module."""

import numpy as np
import pytest

from stethonet.store import (
    load_assignment,
    load_index,
    load_split,
    save_assignment,
    save_split,
)
from stethonet.windows import QualityFlags, SegmentRef, SplitAssignment, SplitError, Window


def _windows(n=4, width=16):
    rng = np.random.default_rng(0)
    return [
        Window(
            window_id=f"r{i}-w000",
            patient_id=f"p{i // 2}",
            recording_id=f"r{i}",
            label=i % 2,
            samples=rng.standard_normal(width).astype(np.float32),
            source_segments=[(SegmentRef(f"r{i}", 0.0, 0.5), 0.0), (SegmentRef(f"r{i}", 0.6, 1.1), 100.0)],
            quality=QualityFlags(amplitude_consistency=i != 3),
        )
        for i in range(n)
    ]


@pytest.mark.unit
class TestSplitFiles:
    """Tests for saving and loading split directories."""

    def test_round_trip(self, tmp_path):
        """Test samples, ids and labels come back from disk."""
        windows = _windows()
        save_split(tmp_path, "train", windows)
        loaded = load_split(tmp_path, "train")
        assert len(loaded) == 4
        assert loaded.window_ids == [w.window_id for w in windows]
        assert loaded.labels.tolist() == [0, 1, 0, 1]
        np.testing.assert_array_equal(loaded.samples, np.stack([w.samples for w in windows]))

    def test_test_split_sealed(self, tmp_path):
        """Test test labels raise until unsealed."""
        save_split(tmp_path, "test", _windows())
        loaded = load_split(tmp_path, "test")
        assert loaded.sealed
        with pytest.raises(SplitError, match="sealed"):
            loaded.labels
        assert loaded.unseal().labels.tolist() == [0, 1, 0, 1]

    def test_unknown_split(self, tmp_path):
        """Test unknown split names are refused."""
        with pytest.raises(SplitError, match="unknown split"):
            save_split(tmp_path, "holdout", _windows())

    def test_payload_mismatch(self, tmp_path):
        """Test a truncated sample file is detected."""
        directory = save_split(tmp_path, "val", _windows())
        payload = directory / "windows.f32"
        payload.write_bytes(payload.read_bytes()[:-4])
        with pytest.raises(SplitError, match="payload"):
            load_split(tmp_path, "val")

    def test_restrict_patients(self, tmp_path):
        """Test restricting to patients keeps only their windows."""
        save_split(tmp_path, "train", _windows())
        subset = load_split(tmp_path, "train").restrict_patients(["p1"])
        assert subset.patient_ids == ["p1", "p1"]
        assert subset.window_ids == ["r2-w000", "r3-w000"]

    def test_patient_labels(self, tmp_path):
        """Test a patient is positive when any window is positive."""
        save_split(tmp_path, "train", _windows())
        assert load_split(tmp_path, "train").patient_labels() == {"p0": 1, "p1": 1}

    def test_index_keeps_provenance(self, tmp_path):
        """Test source segments, gaps and quality flags survive the index."""
        save_split(tmp_path, "train", _windows())
        index = load_index(tmp_path, "train")
        assert index[0].source_segments[1] == (SegmentRef("r0", 0.6, 1.1), 100.0)
        assert index[3].quality.failures() == ["amplitude_consistency"]
        assert index[0].quality.passed


@pytest.mark.unit
class TestAssignment:
    """Tests for the persisted patient split."""

    def test_round_trip(self, tmp_path):
        """Test the assignment survives its JSON file."""
        assignment = SplitAssignment(
            train=frozenset({"a", "b", "c"}), val=frozenset({"d"}), test=frozenset({"e"}),
            prevalence={"train": 1 / 3},
        )
        save_assignment(tmp_path, assignment)
        loaded = load_assignment(tmp_path)
        assert loaded == assignment
        assert loaded.split_of("d") == "val"

    def test_missing_file(self, tmp_path):
        """Test a directory without a split file gives None."""
        assert load_assignment(tmp_path) is None
