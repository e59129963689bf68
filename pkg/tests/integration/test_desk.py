"""Desk-scale end-to-end runs on a synthetic corpus."""

import json

import pytest

from stethonet.desk import check_results, compare_runs, run_desk

SHORT_RUN = """\
[pretrain]
epochs = 2

[proto]
epochs = 2

[baseline]
epochs = 2
freeze_epochs = 1
"""


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """One full-length run with seed 42, label-efficiency curve included."""
    out = tmp_path_factory.mktemp("desk")
    assert run_desk(out, patients=64, seed=42, efficiency=True) == 0
    return out


@pytest.mark.integration
@pytest.mark.slow
class TestDeskRun:
    """Tests for held-out results of the full pipeline."""

    def test_proto_head_results(self, desk_run):
        """Test the proto head reaches F1 0.90 on test patients and at least the linear probe."""
        proto = json.loads((desk_run / "proto" / "eval_test.json").read_text())
        linear = json.loads((desk_run / "linear" / "eval_test.json").read_text())
        assert proto["f1"] >= 0.90
        assert proto["f1"] >= linear["f1"]

    def test_label_efficiency(self, desk_run):
        """Test pretraining beats the supervised baseline at 25% labels with disjoint CIs."""
        row = json.loads((desk_run / "efficiency" / "efficiency.json").read_text())["rows"][0]
        assert row["fraction"] == 0.25
        assert row["ssl_f1"] - row["supervised_f1"] >= 0.03
        assert row["ssl_ci"][0] > row["supervised_ci"][1]

    def test_checks_pass(self, desk_run):
        """Test the desk checks report no problems."""
        assert check_results(desk_run) == []

    def test_comparison_uses_frozen_thresholds(self, desk_run):
        """Test McNemar ran at each model's frozen validation threshold."""
        comparison = json.loads((desk_run / "compare" / "comparison.json").read_text())
        proto = json.loads((desk_run / "proto" / "eval_test.json").read_text())
        linear = json.loads((desk_run / "linear" / "eval_test.json").read_text())
        assert comparison["threshold_a"] == proto["threshold"]
        assert comparison["threshold_b"] == linear["threshold"]


@pytest.mark.integration
@pytest.mark.slow
class TestDeskDeterminism:
    """Tests for run-to-run reproducibility."""

    def test_seeded_runs_identical(self, tmp_path):
        """Test two seed-42 runs give identical loss trajectories and eval reports."""
        config = tmp_path / "short.ini"
        config.write_text(SHORT_RUN)
        for run in ("first", "second"):
            assert run_desk(tmp_path / run, patients=64, seed=42, config=config) == 0
        assert compare_runs(tmp_path / "first", tmp_path / "second") == []
        first = json.loads((tmp_path / "first" / "pretrain" / "pretrain_losses.json").read_text())
        assert len(first["loss"]) == 2
