"""Unit tests for desk module."""

import json

import pytest

from stethonet.desk import check_results, compare_runs, desk_steps


def _write(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload))


def _results(out, proto_f1=0.95, linear_f1=0.9, rows=None):
    _write(out / "proto" / "eval_test.json", {"f1": proto_f1, "threshold": 0.5})
    _write(out / "linear" / "eval_test.json", {"f1": linear_f1, "threshold": 0.5})
    if rows is not None:
        _write(out / "efficiency" / "efficiency.json", {"rows": rows})


def _row(fraction, ssl_f1, ssl_ci, supervised_f1, supervised_ci):
    return {
        "fraction": fraction,
        "ssl_f1": ssl_f1,
        "ssl_ci": list(ssl_ci),
        "supervised_f1": supervised_f1,
        "supervised_ci": list(supervised_ci),
    }


@pytest.mark.unit
class TestDeskSteps:
    """Tests for desk_steps function."""

    def test_order(self, tmp_path):
        """Test the steps run from corpus to comparison."""
        steps = desk_steps(tmp_path)
        assert [s[0] for s in steps] == [
            "synth", "prepare", "pretrain", "train-proto", "train-linear", "eval", "eval", "compare",
        ]

    def test_efficiency_step(self, tmp_path):
        """Test the efficiency curve runs at a quarter of the labels."""
        step = desk_steps(tmp_path, efficiency=True)[-1]
        assert step[0] == "efficiency"
        assert step[step.index("--fractions") + 1] == "0.25"


@pytest.mark.unit
class TestCheckResults:
    """Tests for check_results function."""

    def test_passing_run(self, tmp_path):
        """Test a run above the F1 floor and the linear probe has no problems."""
        _results(tmp_path)
        assert check_results(tmp_path) == []

    def test_low_f1(self, tmp_path):
        """Test an F1 below the floor is reported."""
        _results(tmp_path, proto_f1=0.85, linear_f1=0.8)
        problems = check_results(tmp_path)
        assert len(problems) == 1
        assert "below 0.90" in problems[0]

    def test_proto_below_linear(self, tmp_path):
        """Test a proto head behind the linear probe is reported."""
        _results(tmp_path, proto_f1=0.92, linear_f1=0.95)
        assert any("linear baseline" in p for p in check_results(tmp_path))

    def test_missing_reports(self, tmp_path):
        """Test a run without eval reports is a problem."""
        assert check_results(tmp_path)[0].startswith("missing eval report")

    def test_efficiency_gain_and_separation(self, tmp_path):
        """Test a clear gain with disjoint CIs passes."""
        _results(tmp_path, rows=[_row(0.25, 0.9, (0.85, 0.95), 0.7, (0.6, 0.8))])
        assert check_results(tmp_path) == []

    def test_efficiency_small_gain(self, tmp_path):
        """Test a gain under three F1 points is reported."""
        _results(tmp_path, rows=[_row(0.25, 0.72, (0.71, 0.73), 0.7, (0.6, 0.705))])
        problems = check_results(tmp_path)
        assert len(problems) == 1
        assert "need +0.03" in problems[0]

    def test_efficiency_overlapping_ci(self, tmp_path):
        """Test overlapping CIs are reported."""
        _results(tmp_path, rows=[_row(0.25, 0.9, (0.75, 0.95), 0.8, (0.7, 0.85))])
        assert any("overlap" in p for p in check_results(tmp_path))


@pytest.mark.unit
class TestCompareRuns:
    """Tests for compare_runs function."""

    def test_identical(self, tmp_path):
        """Test identical outputs report nothing."""
        for run in ("a", "b"):
            _write(tmp_path / run / "proto" / "eval_test.json", {"f1": 0.9})
        assert compare_runs(tmp_path / "a", tmp_path / "b", ["proto/eval_test.json"]) == []

    def test_difference(self, tmp_path):
        """Test differing outputs are named."""
        _write(tmp_path / "a" / "proto" / "eval_test.json", {"f1": 0.9})
        _write(tmp_path / "b" / "proto" / "eval_test.json", {"f1": 0.91})
        assert compare_runs(tmp_path / "a", tmp_path / "b", ["proto/eval_test.json"]) == [
            "proto/eval_test.json differs between runs",
        ]

    def test_missing_output(self, tmp_path):
        """Test an output missing from one run is a problem."""
        _write(tmp_path / "a" / "proto" / "eval_test.json", {"f1": 0.9})
        assert len(compare_runs(tmp_path / "a", tmp_path / "b", ["proto/eval_test.json"])) == 1
