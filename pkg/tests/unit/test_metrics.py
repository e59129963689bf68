"""Unit tests for metrics module."""

import pytest

from stethonet.metrics import (
    ECE_BINS,
    auprc,
    auroc,
    brier_score,
    calibration,
    evaluate_scores,
    expected_calibration_error,
    reliability_bins,
    select_threshold,
)

SCORES = [0.1, 0.4, 0.35, 0.8]
LABELS = [0, 0, 1, 1]


@pytest.mark.unit
class TestDiscrimination:
    """Tests for AUROC and AUPRC."""

    def test_auroc_with_one_inversion(self):
        """Test one misordered pair out of four gives 0.75."""
        assert auroc(SCORES, LABELS) == pytest.approx(0.75)

    def test_perfect_ranking(self):
        """Test a perfect ranking scores 1.0 on both curves."""
        assert auroc([0.1, 0.2, 0.8, 0.9], LABELS) == 1.0
        assert auprc([0.1, 0.2, 0.8, 0.9], LABELS) == pytest.approx(1.0)

    def test_ties_count_half(self):
        """Test constant scores give 0.5."""
        assert auroc([0.5, 0.5, 0.5, 0.5], LABELS) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        """Test AUROC over a single class is an error."""
        with pytest.raises(ValueError, match="single class"):
            auroc([0.1, 0.9], [1, 1])


@pytest.mark.unit
class TestCalibration:
    """Tests for ECE, Brier and reliability bins."""

    def test_perfect_predictions(self):
        """Test probabilities equal to the labels give zero Brier and ECE."""
        probs, labels = [0.0, 0.0, 1.0, 1.0], LABELS
        assert brier_score(probs, labels) == 0.0
        assert expected_calibration_error(probs, labels) == 0.0

    def test_overconfident_bin(self):
        """Test two 0.8 predictions with one positive give ECE 0.3."""
        assert expected_calibration_error([0.8, 0.8], [1, 0]) == pytest.approx(0.3)

    def test_brier_value(self):
        """Test the Brier score against a hand computation."""
        assert brier_score([0.8, 0.8], [1, 0]) == pytest.approx((0.04 + 0.64) / 2)

    def test_bins_cover_unit_interval(self):
        """Test there are 15 equal bins and a probability of 1.0 lands in the last."""
        bins = reliability_bins([1.0, 0.0], [1, 0])
        assert len(bins) == ECE_BINS == 15
        assert bins[0].lower == 0.0 and bins[-1].upper == 1.0
        assert bins[-1].count == 1 and bins[0].count == 1

    def test_calibration_bundle(self):
        """Test the combined record agrees with its parts."""
        result = calibration(SCORES, LABELS)
        assert result.ece == pytest.approx(expected_calibration_error(SCORES, LABELS))
        assert result.brier == pytest.approx(brier_score(SCORES, LABELS))
        assert sum(b.count for b in result.bins) == 4


@pytest.mark.unit
class TestSelectThreshold:
    """Tests for select_threshold function."""

    def test_max_f1(self):
        """Test the threshold maximizing F1 is chosen."""
        assert select_threshold(SCORES, LABELS) == pytest.approx(0.35)

    def test_ties_go_to_largest(self):
        """Test equal F1 picks the largest candidate."""
        assert select_threshold([0.2, 0.9], [0, 1]) == pytest.approx(0.9)


@pytest.mark.unit
class TestEvaluateScores:
    """Tests for evaluate_scores function."""

    def test_report_at_threshold(self):
        """Test the threshold drives the confusion-based metrics."""
        report = evaluate_scores(SCORES, LABELS, threshold=0.35, patient_ids=["a", "a", "b", "c"])
        assert report.accuracy == pytest.approx(0.75)
        assert report.recall == pytest.approx(1.0)
        assert report.precision == pytest.approx(2 / 3)
        assert report.auroc == pytest.approx(0.75)
        assert report.n_patients == 3 and report.n_windows == 4
        assert report.roc_curve[0] == [0.0, 0.0]

    def test_to_dict(self):
        """Test the report serializes with nested calibration."""
        data = evaluate_scores(SCORES, LABELS).to_dict()
        assert "ece" in data["calibration"]
        assert data["threshold"] == 0.5

    def test_scores_outside_unit_interval(self):
        """Test non-probability scores are refused."""
        with pytest.raises(ValueError, match="probabilities"):
            evaluate_scores([0.1, 1.5], [0, 1])
