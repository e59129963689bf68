"""Integration tests for label-efficiency curves."""

import math

import pytest

from stethonet.efficiency import efficiency_curve
from stethonet.training import pretrain


@pytest.mark.integration
@pytest.mark.slow
class TestEfficiencyCurve:
    """Tests for efficiency_curve function."""

    def test_rows_per_fraction(self, tiny_run_config, toy_train, toy_val, toy_test):
        """Test one row per fraction, nested subsets and the full set at 1.0."""
        pretrained = pretrain(tiny_run_config, toy_train).bundle
        rows = efficiency_curve(
            tiny_run_config, toy_train, toy_val, toy_test,
            fractions=(1.0, 0.5), pretrained=pretrained, n_boot=20,
        )
        assert [row.fraction for row in rows] == [0.5, 1.0]
        assert rows[0].n_patients < rows[1].n_patients
        assert rows[1].n_patients == len(set(toy_train.patient_ids))
        assert rows[1].n_windows == len(toy_train)

    def test_row_fields(self, tiny_run_config, toy_train, toy_val, toy_test):
        """Test F1 values, CIs and ratios are consistent."""
        rows = efficiency_curve(tiny_run_config, toy_train, toy_val, toy_test, fractions=(1.0,), n_boot=20)
        row = rows[0]
        assert 0.0 <= row.ssl_f1 <= 1.0 and 0.0 <= row.supervised_f1 <= 1.0
        assert row.ssl_ci[0] <= row.ssl_ci[1]
        if row.supervised_f1 > 0:
            assert row.efficiency_ratio == pytest.approx(row.ssl_f1 / row.supervised_f1)
            assert row.relative_improvement == pytest.approx(row.efficiency_ratio - 1.0)
        else:
            assert math.isinf(row.efficiency_ratio)
        assert set(row.to_dict()) >= {"fraction", "ssl_f1", "supervised_f1", "efficiency_ratio"}

    def test_pretrained_bundle_untouched(self, tiny_run_config, toy_train, toy_val, toy_test):
        """Test each fraction fine-tunes a copy of the shared checkpoint."""
        pretrained = pretrain(tiny_run_config, toy_train).bundle
        efficiency_curve(tiny_run_config, toy_train, toy_val, toy_test, fractions=(1.0,), pretrained=pretrained, n_boot=20)
        assert pretrained.stage == "pretrain"
        assert pretrained.head is None
