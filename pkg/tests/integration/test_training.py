"""Integration tests for the training stages on separable toy windows."""

import copy

import numpy as np
import pytest
import torch

from stethonet.config import apply_preset
from stethonet.models import load_bundle, save_bundle, score_windows
from stethonet.substrate import CheckpointError
from stethonet.training import pretrain, train_linear_baseline, train_proto
from stethonet.windows import SplitError


def _backbone_snapshot(network):
    modules = {"tcn": network.tcn, "enc2d": network.enc2d}
    return {
        f"{prefix}.{name}": p.detach().clone()
        for prefix, module in modules.items() if module is not None
        for name, p in module.named_parameters()
    }


def _same(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


@pytest.fixture
def pretrained(tiny_run_config, toy_train):
    return pretrain(tiny_run_config, toy_train).bundle


@pytest.mark.integration
class TestPretrain:
    """Tests for contrastive pretraining."""

    def test_identical_seeded_runs(self, tiny_run_config, toy_train):
        """Test two runs with one seed give identical loss trajectories."""
        first = pretrain(tiny_run_config, toy_train)
        second = pretrain(tiny_run_config, toy_train)
        assert first.history["batch_loss"] == second.history["batch_loss"]

    def test_history_and_metadata(self, tiny_run_config, toy_train):
        """Test per-epoch losses are finite and recorded on the bundle."""
        result = pretrain(tiny_run_config, toy_train)
        assert len(result.history["loss"]) == tiny_run_config.pretrain.epochs
        assert all(np.isfinite(result.history["loss"]))
        assert result.bundle.stage == "pretrain"
        assert result.bundle.metadata["loss_trajectory"] == result.history["loss"]
        # 16 windows in batches of 4, two epochs
        assert result.bundle.metadata["optimizer_steps"] == 8

    def test_needs_two_windows(self, tiny_run_config, toy_train):
        """Test a single training window is refused."""
        with pytest.raises(ValueError, match="at least 2"):
            pretrain(tiny_run_config, toy_train.subset([0]))

    def test_pretrain_bundle_cannot_score(self, pretrained, toy_val):
        """Test a pretrain-only bundle has no classifier."""
        with pytest.raises(CheckpointError, match="no classifier"):
            score_windows(pretrained, toy_val)


@pytest.mark.integration
class TestTrainProto:
    """Tests for prototypical fine-tuning."""

    def test_backbone_stays_frozen(self, tiny_run_config, pretrained, toy_train, toy_val):
        """Test encoder weights are unchanged while the head trains."""
        before = _backbone_snapshot(pretrained.network)
        result = train_proto(tiny_run_config, pretrained, toy_train, toy_val)
        assert _same(before, _backbone_snapshot(result.bundle.network))
        assert result.bundle.stage == "proto"
        assert result.bundle.prototypes.class_ids == [0, 1]
        assert result.bundle.prototypes.source == "full-train-cache"

    def test_threshold_from_validation(self, tiny_run_config, pretrained, toy_train, toy_val):
        """Test the frozen threshold is 0.5 or a validation score."""
        bundle = train_proto(tiny_run_config, pretrained, toy_train, toy_val).bundle
        _, scores = score_windows(bundle, toy_val)
        assert bundle.threshold == 0.5 or bundle.threshold in scores.tolist()
        assert np.all((scores >= 0) & (scores <= 1))

    def test_rejects_test_split(self, tiny_run_config, pretrained, toy_test):
        """Test training on the test split is refused."""
        with pytest.raises(SplitError, match="test split"):
            train_proto(tiny_run_config, pretrained, toy_test)

    def test_rejects_single_class(self, tiny_run_config, pretrained, toy_train):
        """Test a single-class training split is refused."""
        negatives = toy_train.subset([i for i, y in enumerate(toy_train.labels) if y == 0])
        with pytest.raises(SplitError, match="single class"):
            train_proto(tiny_run_config, pretrained, negatives)

    def test_bundle_round_trip(self, tmp_path, tiny_run_config, pretrained, toy_train, toy_val):
        """Test a saved and reloaded bundle scores identically."""
        result = train_proto(tiny_run_config, pretrained, toy_train, toy_val)
        save_bundle(tmp_path / "proto.ckpt", result.bundle, result.optimizer, result.named_params)
        loaded = load_bundle(tmp_path / "proto.ckpt")
        assert loaded.stage == "proto"
        assert loaded.threshold == pytest.approx(result.bundle.threshold)
        _, expected = score_windows(result.bundle, toy_val)
        _, actual = score_windows(loaded, toy_val)
        np.testing.assert_allclose(actual, expected, atol=1e-6)

    def test_checkpoint_architecture_survives_reload(self, tmp_path, tiny_run_config, toy_train, toy_val):
        """Test a head trained over a dual-path-base backbone reloads under the default run config."""
        base_config = apply_preset(copy.deepcopy(tiny_run_config), "dual-path-base")
        base = pretrain(base_config, toy_train).bundle
        result = train_proto(tiny_run_config, base, toy_train, toy_val)
        assert result.bundle.config.ablation == base_config.ablation
        save_bundle(tmp_path / "proto.ckpt", result.bundle, result.optimizer, result.named_params)
        loaded = load_bundle(tmp_path / "proto.ckpt")
        assert loaded.config.preset == "dual-path-base"
        _, expected = score_windows(result.bundle, toy_val)
        _, actual = score_windows(loaded, toy_val)
        np.testing.assert_allclose(actual, expected, atol=1e-6)


@pytest.mark.integration
class TestLinearBaseline:
    """Tests for the linear-probe baseline."""

    def test_backbone_frozen_during_freeze_epochs(self, tiny_run_config, pretrained, toy_train, toy_val):
        """Test the backbone is untouched when every epoch is a freeze epoch."""
        config = copy.deepcopy(tiny_run_config)
        config.baseline.epochs = config.baseline.freeze_epochs
        before = _backbone_snapshot(pretrained.network)
        result = train_linear_baseline(config, pretrained, toy_train, toy_val)
        assert _same(before, _backbone_snapshot(result.bundle.network))

    def test_backbone_trains_after_unfreezing(self, tiny_run_config, pretrained, toy_train, toy_val):
        """Test the backbone moves once the freeze epochs are over."""
        before = _backbone_snapshot(pretrained.network)
        result = train_linear_baseline(tiny_run_config, pretrained, toy_train, toy_val)
        assert not _same(before, _backbone_snapshot(result.bundle.network))
        assert len(result.history["lr_multiplier"]) == tiny_run_config.baseline.epochs

    def test_from_scratch(self, tiny_run_config, toy_train, toy_val):
        """Test the supervised baseline trains without a checkpoint."""
        result = train_linear_baseline(tiny_run_config, None, toy_train, toy_val)
        assert result.bundle.metadata["from_scratch"] is True
        assert len(result.history["val_loss"]) == tiny_run_config.baseline.epochs
        labels, scores = score_windows(result.bundle, toy_val)
        assert set(labels.tolist()) <= {0, 1}
        assert scores.shape == (len(toy_val),)

    def test_rejects_test_split(self, tiny_run_config, toy_test):
        """Test training on the test split is refused."""
        with pytest.raises(SplitError, match="test split"):
            train_linear_baseline(tiny_run_config, None, toy_test)

    def test_checkpoint_architecture_survives_reload(self, tmp_path, tiny_run_config, toy_train, toy_val):
        """Test a linear probe over a single-path backbone reloads under the default run config."""
        base_config = apply_preset(copy.deepcopy(tiny_run_config), "single-path-base")
        base = pretrain(base_config, toy_train).bundle
        result = train_linear_baseline(tiny_run_config, base, toy_train, toy_val)
        save_bundle(tmp_path / "linear.ckpt", result.bundle, result.optimizer, result.named_params)
        loaded = load_bundle(tmp_path / "linear.ckpt")
        assert loaded.config.ablation.dual_path is False
        assert loaded.network.enc2d is None
        labels, scores = score_windows(loaded, toy_val)
        assert scores.shape == (len(toy_val),)
