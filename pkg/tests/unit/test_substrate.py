"""Unit tests for substrate module."""

import json
import struct

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.substrate import (
    CHECKPOINT_MAGIC,
    Adam,
    CheckpointError,
    check_shapes,
    checkpoint_load,
    checkpoint_save,
    clip_global_norm,
    cosine_lr,
    finite_difference_check,
    global_grad_norm,
    module_tensors,
    optimizer_tensors,
    plateau_lr,
    primitive_suite,
    restore_module,
    set_seed,
)


@pytest.mark.unit
class TestPrimitives:
    """Tests for primitive behavior and gradient checks."""

    def test_relu_subgradient(self):
        """Test ReLU passes upstream gradient for x > 0 and zero for x <= 0."""
        x = torch.tensor([-1.0, 0.0, 2.0], requires_grad=True)
        F.relu(x).backward(torch.tensor([3.0, 3.0, 3.0]))
        assert x.grad.tolist() == [0.0, 0.0, 3.0]

    def test_identity_kernel(self):
        """Test a centered unit kernel reproduces the input interior."""
        x = torch.randn(1, 1, 10)
        w = torch.tensor([[[0.0, 1.0, 0.0]]])
        out = F.conv1d(x, w)
        torch.testing.assert_close(out[0, 0], x[0, 0, 1:-1])

    @pytest.mark.parametrize("name", sorted(primitive_suite(0)))
    def test_primitive_gradients(self, name):
        """Test every primitive against central finite differences."""
        fn, inputs = primitive_suite(0)[name]
        result = finite_difference_check(fn, inputs, name=name)
        assert result.passed(1e-4), f"{name}: {result.max_rel_error:.2e}"

    def test_check_detects_wrong_gradient(self):
        """Test a function with a wrong backward fails the check."""

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return x ** 2

            @staticmethod
            def backward(ctx, grad):
                return grad * 0.0

        x = torch.randn(4, dtype=torch.float64, requires_grad=True) + 2.0
        result = finite_difference_check(Wrong.apply, [x.detach().requires_grad_(True)])
        assert not result.passed(1e-4)

    def test_check_shapes(self):
        """Test shape mismatch names both shapes; None matches anything."""
        check_shapes("enc", (None, 4000), (3, 4000))
        with pytest.raises(ValueError, match=r"\(None, 4000\).*\(3, 3999\)"):
            check_shapes("enc", (None, 4000), (3, 3999))


@pytest.mark.unit
class TestAdam:
    """Tests for the Adam optimizer."""

    def test_zero_gradient_keeps_parameter(self):
        """Test a zero gradient leaves the parameter unchanged."""
        p = nn.Parameter(torch.tensor([1.5]))
        optimizer = Adam([p], lr=0.1)
        p.grad = torch.zeros(1)
        optimizer.step()
        assert p.item() == 1.5

    def test_first_step_magnitude(self):
        """Test the first step moves by about lr."""
        p = nn.Parameter(torch.tensor([0.0], dtype=torch.float64))
        optimizer = Adam([p], lr=0.1)
        p.grad = torch.tensor([1.0], dtype=torch.float64)
        optimizer.step()
        assert p.item() == pytest.approx(-0.1, rel=1e-6)

    def test_non_finite_step_skipped(self):
        """Test a NaN gradient skips the step and is counted."""
        p = nn.Parameter(torch.tensor([1.0]))
        optimizer = Adam([p], lr=0.1)
        p.grad = torch.tensor([float("nan")])
        optimizer.step()
        assert p.item() == 1.0
        assert optimizer.skipped_steps == 1

    def test_identical_runs(self):
        """Test two seeded runs give identical trajectories."""

        def run():
            set_seed(3)
            model = nn.Linear(4, 1)
            optimizer = Adam(model.parameters(), lr=0.01)
            x = torch.randn(8, 4)
            losses = []
            for _ in range(5):
                loss = (model(x) ** 2).mean()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
            return losses

        assert run() == run()

    def test_optimizer_tensors(self):
        """Test Adam moments are exported under parameter names."""
        model = nn.Linear(2, 1)
        optimizer = Adam(model.parameters(), lr=0.01)
        model(torch.ones(1, 2)).sum().backward()
        optimizer.step()
        tensors = optimizer_tensors(optimizer, dict(model.named_parameters()))
        assert set(tensors) == {
            f"optim.{name}.{key}" for name in ("weight", "bias") for key in ("exp_avg", "exp_avg_sq", "step")
        }


@pytest.mark.unit
class TestSchedules:
    """Tests for cosine and plateau schedules."""

    def test_cosine_endpoints(self):
        """Test start, midpoint and end of the cosine schedule."""
        assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3)
        assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)
        assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-12)

    def test_cosine_rejects_empty_schedule(self):
        """Test T = 0 and out-of-range steps are errors."""
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 1e-3)
        with pytest.raises(ValueError):
            cosine_lr(101, 100, 1e-3)

    def test_plateau_improving(self):
        """Test a strictly improving series never reduces."""
        assert plateau_lr([5.0, 4.0, 3.0, 2.0, 1.0], patience=3, factor=0.5) == 1.0

    def test_plateau_flat(self):
        """Test a flat series reduces after patience bad epochs."""
        assert plateau_lr([1.0, 1.0, 1.0], patience=3, factor=0.5) == 1.0
        assert plateau_lr([1.0, 1.0, 1.0, 1.0], patience=3, factor=0.5) == 0.5

    def test_plateau_twice(self):
        """Test two reductions quarter the rate."""
        assert plateau_lr([1.0] * 7, patience=3, factor=0.5) == 0.25


@pytest.mark.unit
class TestClipping:
    """Tests for global-norm clipping."""

    def _params(self, *grads):
        params = []
        for g in grads:
            p = nn.Parameter(torch.zeros(len(g)))
            p.grad = torch.tensor(g)
            params.append(p)
        return params

    def test_small_norm_unchanged(self):
        """Test a norm of 0.5 is left alone."""
        params = self._params([0.3], [0.4])
        assert clip_global_norm(params, 1.0) == pytest.approx(0.5)
        assert params[0].grad.item() == pytest.approx(0.3)

    def test_large_norm_scaled(self):
        """Test a norm of 4.0 is scaled to 1.0."""
        params = self._params([0.0, 4.0])
        assert clip_global_norm(params, 1.0) == pytest.approx(4.0)
        assert global_grad_norm(params) == pytest.approx(1.0, abs=1e-6)

    def test_zero_gradients(self):
        """Test all-zero gradients stay zero."""
        params = self._params([0.0, 0.0])
        clip_global_norm(params, 1.0)
        assert params[0].grad.tolist() == [0.0, 0.0]


@pytest.mark.unit
class TestCheckpoints:
    """Tests for the checkpoint file format."""

    def _tensors(self):
        return {
            "a.weight": torch.randn(3, 4),
            "a.bias": torch.randn(3, dtype=torch.float64),
            "ids": torch.tensor([0, 1], dtype=torch.int64),
        }

    def test_round_trip_bitwise(self, tmp_path):
        """Test every tensor comes back bitwise equal."""
        tensors = self._tensors()
        checkpoint_save(tmp_path / "c.ckpt", tensors, hyperparameters={"d": 4}, metadata={"stage": "pretrain"})
        loaded = checkpoint_load(tmp_path / "c.ckpt")
        assert loaded.hyperparameters == {"d": 4}
        assert loaded.metadata == {"stage": "pretrain"}
        for name, value in tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], value.numpy())
            assert loaded.tensors[name].dtype == value.numpy().dtype

    def test_truncated_payload(self, tmp_path):
        """Test a truncated file names the tensor it cut into."""
        path = tmp_path / "c.ckpt"
        checkpoint_save(path, {"only": torch.zeros(16)})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="only"):
            checkpoint_load(path)

    def test_bad_magic(self, tmp_path):
        """Test a file without the magic is rejected."""
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            checkpoint_load(path)

    def test_schema_version(self, tmp_path):
        """Test an unknown schema version is rejected."""
        header = json.dumps({"schema_version": 99, "tensors": {}}).encode()
        path = tmp_path / "c.ckpt"
        path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header)
        with pytest.raises(CheckpointError, match="schema version"):
            checkpoint_load(path)

    def test_subset(self, tmp_path):
        """Test prefix selection strips the prefix."""
        checkpoint_save(tmp_path / "c.ckpt", self._tensors())
        loaded = checkpoint_load(tmp_path / "c.ckpt")
        assert set(loaded.subset("a")) == {"weight", "bias"}
        assert loaded.has("a") and not loaded.has("b")

    def test_restore_module(self, tmp_path):
        """Test a module restores from its own tensors."""
        source, target = nn.Linear(3, 2), nn.Linear(3, 2)
        checkpoint_save(tmp_path / "c.ckpt", module_tensors(source, "lin"))
        restore_module(target, checkpoint_load(tmp_path / "c.ckpt"), "lin")
        torch.testing.assert_close(target.weight, source.weight)

    def test_restore_missing_tensor(self, tmp_path):
        """Test a model with an extra parameter reports the missing tensor."""
        checkpoint_save(tmp_path / "c.ckpt", module_tensors(nn.Linear(3, 2, bias=False), "lin"))
        with pytest.raises(CheckpointError, match="missing tensor lin.bias"):
            restore_module(nn.Linear(3, 2), checkpoint_load(tmp_path / "c.ckpt"), "lin")

    def test_restore_shape_mismatch(self, tmp_path):
        """Test a shape mismatch is reported."""
        checkpoint_save(tmp_path / "c.ckpt", module_tensors(nn.Linear(3, 2), "lin"))
        with pytest.raises(CheckpointError, match="shape"):
            restore_module(nn.Linear(4, 2), checkpoint_load(tmp_path / "c.ckpt"), "lin")

    def test_unsupported_dtype(self, tmp_path):
        """Test an unsupported dtype is refused on save."""
        with pytest.raises(CheckpointError, match="dtype"):
            checkpoint_save(tmp_path / "c.ckpt", {"x": torch.zeros(2, dtype=torch.float16)})
