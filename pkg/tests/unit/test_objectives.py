"""Unit tests for objectives module."""

import itertools
import math

import pytest
import torch
import torch.nn.functional as F

from stethonet.config import LossConfig, SinkhornConfig
from stethonet.encoders import EmbeddingBatch
from stethonet.objectives import (
    entropic_ot,
    hybrid,
    ntxent,
    pretrain_objective,
    sinkhorn_w2,
)


def _naive_ntxent(a, b, tau):
    z = F.normalize(torch.cat([a, b]), dim=1)
    n = a.shape[0]
    total = 0.0
    for i in range(2 * n):
        j = (i + n) % (2 * n)
        denom = sum(math.exp(float(z[i] @ z[k]) / tau) for k in range(2 * n) if k != i)
        total += -math.log(math.exp(float(z[i] @ z[j]) / tau) / denom)
    return total / (2 * n)


def _exact_ot(x, y):
    """Exact OT between uniform measures of equal size: best permutation."""
    n = x.shape[0]
    cost = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return min(sum(float(cost[i, p[i]]) for i in range(n)) / n for p in itertools.permutations(range(n)))


@pytest.mark.unit
class TestNTXent:
    """Tests for ntxent function."""

    def test_single_pair_is_zero(self):
        """Test N=1 has no negatives and zero loss."""
        a, b = torch.randn(1, 4), torch.randn(1, 4)
        assert float(ntxent(a, b)) == pytest.approx(0.0, abs=1e-7)

    def test_orthogonal_negatives(self):
        """Test identical positives with orthogonal negatives at tau 0.07."""
        a = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        expected = -math.log(math.exp(1 / 0.07) / (math.exp(1 / 0.07) + 2))
        assert float(ntxent(a, a.clone(), 0.07)) == pytest.approx(expected, rel=1e-6)
        assert expected == pytest.approx(1.25e-6, rel=0.05)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_naive_loop(self, seed):
        """Test random batches against a double-loop reference."""
        g = torch.Generator().manual_seed(seed)
        n = int(torch.randint(2, 9, (1,), generator=g))
        dim = int(torch.randint(2, 7, (1,), generator=g))
        tau = float(torch.empty(1, dtype=torch.float64).uniform_(0.1, 1.0, generator=g))
        a = torch.randn(n, dim, generator=g, dtype=torch.float64)
        b = torch.randn(n, dim, generator=g, dtype=torch.float64)
        assert float(ntxent(a, b, tau)) == pytest.approx(_naive_ntxent(a, b, tau), abs=1e-6)

    def test_misaligned_batches(self):
        """Test batches with different ids are refused."""
        a = EmbeddingBatch(["x", "y"], torch.randn(2, 3))
        b = EmbeddingBatch(["x", "z"], torch.randn(2, 3))
        with pytest.raises(ValueError, match="row-aligned"):
            ntxent(a, b)

    def test_empty_batch(self):
        """Test an empty batch is refused."""
        with pytest.raises(ValueError, match="empty"):
            ntxent(torch.zeros(0, 3), torch.zeros(0, 3))


@pytest.mark.unit
class TestSinkhorn:
    """Tests for the entropic Wasserstein term."""

    def test_identical_batches(self):
        """Test the debiased divergence of a batch with itself is zero."""
        x = torch.randn(6, 4, dtype=torch.float64)
        assert float(sinkhorn_w2(x, x.clone())) == pytest.approx(0.0, abs=1e-6)

    def test_single_atoms(self):
        """Test one-point measures cost the squared distance."""
        a = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
        b = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
        value = sinkhorn_w2(a, b, SinkhornConfig(epsilon=0.05), normalize=False)
        assert float(value) == pytest.approx(5.0, abs=1e-6)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_converges_to_exact_ot(self, n):
        """Test small batches at epsilon 0.001 land within 1% of exact OT."""
        g = torch.Generator().manual_seed(n)
        x = torch.rand(n, 2, generator=g, dtype=torch.float64)
        y = torch.rand(n, 2, generator=g, dtype=torch.float64) + 1.0
        exact = _exact_ot(x, y)
        cfg = SinkhornConfig(epsilon=0.001, max_iters=5000, marginal_tol=1e-9, debiased=False)
        value = float(sinkhorn_w2(x, y, cfg, normalize=False))
        assert abs(value - exact) / exact <= 0.01

    def test_approaches_exact_as_epsilon_shrinks(self):
        """Test the error against exact OT shrinks with epsilon."""
        g = torch.Generator().manual_seed(1)
        x = torch.rand(3, 2, generator=g, dtype=torch.float64)
        y = torch.rand(3, 2, generator=g, dtype=torch.float64) + 1.0
        exact = _exact_ot(x, y)
        errors = [
            abs(float(sinkhorn_w2(x, y, SinkhornConfig(epsilon=eps, max_iters=5000, marginal_tol=1e-9, debiased=False), normalize=False)) - exact)
            for eps in (0.1, 0.01, 0.001)
        ]
        assert errors[0] >= errors[1] >= errors[2]

    def test_symmetric_and_non_negative(self):
        """Test W(a, b) = W(b, a) >= 0."""
        g = torch.Generator().manual_seed(2)
        a = torch.randn(5, 4, generator=g, dtype=torch.float64)
        b = torch.randn(5, 4, generator=g, dtype=torch.float64)
        cfg = SinkhornConfig(epsilon=0.1, max_iters=2000, marginal_tol=1e-10)
        ab, ba = float(sinkhorn_w2(a, b, cfg)), float(sinkhorn_w2(b, a, cfg))
        assert ab == pytest.approx(ba, abs=1e-5)
        assert ab >= -1e-6

    def test_fixed_iterations_without_tolerance(self):
        """Test marginal_tol 0 runs every iteration."""
        x = torch.randn(3, 2, dtype=torch.float64)
        _, iters = entropic_ot(x, x, epsilon=0.5, max_iters=17, marginal_tol=0.0)
        assert iters == 17

    @pytest.mark.parametrize("seed", range(20))
    def test_nearly_identical_clouds_not_negative(self, seed):
        """Test early-stopped divergence of nearly identical clouds stays non-negative."""
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(8, 4, generator=g, dtype=torch.float64)
        y = x + 1e-4 * torch.randn(8, 4, generator=g, dtype=torch.float64)
        cfg = SinkhornConfig(epsilon=0.05, max_iters=3, marginal_tol=1e-1)
        assert float(sinkhorn_w2(x, y, cfg)) >= 0.0


@pytest.mark.unit
class TestHybrid:
    """Tests for the weighted combination."""

    def _pair(self):
        g = torch.Generator().manual_seed(3)
        return torch.randn(4, 3, generator=g, dtype=torch.float64), torch.randn(4, 3, generator=g, dtype=torch.float64)

    def test_alpha_zero_is_ntxent(self):
        """Test alpha 0 returns NT-Xent exactly."""
        a, b = self._pair()
        cfg = LossConfig(alpha=0.0, temperature=0.1)
        assert float(hybrid(a, b, cfg).total) == float(ntxent(a, b, 0.1))

    def test_alpha_one_is_sinkhorn(self):
        """Test alpha 1 returns the Sinkhorn term exactly."""
        a, b = self._pair()
        cfg = LossConfig(alpha=1.0)
        assert float(hybrid(a, b, cfg).total) == float(sinkhorn_w2(a, b, cfg.sinkhorn))

    def test_weighted_sum(self):
        """Test the blend of the two components."""
        a, b = self._pair()
        term = hybrid(a, b, LossConfig(alpha=0.3))
        assert float(term.total) == pytest.approx(0.3 * term.wasserstein + 0.7 * term.ntxent, abs=1e-9)
        assert 0.3 * 2.0 + 0.7 * 1.0 == pytest.approx(1.3)


@pytest.mark.unit
class TestPretrainObjective:
    """Tests for the composed pretraining loss."""

    def _batches(self, seed=4):
        g = torch.Generator().manual_seed(seed)
        return [torch.randn(4, 3, generator=g, dtype=torch.float64) for _ in range(4)]

    def test_identical_singleton_batches(self):
        """Test four identical single-row batches give zero loss."""
        x = torch.randn(1, 3, dtype=torch.float64)
        breakdown = pretrain_objective(x, x.clone(), x.clone(), x.clone(), LossConfig(alpha=0.3))
        assert float(breakdown.total) == pytest.approx(0.0, abs=1e-5)

    def test_within_1d_only(self):
        """Test weights (1, 0, 0) reduce to the within-1D term."""
        z1a, z1b, _, _ = self._batches()
        cfg = LossConfig(w_1d=1.0, w_2d=0.0, w_cross=0.0)
        breakdown = pretrain_objective(z1a, z1b, None, None, cfg)
        assert float(breakdown.total) == pytest.approx(float(hybrid(z1a, z1b, cfg).total), abs=1e-12)
        assert breakdown.term_2d == 0.0 and breakdown.term_cross == 0.0

    def test_parts_recombine(self):
        """Test the breakdown recombines to the total both ways."""
        cfg = LossConfig(alpha=0.3)
        breakdown = pretrain_objective(*self._batches(), cfg)
        total = float(breakdown.total)
        by_terms = cfg.w_1d * breakdown.term_1d + cfg.w_2d * breakdown.term_2d + cfg.w_cross * breakdown.term_cross
        by_parts = cfg.alpha * breakdown.wasserstein + (1 - cfg.alpha) * breakdown.ntxent
        assert total == pytest.approx(by_terms, abs=1e-6)
        assert total == pytest.approx(by_parts, abs=1e-6)

    def test_missing_2d_views(self):
        """Test 2D terms without 2D views are refused."""
        z1a, z1b, _, _ = self._batches()
        with pytest.raises(ValueError, match="2D views"):
            pretrain_objective(z1a, z1b, None, None, LossConfig())

    def test_gradients_flow(self):
        """Test the total is differentiable in every view."""
        views = [v.requires_grad_(True) for v in self._batches()]
        pretrain_objective(*views, LossConfig()).total.backward()
        assert all(v.grad is not None and torch.isfinite(v.grad).all() for v in views)
