"""
Self-supervised objectives.

NT-Xent over positive view pairs, a debiased entropic Wasserstein term
computed with log-domain Sinkhorn iterations, their weighted combination,
and the within-path plus cross-modal composition used for pretraining.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F

from stethonet.config import LossConfig, SinkhornConfig
from stethonet.encoders import EmbeddingBatch

logger = logging.getLogger(__name__)

Embeddings = Union[torch.Tensor, EmbeddingBatch]


@dataclass
class HybridTerm:
    total: torch.Tensor
    ntxent: float
    wasserstein: float


@dataclass
class LossBreakdown:
    """
    total = alpha * wasserstein + (1 - alpha) * ntxent
          = w_1d * term_1d + w_2d * term_2d + w_cross * term_cross

    ntxent and wasserstein are the composition-weighted sums of their parts.
    """

    total: torch.Tensor
    ntxent: float
    wasserstein: float
    term_1d: float
    term_2d: float
    term_cross: float

    def to_dict(self) -> dict:
        return {
            "total": float(self.total),
            "ntxent": self.ntxent,
            "wasserstein": self.wasserstein,
            "term_1d": self.term_1d,
            "term_2d": self.term_2d,
            "term_cross": self.term_cross,
        }


def _pair(za: Embeddings, zb: Embeddings, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
    if isinstance(za, EmbeddingBatch) and isinstance(zb, EmbeddingBatch) and za.ids != zb.ids:
        raise ValueError(f"{name}: batches are not row-aligned")
    a = za.vectors if isinstance(za, EmbeddingBatch) else za
    b = zb.vectors if isinstance(zb, EmbeddingBatch) else zb
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def ntxent(za: Embeddings, zb: Embeddings, temperature: float = 0.07) -> torch.Tensor:
    """
    Normalized temperature-scaled cross-entropy over 2N stacked embeddings.

    Row i of za and row i of zb are positives; every other row is a negative.
    The loss is averaged over all 2N anchors with self-similarity masked.
    """
    a, b = _pair(za, zb, "ntxent")
    n = a.shape[0]
    z = F.normalize(torch.cat([a, b], dim=0), dim=1)
    logits = (z @ z.T) / temperature
    self_mask = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    targets = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    return F.cross_entropy(logits, targets)


def squared_distances(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)


def entropic_ot(
    x: torch.Tensor,
    y: torch.Tensor,
    epsilon: float,
    max_iters: int = 200,
    marginal_tol: float = 1e-6,
) -> Tuple[torch.Tensor, int]:
    """
    Entropic OT between uniform empirical measures with squared Euclidean cost.

    Log-domain Sinkhorn updates on the dual potentials; the returned value is
    <a, f> + <b, g>. Iteration stops once the row-marginal L1 violation drops
    below marginal_tol (never, when marginal_tol is 0) or after max_iters.
    Gradients flow through the unrolled iterations.
    """
    cost = squared_distances(x, y)
    n, m = cost.shape
    log_a = torch.full((n,), -math.log(n), dtype=cost.dtype, device=cost.device)
    log_b = torch.full((m,), -math.log(m), dtype=cost.dtype, device=cost.device)
    f = torch.zeros(n, dtype=cost.dtype, device=cost.device)
    g = torch.zeros(m, dtype=cost.dtype, device=cost.device)

    iters = 0
    for iters in range(1, max_iters + 1):
        f = -epsilon * torch.logsumexp(log_b[None, :] + (g[None, :] - cost) / epsilon, dim=1)
        g = -epsilon * torch.logsumexp(log_a[:, None] + (f[:, None] - cost) / epsilon, dim=0)
        if marginal_tol > 0:
            with torch.no_grad():
                log_plan = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - cost) / epsilon
                violation = (log_plan.exp().sum(dim=1) - log_a.exp()).abs().sum()
            if violation < marginal_tol:
                break

    value = log_a.exp() @ f + log_b.exp() @ g
    return value, iters


def sinkhorn_w2(
    za: Embeddings,
    zb: Embeddings,
    cfg: Optional[SinkhornConfig] = None,
    normalize: bool = True,
) -> torch.Tensor:
    """
    Debiased Sinkhorn divergence OT(a, b) - OT(a, a)/2 - OT(b, b)/2,
    clamped at zero.

    Embeddings are L2-normalized first unless normalize is False. With
    debiasing off this is the plain entropic OT value.
    """
    cfg = cfg or SinkhornConfig()
    a, b = _pair(za, zb, "sinkhorn_w2")
    if normalize:
        a, b = F.normalize(a, dim=1), F.normalize(b, dim=1)

    cross, iters = entropic_ot(a, b, cfg.epsilon, cfg.max_iters, cfg.marginal_tol)
    if iters == cfg.max_iters and cfg.marginal_tol > 0:
        logger.debug(f"Sinkhorn hit max_iters={cfg.max_iters} before the marginal tolerance")
    if not cfg.debiased:
        return cross
    self_a, _ = entropic_ot(a, a, cfg.epsilon, cfg.max_iters, cfg.marginal_tol)
    self_b, _ = entropic_ot(b, b, cfg.epsilon, cfg.max_iters, cfg.marginal_tol)
    # Early stopping can leave the debiased sum slightly below zero
    return torch.clamp_min(cross - 0.5 * self_a - 0.5 * self_b, 0.0)


def hybrid(za: Embeddings, zb: Embeddings, cfg: Optional[LossConfig] = None) -> HybridTerm:
    """alpha * W + (1 - alpha) * NT-Xent. The Sinkhorn term is skipped when alpha is 0."""
    cfg = cfg or LossConfig()
    contrastive = ntxent(za, zb, cfg.temperature)
    if cfg.alpha == 0.0:
        return HybridTerm(total=contrastive, ntxent=float(contrastive), wasserstein=0.0)
    transport = sinkhorn_w2(za, zb, cfg.sinkhorn)
    if cfg.alpha == 1.0:
        total = transport
    else:
        total = cfg.alpha * transport + (1.0 - cfg.alpha) * contrastive
    return HybridTerm(total=total, ntxent=float(contrastive), wasserstein=float(transport))


def pretrain_objective(
    z1a: Embeddings,
    z1b: Embeddings,
    z2a: Optional[Embeddings],
    z2b: Optional[Embeddings],
    cfg: Optional[LossConfig] = None,
) -> LossBreakdown:
    """
    w_1d hybrid(z1a, z1b) + w_2d hybrid(z2a, z2b)
    + w_cross [hybrid(z1a, z2a) + hybrid(z1b, z2b)] / 2

    Cross-modal pairs match same-view rows. Zero-weight terms are not
    computed, so a single-path run passes None for the 2D views.
    """
    cfg = cfg or LossConfig()
    if (z2a is None or z2b is None) and (cfg.w_2d or cfg.w_cross):
        raise ValueError("2D views are required when w_2d or w_cross is non-zero")

    zero = torch.zeros((), dtype=_vectors(z1a).dtype)
    terms = {"1d": None, "2d": None, "cross": None}
    parts_n = parts_w = 0.0
    total = zero

    if cfg.w_1d:
        t = hybrid(z1a, z1b, cfg)
        terms["1d"] = t.total
        total = total + cfg.w_1d * t.total
        parts_n += cfg.w_1d * t.ntxent
        parts_w += cfg.w_1d * t.wasserstein
    if cfg.w_2d:
        t = hybrid(z2a, z2b, cfg)
        terms["2d"] = t.total
        total = total + cfg.w_2d * t.total
        parts_n += cfg.w_2d * t.ntxent
        parts_w += cfg.w_2d * t.wasserstein
    if cfg.w_cross:
        ta, tb = hybrid(z1a, z2a, cfg), hybrid(z1b, z2b, cfg)
        terms["cross"] = 0.5 * (ta.total + tb.total)
        total = total + cfg.w_cross * terms["cross"]
        parts_n += cfg.w_cross * 0.5 * (ta.ntxent + tb.ntxent)
        parts_w += cfg.w_cross * 0.5 * (ta.wasserstein + tb.wasserstein)

    return LossBreakdown(
        total=total,
        ntxent=parts_n,
        wasserstein=parts_w,
        term_1d=float(terms["1d"]) if terms["1d"] is not None else 0.0,
        term_2d=float(terms["2d"]) if terms["2d"] is not None else 0.0,
        term_cross=float(terms["cross"]) if terms["cross"] is not None else 0.0,
    )


def _vectors(z: Embeddings) -> torch.Tensor:
    return z.vectors if isinstance(z, EmbeddingBatch) else z
