"""Finite-difference checks over every primitive, composed network, head and loss."""

import logging
from typing import Callable, Dict, List

import torch
import torch.nn.functional as F

from stethonet.config import EncoderConfig, ProtoHeadConfig, SinkhornConfig, LossConfig
from stethonet.encoders.fusion import FusionLayer
from stethonet.encoders.resnet2d import ResNet2dEncoder
from stethonet.encoders.shallow import ShallowConv1d, ShallowConv2d
from stethonet.encoders.tcn import TCNEncoder
from stethonet.objectives import hybrid, ntxent, sinkhorn_w2
from stethonet.protohead import LinearHead, ProtoHead, episodic_loss
from stethonet.substrate import GradCheckResult, check_module, finite_difference_check, primitive_suite

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4

# Small, dropout-free shapes keep the per-element finite differences cheap
SMALL_ENCODER = EncoderConfig(
    embed_dim=3,
    tcn_init_kernel=4,
    tcn_init_stride=2,
    tcn_init_pool=2,
    tcn_blocks=2,
    dropout=0.0,
    enc2d_widths=(2, 3),
    enc2d_blocks_per_stage=1,
)
SMALL_HEAD = ProtoHeadConfig(hidden=4, metric_dim=2, dropout=0.0)
SMOOTH_SINKHORN = SinkhornConfig(epsilon=0.5, max_iters=30, marginal_tol=0.0)


def _rand(generator: torch.Generator, *shape: int) -> torch.Tensor:
    return torch.randn(*shape, generator=generator, dtype=torch.float64)


def network_checks(seed: int = 0) -> Dict[str, Callable[[], GradCheckResult]]:
    g = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)

    tcn = TCNEncoder(SMALL_ENCODER, window_samples=32)
    resnet = ResNet2dEncoder(SMALL_ENCODER, n_mels=8, n_frames=8)
    shallow_1d = ShallowConv1d(SMALL_ENCODER, window_samples=64, widths=(2, 3, 2))
    shallow_2d = ShallowConv2d(SMALL_ENCODER, n_mels=8, n_frames=8, widths=(2, 2, 2))
    fusion = FusionLayer(3, dropout=0.0)
    proto = ProtoHead(3, SMALL_HEAD)
    linear = LinearHead(3)

    waves, long_waves = _rand(g, 2, 32), _rand(g, 2, 64)
    specs = _rand(g, 3, 8, 8)
    z1, z2, z3 = _rand(g, 4, 3), _rand(g, 4, 3), _rand(g, 3, 3)
    targets = torch.tensor([0, 1, 1])

    class LinearLoss(torch.nn.Module):
        def __init__(self, head: LinearHead):
            super().__init__()
            self.head = head

        def forward(self, z: torch.Tensor) -> torch.Tensor:
            return F.cross_entropy(self.head(z), targets)

    return {
        "tcn": lambda: check_module(tcn, waves, name="tcn", seed=seed),
        "resnet2d": lambda: check_module(resnet, specs, name="resnet2d", seed=seed),
        "shallow1d": lambda: check_module(shallow_1d, long_waves, name="shallow1d", seed=seed),
        "shallow2d": lambda: check_module(shallow_2d, specs, name="shallow2d", seed=seed),
        "fusion": lambda: check_module(fusion, z1, z2, name="fusion", seed=seed),
        "proto_head": lambda: check_module(proto, z3, name="proto_head", seed=seed),
        "linear_head": lambda: check_module(LinearLoss(linear), z3, name="linear_head", seed=seed),
    }


def loss_checks(seed: int = 0) -> Dict[str, Callable[[], GradCheckResult]]:
    g = torch.Generator().manual_seed(seed)
    za, zb = _rand(g, 4, 3), _rand(g, 4, 3)
    support, query = _rand(g, 4, 2), _rand(g, 4, 2)
    hybrid_cfg = LossConfig(alpha=0.3, temperature=0.5, sinkhorn=SMOOTH_SINKHORN)

    def leaves(*xs: torch.Tensor) -> List[torch.Tensor]:
        return [x.clone().requires_grad_(True) for x in xs]

    return {
        "ntxent": lambda: finite_difference_check(
            lambda a, b: ntxent(a, b, temperature=0.5), leaves(za, zb), name="ntxent", seed=seed),
        "sinkhorn": lambda: finite_difference_check(
            lambda a, b: sinkhorn_w2(a, b, SMOOTH_SINKHORN), leaves(za, zb), name="sinkhorn", seed=seed),
        "hybrid": lambda: finite_difference_check(
            lambda a, b: hybrid(a, b, hybrid_cfg).total, leaves(za, zb), name="hybrid", seed=seed),
        "episodic": lambda: finite_difference_check(
            lambda s, q: episodic_loss(s, [0, 0, 1, 1], q, [0, 1, 0, 1]), leaves(support, query), name="episodic", seed=seed),
    }


def run_all(seed: int = 0) -> List[GradCheckResult]:
    """Every check, in a fixed order."""
    results = []
    for name, (fn, inputs) in primitive_suite(seed).items():
        results.append(finite_difference_check(fn, inputs, name=name, seed=seed))
    for check in list(network_checks(seed).values()) + list(loss_checks(seed).values()):
        results.append(check())
    for result in results:
        status = "ok" if result.passed(TOLERANCE) else "FAILED"
        logger.info(f"{result.name}: max rel error {result.max_rel_error:.2e} {status}")
    return results
