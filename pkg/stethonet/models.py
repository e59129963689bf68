"""Trained model bundles: checkpoint persistence, frozen features and window scoring."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from stethonet.config import RunConfig
from stethonet.encoders.factory import create_network, encoder_kinds
from stethonet.encoders.network import DualPathNetwork
from stethonet.protohead import LinearHead, PrototypeSet, ProtoHead, predict
from stethonet.store import WindowSet
from stethonet.substrate import (
    Checkpoint,
    CheckpointError,
    checkpoint_load,
    checkpoint_save,
    module_tensors,
    optimizer_tensors,
    restore_module,
)
from stethonet.views import logmel

logger = logging.getLogger(__name__)

STAGES = ("pretrain", "proto", "linear")
SCORE_BATCH = 64

Head = Union[ProtoHead, LinearHead]


@dataclass
class ModelBundle:
    """A network, its downstream head and everything inference needs."""

    config: RunConfig
    network: DualPathNetwork
    stage: str = "pretrain"
    head: Optional[Head] = None
    prototypes: Optional[PrototypeSet] = None
    threshold: float = 0.5
    metadata: dict = field(default_factory=dict)

    def eval(self) -> "ModelBundle":
        self.network.eval()
        if self.head is not None:
            self.head.eval()
        return self


def create_head(config: RunConfig, stage: str, input_dim: int) -> Optional[Head]:
    if stage == "proto":
        return ProtoHead(input_dim, config.head)
    if stage == "linear":
        return LinearHead(input_dim)
    return None


def save_bundle(
    path: Path,
    bundle: ModelBundle,
    optimizer: Optional[torch.optim.Optimizer] = None,
    named_params: Optional[Dict[str, nn.Parameter]] = None,
) -> None:
    """Write a bundle (and optionally Adam moments) as a checkpoint."""
    tensors = bundle.network.tensors()
    if bundle.head is not None:
        tensors.update(module_tensors(bundle.head, "head"))
    if bundle.prototypes is not None:
        tensors.update(bundle.prototypes.tensors())
    if optimizer is not None and named_params is not None:
        tensors.update(optimizer_tensors(optimizer, named_params))

    hyperparameters = {
        "run": bundle.config.to_dict(),
        "wiring": encoder_kinds(bundle.config.ablation),
        "window_samples": bundle.network.tcn.input_shape[0],
    }
    metadata = dict(bundle.metadata)
    metadata.update({"stage": bundle.stage, "threshold": bundle.threshold})
    checkpoint_save(path, tensors, hyperparameters=hyperparameters, metadata=metadata)


def load_bundle(path: Path) -> ModelBundle:
    """
    Rebuild a bundle from a checkpoint.

    Raises:
        CheckpointError: unreadable or inconsistent checkpoint
    """
    checkpoint = checkpoint_load(path)
    return bundle_from_checkpoint(checkpoint)


def bundle_from_checkpoint(checkpoint: Checkpoint) -> ModelBundle:
    try:
        config = RunConfig.from_dict(checkpoint.hyperparameters["run"])
        window_samples = int(checkpoint.hyperparameters["window_samples"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint header lacks the run configuration: {e}") from e

    stage = checkpoint.metadata.get("stage", "pretrain")
    if stage not in STAGES:
        raise CheckpointError(f"unknown checkpoint stage {stage!r}")

    network = create_network(config.encoder, config.ablation, window_samples)
    network.restore(checkpoint)
    head = create_head(config, stage, network.embed_dim)
    if head is not None:
        restore_module(head, checkpoint, "head")
    prototypes = PrototypeSet.from_checkpoint(checkpoint) if stage == "proto" else None

    return ModelBundle(
        config=config,
        network=network,
        stage=stage,
        head=head,
        prototypes=prototypes,
        threshold=float(checkpoint.metadata.get("threshold", 0.5)),
        metadata=dict(checkpoint.metadata),
    ).eval()


# =============================================================================
# Features and scoring
# =============================================================================


def clean_specs(samples: np.ndarray) -> np.ndarray:
    """Un-augmented log-mel spectrogram per window, [N, mels, frames]."""
    if len(samples) == 0:
        return np.zeros((0, 0, 0), dtype=np.float32)
    return np.stack([logmel(s).bins for s in samples]).astype(np.float32)


def _batches(n: int, size: int = SCORE_BATCH):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


@torch.no_grad()
def backbone_features(network: DualPathNetwork, samples: np.ndarray) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Eval-mode (z_1d, z_2d) for every window; z_2d is None on a single path."""
    was_training = network.training
    network.eval()
    specs = clean_specs(samples) if network.dual_path else None
    z1_parts, z2_parts = [], []
    for rows in _batches(len(samples)):
        waves = torch.from_numpy(np.ascontiguousarray(samples[rows], dtype=np.float32))
        spec_batch = torch.from_numpy(specs[rows]) if specs is not None else None
        z1, z2 = network.encode_views(waves, spec_batch)
        z1_parts.append(z1)
        if z2 is not None:
            z2_parts.append(z2)
    network.train(was_training)
    z1_all = torch.cat(z1_parts) if z1_parts else torch.zeros(0, network.embed_dim)
    z2_all = torch.cat(z2_parts) if z2_parts else None
    return z1_all, z2_all


def fuse_features(network: DualPathNetwork, z1: torch.Tensor, z2: Optional[torch.Tensor]) -> torch.Tensor:
    if z2 is None:
        return z1
    return network.fusion(z1, z2)


@torch.no_grad()
def embed_windows(bundle: ModelBundle, samples: np.ndarray) -> torch.Tensor:
    """Eval-mode embeddings: the metric space for a proto head, else the fused features."""
    bundle.eval()
    z1, z2 = backbone_features(bundle.network, samples)
    fused = fuse_features(bundle.network, z1, z2)
    if isinstance(bundle.head, ProtoHead):
        return bundle.head(fused)
    return fused


@torch.no_grad()
def score_windows(bundle: ModelBundle, windows: WindowSet) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predicted labels and positive-class probabilities.

    Raises:
        CheckpointError: a proto bundle without cached prototypes, or a
            pretrain-only bundle
    """
    if bundle.stage == "pretrain" or bundle.head is None:
        raise CheckpointError("a pretrain checkpoint has no classifier head")
    bundle.eval()
    z1, z2 = backbone_features(bundle.network, windows.samples)
    fused = fuse_features(bundle.network, z1, z2)
    if isinstance(bundle.head, ProtoHead):
        if bundle.prototypes is None:
            raise CheckpointError("checkpoint has no cached prototypes")
        return predict(bundle.head(fused), bundle.prototypes)
    probs = bundle.head.positive_probability(fused).cpu().numpy().astype(np.float64)
    return (probs >= 0.5).astype(np.int64), probs
