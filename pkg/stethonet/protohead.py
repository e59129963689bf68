"""Prototypical classifier head, nearest-centroid inference and the linear baseline head."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.config import ProtoHeadConfig
from stethonet.substrate import Checkpoint, CheckpointError


@dataclass
class PrototypeSet:
    """One centroid per class in the metric space, rows ordered by class id."""

    class_ids: List[int]
    centroids: torch.Tensor
    source: str = "episodic"

    def __post_init__(self):
        if len(self.class_ids) != self.centroids.shape[0]:
            raise ValueError(f"{len(self.class_ids)} class ids for {self.centroids.shape[0]} prototypes")
        if not torch.isfinite(self.centroids).all():
            raise ValueError("prototypes must be finite")

    def tensors(self) -> Dict[str, torch.Tensor]:
        return {
            "proto.centroids": self.centroids.detach().to(torch.float32),
            "proto.class_ids": torch.tensor(self.class_ids, dtype=torch.int64),
        }

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "PrototypeSet":
        """
        Raises:
            CheckpointError: no cached prototypes in the checkpoint
        """
        if "proto.centroids" not in checkpoint.tensors or "proto.class_ids" not in checkpoint.tensors:
            raise CheckpointError("checkpoint has no cached prototypes (proto.centroids / proto.class_ids)")
        return cls(
            class_ids=[int(c) for c in checkpoint.tensors["proto.class_ids"]],
            centroids=torch.from_numpy(checkpoint.tensors["proto.centroids"].copy()),
            source="full-train-cache",
        )


class ProtoHead(nn.Module):
    """affine(D -> hidden), ReLU, dropout, affine(hidden -> M)."""

    def __init__(self, input_dim: int, cfg: Optional[ProtoHeadConfig] = None):
        super().__init__()
        cfg = cfg or ProtoHeadConfig()
        self.metric_dim = cfg.metric_dim
        self.net = nn.Sequential(
            nn.Linear(input_dim, cfg.hidden),
            nn.ReLU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.hidden, cfg.metric_dim),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class LinearHead(nn.Module):
    """Single affine map D -> 2 trained with softmax cross-entropy."""

    def __init__(self, input_dim: int):
        super().__init__()
        self.linear = nn.Linear(input_dim, 2)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.linear(z)

    def positive_probability(self, z: torch.Tensor) -> torch.Tensor:
        return F.softmax(self(z), dim=1)[:, 1]


def compute_prototypes(
    vectors: torch.Tensor,
    labels: Sequence[int],
    class_ids: Optional[Sequence[int]] = None,
    source: str = "episodic",
) -> PrototypeSet:
    """
    Class means of the support vectors.

    Raises:
        ValueError: a requested class has no support vector
    """
    labels_t = torch.as_tensor(list(labels), dtype=torch.int64)
    if len(labels_t) != vectors.shape[0]:
        raise ValueError(f"{len(labels_t)} labels for {vectors.shape[0]} support vectors")
    classes = sorted(set(labels_t.tolist())) if class_ids is None else list(class_ids)
    centroids = []
    for c in classes:
        members = labels_t == c
        if not members.any():
            raise ValueError(f"class {c} has no support vectors")
        centroids.append(vectors[members].mean(dim=0))
    return PrototypeSet(class_ids=classes, centroids=torch.stack(centroids), source=source)


def prototype_distances(query: torch.Tensor, protos: PrototypeSet) -> torch.Tensor:
    """Squared Euclidean distances [N, C]."""
    return ((query[:, None, :] - protos.centroids[None, :, :]) ** 2).sum(-1)


def class_probs(query: torch.Tensor, protos: PrototypeSet) -> torch.Tensor:
    """Softmax over negative squared distances. Accepts one query [M] or a batch [N, M]."""
    single = query.dim() == 1
    q = query.unsqueeze(0) if single else query
    probs = F.softmax(-prototype_distances(q, protos), dim=1)
    return probs[0] if single else probs


def episodic_loss(
    support: torch.Tensor,
    support_labels: Sequence[int],
    query: torch.Tensor,
    query_labels: Sequence[int],
) -> torch.Tensor:
    """
    Mean negative log-likelihood of the query labels under prototypes built
    from the support set.

    Raises:
        ValueError: a query class is missing from the support set
    """
    protos = compute_prototypes(support, support_labels)
    index = {c: i for i, c in enumerate(protos.class_ids)}
    missing = sorted(set(query_labels) - set(index))
    if missing:
        raise ValueError(f"query classes {missing} missing from the support set")
    targets = torch.tensor([index[y] for y in query_labels], dtype=torch.int64)
    log_p = F.log_softmax(-prototype_distances(query, protos), dim=1)
    return F.nll_loss(log_p, targets)


def predict(query: torch.Tensor, protos: PrototypeSet, positive_class: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest-centroid labels and the positive-class probability.

    Exact distance ties go to the lower class index.
    """
    with torch.no_grad():
        distances = prototype_distances(query, protos)
        nearest = torch.argmin(distances, dim=1)
        probs = F.softmax(-distances, dim=1)
    ids = np.asarray(protos.class_ids)
    labels = ids[nearest.cpu().numpy()]
    if positive_class in protos.class_ids:
        scores = probs[:, protos.class_ids.index(positive_class)].cpu().numpy()
    else:
        scores = np.zeros(len(labels))
    return labels, scores.astype(np.float64)
