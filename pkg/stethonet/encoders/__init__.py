"""Encoder interface and embedding types."""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.substrate import check_shapes


@dataclass
class EmbeddingBatch:
    """Row-aligned embeddings with the ids of the samples they came from."""

    ids: List[str]
    vectors: torch.Tensor = field(repr=False)
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def normalize(self) -> "EmbeddingBatch":
        """Unit L2 norm per row."""
        return EmbeddingBatch(ids=list(self.ids), vectors=F.normalize(self.vectors, dim=1), normalized=True)


class Encoder(nn.Module, ABC):
    """Abstract base class for the waveform and spectrogram encoders."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim

    @property
    @abstractmethod
    def input_shape(self) -> Tuple[int, ...]:
        """Per-sample input shape, without the batch dimension."""
        pass

    @abstractmethod
    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Map a validated batch [N, *input_shape] to [N, embed_dim]."""
        pass

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_shapes(type(self).__name__, (None, *self.input_shape), tuple(x.shape))
        return self.embed(x)

    def encode(self, x: torch.Tensor, ids: Sequence[str]) -> EmbeddingBatch:
        """
        Encode a batch and attach sample ids.

        Raises:
            ValueError: wrong input shape, or ids not matching the batch size
        """
        if len(ids) != x.shape[0]:
            raise ValueError(f"{len(ids)} ids for a batch of {x.shape[0]}")
        return EmbeddingBatch(ids=list(ids), vectors=self(x))
