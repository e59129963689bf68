"""Fusion of the waveform and spectrogram embeddings."""

import torch
import torch.nn as nn

from stethonet.encoders import EmbeddingBatch


class FusionLayer(nn.Module):
    """MLP over [z_1d || z_2d]: affine 2D->2D, layer norm, ReLU, dropout, affine 2D->D."""

    def __init__(self, embed_dim: int, dropout: float = 0.1):
        super().__init__()
        self.embed_dim = embed_dim
        self.mlp = nn.Sequential(
            nn.Linear(2 * embed_dim, 2 * embed_dim),
            nn.LayerNorm(2 * embed_dim, eps=1e-5),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(2 * embed_dim, embed_dim),
        )

    def forward(self, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
        if z1.shape != z2.shape or z1.shape[1] != self.embed_dim:
            raise ValueError(f"fusion expects two [N x {self.embed_dim}] inputs, got {tuple(z1.shape)} and {tuple(z2.shape)}")
        return self.mlp(torch.cat([z1, z2], dim=1))

    def fuse(self, z1: EmbeddingBatch, z2: EmbeddingBatch) -> EmbeddingBatch:
        """
        Raises:
            ValueError: the batches are not row-aligned on the same ids
        """
        if z1.ids != z2.ids:
            raise ValueError("fusion inputs have mismatched ids")
        return EmbeddingBatch(ids=list(z1.ids), vectors=self(z1.vectors, z2.vectors))
