"""Dilated temporal convolutional encoder for raw waveforms."""

from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.config import EncoderConfig
from stethonet.encoders import Encoder


class DilatedBlock(nn.Module):
    """Pre-activation residual block: h + dropout(conv_d(ReLU(BN(h))))."""

    def __init__(self, channels: int, kernel: int, dilation: int, dropout: float):
        super().__init__()
        self.dilation = dilation
        self.kernel = kernel
        self.norm = nn.BatchNorm1d(channels, momentum=0.1, eps=1e-5)
        # Symmetric padding keeps the length; the encoder is not causal
        self.conv = nn.Conv1d(channels, channels, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2)
        self.dropout = nn.Dropout(dropout)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return h + self.dropout(self.conv(F.relu(self.norm(h))))


class TCNEncoder(Encoder):
    """
    Stem (strided conv, layer norm over channels, ReLU, average pool), then
    `blocks` dilated residual blocks with dilation 2^l, then adaptive average
    pooling. The channel width equals the embedding dimension.
    """

    def __init__(self, cfg: EncoderConfig, window_samples: int = 4000):
        super().__init__(cfg.embed_dim)
        self.window_samples = window_samples
        d = cfg.embed_dim
        self.stem_conv = nn.Conv1d(1, d, cfg.tcn_init_kernel, stride=cfg.tcn_init_stride)
        self.stem_norm = nn.LayerNorm(d, eps=1e-5)
        self.stem_pool = nn.AvgPool1d(cfg.tcn_init_pool)
        self.blocks = nn.ModuleList(
            DilatedBlock(d, cfg.tcn_kernel, 2 ** level, cfg.dropout) for level in range(cfg.tcn_blocks)
        )
        self.pool = nn.AdaptiveAvgPool1d(1)

        stem_len = (window_samples - cfg.tcn_init_kernel) // cfg.tcn_init_stride + 1
        if stem_len // cfg.tcn_init_pool < 1:
            raise ValueError(f"window of {window_samples} samples is too short for the TCN stem")

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (self.window_samples,)

    @property
    def receptive_field(self) -> int:
        """Span of the dilated stack in post-downsample samples: 1 + sum((k - 1) d_l)."""
        return 1 + sum((block.kernel - 1) * block.dilation for block in self.blocks)

    def stem(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem_conv(x.unsqueeze(1))
        h = self.stem_norm(h.transpose(1, 2)).transpose(1, 2)
        return self.stem_pool(F.relu(h))

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        return self.pool(h).squeeze(-1)
