"""Residual spectrogram encoder with a projection head."""

from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from stethonet.config import EncoderConfig
from stethonet.encoders import Encoder
from stethonet.views import N_FRAMES, N_MELS


class ResidualBlock(nn.Module):
    """ReLU(G(x) + shortcut(x)) with G = conv-BN-ReLU-conv-BN."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn2(self.conv2(F.relu(self.bn1(self.conv1(x)))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.residual(x) + self.shortcut(x))


class ProjectionHead(nn.Module):
    """W_p ReLU(BN(W_e h)) with dropout before the output layer."""

    def __init__(self, in_features: int, hidden: int, out_features: int, dropout: float):
        super().__init__()
        self.expand = nn.Linear(in_features, hidden)
        self.norm = nn.BatchNorm1d(hidden)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(hidden, out_features)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.out(self.dropout(F.relu(self.norm(self.expand(h)))))


class ResNet2dEncoder(Encoder):
    """Single-channel stem, residual stages that halve resolution on entry, global pool, projection head."""

    def __init__(self, cfg: EncoderConfig, n_mels: int = N_MELS, n_frames: int = N_FRAMES):
        super().__init__(cfg.embed_dim)
        self.n_mels = n_mels
        self.n_frames = n_frames
        widths = cfg.enc2d_widths
        self.stem = nn.Sequential(
            nn.Conv2d(1, widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(),
        )
        stages = []
        in_channels = widths[0]
        for width in widths:
            blocks = [ResidualBlock(in_channels, width, stride=2)]
            blocks += [ResidualBlock(width, width) for _ in range(cfg.enc2d_blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            in_channels = width
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = ProjectionHead(in_channels, cfg.fusion_hidden, cfg.embed_dim, cfg.dropout)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (self.n_mels, self.n_frames)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stages(self.stem(x.unsqueeze(1)))
        return self.head(self.pool(h).flatten(1))
