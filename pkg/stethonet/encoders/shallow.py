"""Standard convolutional encoders for the non-enhanced ablation rows."""

from typing import Tuple

import torch
import torch.nn as nn

from stethonet.config import EncoderConfig
from stethonet.encoders import Encoder
from stethonet.views import N_FRAMES, N_MELS

SHALLOW_WIDTHS = (16, 32, 64)


class ShallowConv1d(Encoder):
    """Three strided conv/BN/ReLU/max-pool stages, adaptive pool, linear to D."""

    def __init__(self, cfg: EncoderConfig, window_samples: int = 4000, widths: Tuple[int, ...] = SHALLOW_WIDTHS):
        super().__init__(cfg.embed_dim)
        self.window_samples = window_samples
        layers = []
        in_channels = 1
        for width in widths:
            layers += [
                nn.Conv1d(in_channels, width, 9, stride=2, padding=4),
                nn.BatchNorm1d(width),
                nn.ReLU(),
                nn.MaxPool1d(2),
            ]
            in_channels = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool1d(1)
        self.out = nn.Linear(in_channels, cfg.embed_dim)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (self.window_samples,)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.pool(self.features(x.unsqueeze(1))).flatten(1))


class ShallowConv2d(Encoder):
    """Three conv/BN/ReLU/max-pool stages, global pool, linear to D."""

    def __init__(self, cfg: EncoderConfig, n_mels: int = N_MELS, n_frames: int = N_FRAMES, widths: Tuple[int, ...] = SHALLOW_WIDTHS):
        super().__init__(cfg.embed_dim)
        self.n_mels = n_mels
        self.n_frames = n_frames
        layers = []
        in_channels = 1
        for width in widths:
            layers += [
                nn.Conv2d(in_channels, width, 3, padding=1),
                nn.BatchNorm2d(width),
                nn.ReLU(),
                nn.MaxPool2d(2, ceil_mode=True),
            ]
            in_channels = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.out = nn.Linear(in_channels, cfg.embed_dim)

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (self.n_mels, self.n_frames)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.pool(self.features(x.unsqueeze(1))).flatten(1))
