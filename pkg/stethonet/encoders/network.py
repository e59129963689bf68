"""The dual-path feature extractor: 1D encoder, optional 2D encoder and fusion."""

from typing import Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn

from stethonet.encoders import Encoder
from stethonet.encoders.fusion import FusionLayer
from stethonet.substrate import Checkpoint, module_tensors, restore_module


class DualPathNetwork(nn.Module):
    """
    Parameters live under `tcn.*`, `enc2d.*` and `fusion.*` whatever the
    encoder variant. Without a 2D branch the 1D embedding is the fused one.
    """

    def __init__(self, encoder_1d: Encoder, encoder_2d: Optional[Encoder] = None, fusion: Optional[FusionLayer] = None):
        super().__init__()
        if (encoder_2d is None) != (fusion is None):
            raise ValueError("the 2D encoder and the fusion layer come together")
        self.tcn = encoder_1d
        self.enc2d = encoder_2d
        self.fusion = fusion
        self.backbone_frozen = False

    @property
    def dual_path(self) -> bool:
        return self.enc2d is not None

    @property
    def embed_dim(self) -> int:
        return self.tcn.embed_dim

    def backbone(self) -> List[Encoder]:
        return [m for m in (self.tcn, self.enc2d) if m is not None]

    def backbone_parameters(self) -> Iterator[nn.Parameter]:
        for module in self.backbone():
            yield from module.parameters()

    def head_parameters(self) -> Iterator[nn.Parameter]:
        if self.fusion is not None:
            yield from self.fusion.parameters()

    def freeze_backbone(self, frozen: bool = True) -> None:
        """Stop gradients and running-statistic updates in both encoders."""
        self.backbone_frozen = frozen
        for p in self.backbone_parameters():
            p.requires_grad_(not frozen)
        if frozen:
            for module in self.backbone():
                module.eval()

    def train(self, mode: bool = True) -> "DualPathNetwork":
        super().train(mode)
        if self.backbone_frozen:
            for module in self.backbone():
                module.eval()
        return self

    def encode_views(self, waves: torch.Tensor, specs: Optional[torch.Tensor]) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Raw per-path embeddings (z_1d, z_2d); z_2d is None on a single path."""
        z1 = self.tcn(waves)
        if not self.dual_path:
            return z1, None
        if specs is None:
            raise ValueError("dual-path network needs spectrogram inputs")
        return z1, self.enc2d(specs)

    def forward(self, waves: torch.Tensor, specs: Optional[torch.Tensor] = None) -> torch.Tensor:
        z1, z2 = self.encode_views(waves, specs)
        if z2 is None:
            return z1
        return self.fusion(z1, z2)

    def tensors(self) -> Dict[str, torch.Tensor]:
        out = module_tensors(self.tcn, "tcn")
        if self.dual_path:
            out.update(module_tensors(self.enc2d, "enc2d"))
            out.update(module_tensors(self.fusion, "fusion"))
        return out

    def restore(self, checkpoint: Checkpoint, include_fusion: bool = True) -> None:
        """
        Load encoder (and optionally fusion) state from a checkpoint.

        Raises:
            CheckpointError: missing tensor or shape mismatch
        """
        restore_module(self.tcn, checkpoint, "tcn")
        if self.dual_path:
            restore_module(self.enc2d, checkpoint, "enc2d")
            if include_fusion:
                restore_module(self.fusion, checkpoint, "fusion")
