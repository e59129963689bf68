"""Factory for building encoders and the feature extractor from configuration."""

from typing import Literal

from stethonet.config import AblationFlags, EncoderConfig
from stethonet.encoders import Encoder
from stethonet.encoders.fusion import FusionLayer
from stethonet.encoders.network import DualPathNetwork
from stethonet.encoders.resnet2d import ResNet2dEncoder
from stethonet.encoders.shallow import ShallowConv1d, ShallowConv2d
from stethonet.encoders.tcn import TCNEncoder

Encoder1dType = Literal["tcn", "shallow"]
Encoder2dType = Literal["resnet", "shallow"]


def create_encoder_1d(kind: Encoder1dType, cfg: EncoderConfig, window_samples: int = 4000) -> Encoder:
    """
    Create a waveform encoder.

    Raises:
        ValueError: unknown encoder type
    """
    if kind == "tcn":
        return TCNEncoder(cfg, window_samples=window_samples)
    elif kind == "shallow":
        return ShallowConv1d(cfg, window_samples=window_samples)
    else:
        raise ValueError(f"Unknown 1D encoder: {kind}. Use 'tcn' or 'shallow'.")


def create_encoder_2d(kind: Encoder2dType, cfg: EncoderConfig) -> Encoder:
    """
    Create a spectrogram encoder.

    Raises:
        ValueError: unknown encoder type
    """
    if kind == "resnet":
        return ResNet2dEncoder(cfg)
    elif kind == "shallow":
        return ShallowConv2d(cfg)
    else:
        raise ValueError(f"Unknown 2D encoder: {kind}. Use 'resnet' or 'shallow'.")


def encoder_kinds(flags: AblationFlags) -> dict:
    """Module wiring of an ablation row, as recorded in checkpoints and manifests."""
    enhanced = flags.enhanced_encoders
    return {
        "encoder_1d": "tcn" if enhanced else "shallow",
        "encoder_2d": ("resnet" if enhanced else "shallow") if flags.dual_path else None,
        "fusion": flags.dual_path,
        "classifier": "proto" if flags.proto_head else "linear",
    }


def create_network(cfg: EncoderConfig, flags: AblationFlags, window_samples: int = 4000) -> DualPathNetwork:
    """Build the feature extractor an ablation row calls for."""
    kinds = encoder_kinds(flags)
    encoder_1d = create_encoder_1d(kinds["encoder_1d"], cfg, window_samples)
    if not flags.dual_path:
        return DualPathNetwork(encoder_1d)
    return DualPathNetwork(
        encoder_1d,
        create_encoder_2d(kinds["encoder_2d"], cfg),
        FusionLayer(cfg.embed_dim, cfg.dropout),
    )
