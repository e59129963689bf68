"""Configuration loaded from environment variables and run config files."""

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

load_dotenv()


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


class Config:
    """Process-level settings."""

    SEED = int(os.getenv("STETHONET_SEED", "42"))
    LOG_LEVEL = os.getenv("STETHONET_LOG_LEVEL", "INFO")

    # One intra-op thread keeps float reductions in a fixed order
    NUM_THREADS = int(os.getenv("STETHONET_NUM_THREADS", "1"))

    @classmethod
    def validate(cls) -> list[str]:
        """Validate environment settings. Returns list of problems."""
        problems = []
        if cls.NUM_THREADS < 1:
            problems.append("STETHONET_NUM_THREADS must be >= 1")
        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"STETHONET_LOG_LEVEL unknown: {cls.LOG_LEVEL}")
        return problems


# =============================================================================
# Run configuration
# =============================================================================


@dataclass
class SinkhornConfig:
    epsilon: float = 0.05
    max_iters: int = 200
    marginal_tol: float = 1e-6
    debiased: bool = True


@dataclass
class LossConfig:
    temperature: float = 0.07
    alpha: float = 0.3
    w_1d: float = 1.0 / 3.0
    w_2d: float = 1.0 / 3.0
    w_cross: float = 1.0 / 3.0
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def check(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"loss.temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"loss.alpha must be in [0, 1], got {self.alpha}")
        if self.sinkhorn.epsilon <= 0:
            raise ConfigError(f"sinkhorn.epsilon must be > 0, got {self.sinkhorn.epsilon}")
        if self.sinkhorn.max_iters < 1:
            raise ConfigError(f"sinkhorn.max_iters must be >= 1, got {self.sinkhorn.max_iters}")


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    tcn_init_kernel: int = 16
    tcn_init_stride: int = 4
    tcn_init_pool: int = 2
    tcn_blocks: int = 8
    tcn_kernel: int = 3
    dropout: float = 0.1
    enc2d_widths: Tuple[int, ...] = (16, 32, 64, 128)
    enc2d_blocks_per_stage: int = 2

    @property
    def fusion_hidden(self) -> int:
        return 2 * self.embed_dim

    def check(self) -> None:
        if self.embed_dim < 2:
            raise ConfigError(f"encoder.embed_dim must be >= 2, got {self.embed_dim}")
        if self.tcn_blocks < 1:
            raise ConfigError(f"encoder.tcn_blocks must be >= 1, got {self.tcn_blocks}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"encoder.dropout must be in [0, 1), got {self.dropout}")


@dataclass
class ProtoHeadConfig:
    hidden: int = 64
    metric_dim: int = 32
    dropout: float = 0.1

    def check(self) -> None:
        if self.metric_dim < 2:
            raise ConfigError(f"head.metric_dim must be >= 2, got {self.metric_dim}")


@dataclass
class WindowingConfig:
    window_samples: int = 4000
    min_gap_ms: float = 50.0
    max_gap_ms: float = 1000.0
    max_gap_cycles: float = 1.5
    min_segment_s: float = 0.2
    max_segment_s: float = 3.2
    negative_tile_s: float = 1.0
    continuity_sigmas: float = 6.0
    rms_ratio_low: float = 0.2
    rms_ratio_high: float = 5.0
    max_centroid_diff_hz: float = 150.0
    fallback_hr_bpm: float = 72.0

    def check(self) -> None:
        if self.window_samples <= 0:
            raise ConfigError(f"windowing.window_samples must be > 0, got {self.window_samples}")
        if not 0.0 <= self.min_gap_ms <= self.max_gap_ms:
            raise ConfigError(
                f"windowing gap range must satisfy 0 <= min_gap_ms <= max_gap_ms, got [{self.min_gap_ms}, {self.max_gap_ms}]"
            )
        if self.max_gap_cycles <= 0:
            raise ConfigError(f"windowing.max_gap_cycles must be > 0, got {self.max_gap_cycles}")
        if not 0.0 < self.min_segment_s <= self.max_segment_s:
            raise ConfigError(
                f"windowing segment range must satisfy 0 < min_segment_s <= max_segment_s, got [{self.min_segment_s}, {self.max_segment_s}]"
            )
        if self.negative_tile_s <= 0:
            raise ConfigError(f"windowing.negative_tile_s must be > 0, got {self.negative_tile_s}")
        if self.fallback_hr_bpm <= 0:
            raise ConfigError(f"windowing.fallback_hr_bpm must be > 0, got {self.fallback_hr_bpm}")


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = "cosine"
    n_time_masks: int = 2
    n_freq_masks: int = 2
    max_mask_width: int = 8


@dataclass
class ProtoConfig:
    epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 1e-4
    clip: float = 1.0
    k_shot: int = 5
    per_class: int = 16
    episodes_per_epoch: int = 0  # 0 = derived from training set size


@dataclass
class BaselineConfig:
    epochs: int = 50
    head_lr: float = 1e-4
    backbone_lr: float = 1e-5
    freeze_epochs: int = 10
    schedule: str = "plateau"
    patience: int = 3
    factor: float = 0.5
    batch_size: int = 32
    weight_decay: float = 1e-4
    clip: float = 1.0


@dataclass
class AblationFlags:
    dual_path: bool = True
    enhanced_encoders: bool = True
    hybrid_loss: bool = True
    proto_head: bool = True


# Ablation rows, from the single-path base model up to the full model
ABLATION_PRESETS: Dict[str, AblationFlags] = {
    "single-path-base": AblationFlags(False, False, False, False),
    "dual-path-base": AblationFlags(True, False, False, False),
    "dual-path-enhanced": AblationFlags(True, True, False, False),
    "dual-path-enhanced-loss": AblationFlags(True, True, True, False),
    "full": AblationFlags(True, True, True, True),
}


@dataclass
class RunConfig:
    seed: int = 42
    label_fraction: float = 1.0
    preset: str = "full"
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    proto: ProtoConfig = field(default_factory=ProtoConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: ProtoHeadConfig = field(default_factory=ProtoHeadConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def check(self) -> None:
        """Raise ConfigError on the first invalid field."""
        for name, value in (
            ("pretrain.epochs", self.pretrain.epochs),
            ("proto.epochs", self.proto.epochs),
            ("baseline.epochs", self.baseline.epochs),
            ("pretrain.batch_size", self.pretrain.batch_size),
        ):
            if value <= 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"run.label_fraction must be in (0, 1], got {self.label_fraction}")
        if self.baseline.freeze_epochs < 0:
            raise ConfigError(f"baseline.freeze_epochs must be >= 0, got {self.baseline.freeze_epochs}")
        if not 0.0 < self.baseline.factor < 1.0:
            raise ConfigError(f"baseline.factor must be in (0, 1), got {self.baseline.factor}")
        if self.pretrain.schedule not in ("cosine", "constant"):
            raise ConfigError(f"pretrain.schedule unknown: {self.pretrain.schedule}")
        if self.preset not in ABLATION_PRESETS:
            raise ConfigError(f"run.preset unknown: {self.preset}")
        self.loss.check()
        self.encoder.check()
        self.head.check()
        self.windowing.check()

    def effective_loss(self) -> LossConfig:
        """Loss configuration after applying the ablation flags."""
        loss = dataclasses.replace(self.loss, sinkhorn=dataclasses.replace(self.loss.sinkhorn))
        if not self.ablation.hybrid_loss:
            loss.alpha = 0.0
        if not self.ablation.dual_path:
            loss.w_1d, loss.w_2d, loss.w_cross = 1.0, 0.0, 0.0
        return loss

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Inverse of to_dict, as stored in checkpoint headers and run manifests."""
        try:
            loss = dict(data["loss"])
            loss["sinkhorn"] = SinkhornConfig(**loss["sinkhorn"])
            encoder = dict(data["encoder"])
            encoder["enc2d_widths"] = tuple(encoder["enc2d_widths"])
            return cls(
                seed=data["seed"],
                label_fraction=data["label_fraction"],
                preset=data["preset"],
                pretrain=PretrainConfig(**data["pretrain"]),
                proto=ProtoConfig(**data["proto"]),
                baseline=BaselineConfig(**data["baseline"]),
                loss=LossConfig(**loss),
                encoder=EncoderConfig(**encoder),
                head=ProtoHeadConfig(**data["head"]),
                windowing=WindowingConfig(**data["windowing"]),
                ablation=AblationFlags(**data["ablation"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"stored run configuration is incomplete: {e}") from e


def apply_preset(config: RunConfig, preset: str) -> RunConfig:
    """Set the ablation flags of a named ablation row."""
    if preset not in ABLATION_PRESETS:
        raise ConfigError(f"run.preset unknown: {preset} (choose from {', '.join(ABLATION_PRESETS)})")
    config.preset = preset
    config.ablation = dataclasses.replace(ABLATION_PRESETS[preset])
    return config


# Sections map onto RunConfig fields; [sinkhorn] nests under loss
_SECTIONS = {
    "pretrain": lambda c: c.pretrain,
    "proto": lambda c: c.proto,
    "baseline": lambda c: c.baseline,
    "loss": lambda c: c.loss,
    "sinkhorn": lambda c: c.loss.sinkhorn,
    "encoder": lambda c: c.encoder,
    "head": lambda c: c.head,
    "windowing": lambda c: c.windowing,
    "ablation": lambda c: c.ablation,
    "run": lambda c: c,
}


def _coerce(section: str, key: str, raw: str, current: Any) -> Any:
    """Parse a raw string to the type of the current value."""
    try:
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(part) for part in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from None


def load_run_config(path: Optional[Path] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional sectioned key = value file,
    and an optional seed override.

    Raises:
        ConfigError: unknown section/key or unparsable value
    """
    config = RunConfig(seed=Config.SEED)

    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as handle:
                parser.read_file(handle)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config file {path}: {e}") from e

        # The preset goes first so explicit [ablation] keys can override it
        preset = parser.get("ablation", "preset", fallback=None) or parser.get("run", "preset", fallback=None)
        if preset:
            apply_preset(config, preset.strip())

        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section: [{section}]")
            target = _SECTIONS[section](config)
            for key, raw in parser.items(section):
                if key == "preset":
                    continue
                if not hasattr(target, key) or key in ("pretrain", "proto", "baseline", "loss", "encoder", "head", "windowing", "ablation", "sinkhorn"):
                    raise ConfigError(f"unknown config field: {section}.{key}")
                setattr(target, key, _coerce(section, key, raw, getattr(target, key)))

    if seed is not None:
        config.seed = seed

    config.check()
    return config
