"""Stochastic views for contrastive learning: waveform augmentations and log-mel spectrograms."""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Tuple

import librosa
import numpy as np
from scipy import signal

from stethonet.corpus import SAMPLE_RATE_HZ, zscore

WINDOW_SAMPLES = 4000

# Log-mel parameters for 4 kHz cardiac audio
N_FFT = 256
HOP = 64
N_MELS = 64
F_LO = 25.0
F_HI = 2000.0
LOG_FLOOR = 1e-6
N_FRAMES = (WINDOW_SAMPLES - N_FFT) // HOP + 1

MASK_VALUE = 0.0

# Parameter ranges of the 1D catalogue; bandpass has (low cut, high cut) ranges
OP_RANGES: Dict[str, Tuple[Tuple[float, float], ...]] = {
    "gauss_noise": ((0.001, 0.01),),
    "time_shift": ((-100.0, 100.0),),
    "pitch_shift": ((-2.0, 2.0),),
    "amp_scale": ((0.8, 1.2),),
    "snr_noise": ((20.0, 30.0),),
    "bandpass": ((15.0, 25.0), (450.0, 550.0)),
}
OP_ORDER = tuple(OP_RANGES)


@dataclass(frozen=True)
class AugOp:
    name: str
    params: Tuple[float, ...]


@dataclass(frozen=True)
class AugmentationRecipe:
    ops: Tuple[AugOp, ...] = ()
    seed: int = 0

    def validate(self) -> None:
        for op in self.ops:
            if op.name not in OP_RANGES:
                raise ValueError(f"unknown augmentation {op.name!r}")
            ranges = OP_RANGES[op.name]
            if len(op.params) != len(ranges):
                raise ValueError(f"{op.name} expects {len(ranges)} parameter(s), got {len(op.params)}")
            for value, (lo, hi) in zip(op.params, ranges):
                if not lo <= value <= hi:
                    raise ValueError(f"{op.name} parameter {value} outside [{lo}, {hi}]")

    def to_json(self) -> dict:
        return {"seed": self.seed, "ops": [[op.name, list(op.params)] for op in self.ops]}

    @classmethod
    def from_json(cls, data: dict) -> "AugmentationRecipe":
        return cls(
            ops=tuple(AugOp(name, tuple(float(p) for p in params)) for name, params in data["ops"]),
            seed=int(data["seed"]),
        )


@dataclass
class MelSpec:
    bins: np.ndarray
    params: Dict[str, float] = field(default_factory=lambda: {
        "n_fft": N_FFT, "hop": HOP, "n_mels": N_MELS, "f_lo": F_LO, "f_hi": F_HI, "log_floor": LOG_FLOOR,
    })

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bins.shape


def sample_recipe(rng: np.random.Generator, p: float = 0.5) -> AugmentationRecipe:
    """
    Random composition of the 1D catalogue: each op independently with
    probability p, at least one op, parameters uniform in their ranges.
    """
    chosen = [name for name in OP_ORDER if rng.random() < p]
    if not chosen:
        chosen = [OP_ORDER[int(rng.integers(len(OP_ORDER)))]]
    ops = tuple(
        AugOp(name, tuple(float(rng.uniform(lo, hi)) for lo, hi in OP_RANGES[name]))
        for name in chosen
    )
    return AugmentationRecipe(ops=ops, seed=int(rng.integers(2**31 - 1)))


# =============================================================================
# 1D augmentations
# =============================================================================


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Center-crop or zero-pad to n samples."""
    if len(x) >= n:
        start = (len(x) - n) // 2
        return x[start:start + n]
    pad = n - len(x)
    return np.pad(x, (pad // 2, pad - pad // 2))


def pitch_shift(x: np.ndarray, semitones: float) -> np.ndarray:
    """Resample by 2^(semitones/12) then crop/pad back; also stretches time."""
    if semitones == 0:
        return x.copy()
    ratio = 2.0 ** (semitones / 12.0)
    new_len = max(2, int(round(len(x) / ratio)))
    return _fit_length(signal.resample(x, new_len), len(x))


def add_noise_at_snr(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """White noise scaled so the measured SNR equals snr_db."""
    signal_power = np.mean(x ** 2)
    if signal_power == 0:
        return x.copy()
    noise = rng.standard_normal(len(x))
    noise *= np.sqrt(signal_power / 10 ** (snr_db / 10.0) / np.mean(noise ** 2))
    return x + noise


def bandpass(x: np.ndarray, lo_hz: float, hi_hz: float) -> np.ndarray:
    sos = signal.butter(4, [lo_hz, hi_hz], btype="bandpass", fs=SAMPLE_RATE_HZ, output="sos")
    return signal.sosfiltfilt(sos, x)


def augment_wave(samples: np.ndarray, recipe: AugmentationRecipe) -> np.ndarray:
    """
    Apply a recipe's ops in order. Time shifts are circular; the output keeps
    the input length.

    Raises:
        ValueError: out-of-range parameter
    """
    recipe.validate()
    x = np.asarray(samples, dtype=np.float64).copy()
    rng = np.random.default_rng(recipe.seed)

    for op in recipe.ops:
        if op.name == "gauss_noise":
            x = x + rng.normal(0.0, op.params[0], size=len(x))
        elif op.name == "time_shift":
            x = np.roll(x, int(round(op.params[0] * SAMPLE_RATE_HZ / 1000.0)))
        elif op.name == "pitch_shift":
            x = pitch_shift(x, op.params[0])
        elif op.name == "amp_scale":
            x = x * op.params[0]
        elif op.name == "snr_noise":
            x = add_noise_at_snr(x, op.params[0], rng)
        elif op.name == "bandpass":
            x = bandpass(x, op.params[0], op.params[1])
    return x


# =============================================================================
# 2D views
# =============================================================================


@lru_cache(maxsize=1)
def mel_basis() -> np.ndarray:
    return librosa.filters.mel(sr=SAMPLE_RATE_HZ, n_fft=N_FFT, n_mels=N_MELS, fmin=F_LO, fmax=F_HI)


def mel_centers() -> np.ndarray:
    """Center frequency of each mel filter in Hz."""
    return librosa.mel_frequencies(n_mels=N_MELS + 2, fmin=F_LO, fmax=F_HI)[1:-1]


def logmel(samples: np.ndarray) -> MelSpec:
    """STFT power -> 64-filter mel bank -> log(power + 1e-6) -> per-spectrogram z-score."""
    x = np.asarray(samples, dtype=np.float64)
    stft = librosa.stft(x, n_fft=N_FFT, hop_length=HOP, win_length=N_FFT, window="hann", center=False)
    power = np.abs(stft) ** 2
    log_mel = np.log(mel_basis() @ power + LOG_FLOOR)
    return MelSpec(bins=zscore(log_mel.ravel()).reshape(log_mel.shape))


def mask_time(bins: np.ndarray, start: int, width: int) -> np.ndarray:
    out = bins.copy()
    out[:, start:start + width] = MASK_VALUE
    return out


def mask_freq(bins: np.ndarray, start: int, width: int) -> np.ndarray:
    out = bins.copy()
    out[start:start + width, :] = MASK_VALUE
    return out


def augment_spec(spec: MelSpec, n_time_masks: int, n_freq_masks: int, max_width: int, seed: int) -> MelSpec:
    """
    Zero contiguous frame ranges and mel-bin ranges, widths in [1, max_width].

    Raises:
        ValueError: max_width < 1 or larger than a masked axis
    """
    n_mels, n_frames = spec.bins.shape
    if max_width < 1:
        raise ValueError(f"max_width must be >= 1, got {max_width}")
    if n_time_masks > 0 and max_width > n_frames:
        raise ValueError(f"max_width {max_width} exceeds the time axis ({n_frames} frames)")
    if n_freq_masks > 0 and max_width > n_mels:
        raise ValueError(f"max_width {max_width} exceeds the frequency axis ({n_mels} bins)")

    rng = np.random.default_rng(seed)
    bins = spec.bins.copy()
    for _ in range(n_time_masks):
        width = int(rng.integers(1, max_width + 1))
        bins = mask_time(bins, int(rng.integers(0, n_frames - width + 1)), width)
    for _ in range(n_freq_masks):
        width = int(rng.integers(1, max_width + 1))
        bins = mask_freq(bins, int(rng.integers(0, n_mels - width + 1)), width)
    return MelSpec(bins=bins, params=dict(spec.params))


@dataclass
class ViewPair:
    wave_a: np.ndarray
    wave_b: np.ndarray
    spec_a: np.ndarray
    spec_b: np.ndarray


def make_views(
    samples: np.ndarray,
    rng: np.random.Generator,
    n_time_masks: int = 2,
    n_freq_masks: int = 2,
    max_width: int = 8,
) -> ViewPair:
    """Two views per window: 1D recipe, then log-mel of the augmented wave, then 2D masks."""
    waves: List[np.ndarray] = []
    specs: List[np.ndarray] = []
    for _ in range(2):
        wave = augment_wave(samples, sample_recipe(rng))
        spec = augment_spec(logmel(wave), n_time_masks, n_freq_masks, max_width, int(rng.integers(2**31 - 1)))
        waves.append(wave)
        specs.append(spec.bins)
    return ViewPair(wave_a=waves[0], wave_b=waves[1], spec_a=specs[0], spec_b=specs[1])
