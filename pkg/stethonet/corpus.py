"""Manifest and waveform ingestion plus the synthetic phonocardiogram generator."""

import json
import logging
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import soundfile as sf
from scipy import signal

logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 4000
SCHEMA_VERSION = 1
SITES = ("AV", "MV", "PV", "TV", "OTHER")

# Kaiser-windowed sinc, 32 taps per polyphase branch
RESAMPLE_KAISER_BETA = 8.0
RESAMPLE_HALF_TAPS = 16


class ManifestError(ValueError):
    """Invalid manifest content."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AudioError(ValueError):
    """Audio file that cannot be turned into a canonical recording."""


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    patient_id: str
    path: str
    label: int
    site: str = "OTHER"
    sample_rate_hz: int = SAMPLE_RATE_HZ
    murmur_intervals: Tuple[Tuple[float, float], ...] = ()

    def to_json(self) -> dict:
        data = asdict(self)
        data["murmur_intervals"] = [list(iv) for iv in self.murmur_intervals]
        return data


@dataclass
class Manifest:
    entries: List[RecordingMeta]
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def patients(self) -> List[str]:
        return sorted({e.patient_id for e in self.entries})

    def patient_labels(self) -> Dict[str, int]:
        """A patient is positive if any of their recordings is positive."""
        labels: Dict[str, int] = {}
        for e in self.entries:
            labels[e.patient_id] = max(labels.get(e.patient_id, 0), e.label)
        return labels


@dataclass
class Recording:
    meta: RecordingMeta
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int = 64
    recordings_per_patient: int = 2
    duration_s: float = 12.0
    heart_rate_bpm_range: Tuple[float, float] = (60.0, 100.0)
    murmur_prevalence: float = 0.35
    murmur_band_hz: Tuple[float, float] = (120.0, 400.0)
    murmur_snr_db: float = 0.0
    background_snr_db: float = 20.0
    seed: int = 42

    def validate(self) -> None:
        if self.n_patients < 1 or self.recordings_per_patient < 1:
            raise ValueError("n_patients and recordings_per_patient must be >= 1")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        lo, hi = self.heart_rate_bpm_range
        if not 0 < lo <= hi:
            raise ValueError(f"heart_rate_bpm_range must be ordered and positive, got {self.heart_rate_bpm_range}")
        lo, hi = self.murmur_band_hz
        if not 0 < lo < hi < SAMPLE_RATE_HZ / 2:
            raise ValueError(f"murmur_band_hz must be ordered and below Nyquist, got {self.murmur_band_hz}")
        if not 0.0 <= self.murmur_prevalence <= 1.0:
            raise ValueError(f"murmur_prevalence must be in [0, 1], got {self.murmur_prevalence}")


# =============================================================================
# Manifest I/O
# =============================================================================


def _parse_entry(obj: dict, line_no: int) -> RecordingMeta:
    missing = [k for k in ("recording_id", "patient_id", "path", "label") if k not in obj]
    if missing:
        raise ManifestError(f"missing field(s): {', '.join(missing)}", line_no)

    label = obj["label"]
    if label not in (0, 1) or isinstance(label, bool):
        raise ManifestError(f"unknown label {label!r} (expected 0 or 1)", line_no)

    if not str(obj["patient_id"]).strip():
        raise ManifestError("empty patient_id", line_no)

    site = obj.get("site", "OTHER")
    if site not in SITES:
        raise ManifestError(f"unknown site {site!r}", line_no)

    rate = obj.get("sample_rate_hz", SAMPLE_RATE_HZ)
    if not isinstance(rate, int) or rate <= 0:
        raise ManifestError(f"sample_rate_hz must be a positive integer, got {rate!r}", line_no)

    intervals = []
    for raw in obj.get("murmur_intervals", []) or []:
        try:
            start, end = float(raw[0]), float(raw[1])
        except (TypeError, ValueError, IndexError):
            raise ManifestError(f"malformed murmur interval {raw!r}", line_no) from None
        if start < 0 or end <= start:
            raise ManifestError(f"interval order violated: start_s={start} end_s={end}", line_no)
        intervals.append((start, end))

    return RecordingMeta(
        recording_id=str(obj["recording_id"]),
        patient_id=str(obj["patient_id"]),
        path=str(obj["path"]),
        label=int(label),
        site=site,
        sample_rate_hz=rate,
        murmur_intervals=tuple(intervals),
    )


def load_manifest(path: Path) -> Manifest:
    """
    Parse a JSONL manifest, one RecordingMeta object per line.

    An optional first line holding only {"schema_version": N} sets the version.

    Raises:
        ManifestError: malformed line, duplicate recording_id, unknown label
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")

    entries: List[RecordingMeta] = []
    seen = set()
    schema_version = SCHEMA_VERSION

    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed JSON ({e.msg})", line_no) from None
            if not isinstance(obj, dict):
                raise ManifestError("expected a JSON object", line_no)

            if set(obj) == {"schema_version"}:
                schema_version = int(obj["schema_version"])
                if schema_version != SCHEMA_VERSION:
                    raise ManifestError(f"unsupported schema_version {schema_version}", line_no)
                continue

            meta = _parse_entry(obj, line_no)
            if meta.recording_id in seen:
                raise ManifestError(f"duplicate recording_id {meta.recording_id!r}", line_no)
            seen.add(meta.recording_id)
            entries.append(meta)

    logger.info(f"Loaded manifest {path}: {len(entries)} recordings")
    return Manifest(entries=entries, schema_version=schema_version)


def save_manifest(manifest: Manifest, path: Path) -> None:
    """Write a manifest as JSONL with a schema header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"schema_version": manifest.schema_version}) + "\n")
        for meta in manifest.entries:
            handle.write(json.dumps(meta.to_json()) + "\n")


# =============================================================================
# Waveforms
# =============================================================================


def resample(samples: np.ndarray, source_rate: int, target_rate: int = SAMPLE_RATE_HZ) -> np.ndarray:
    """Polyphase windowed-sinc resampling (Kaiser beta 8, 32 taps per branch)."""
    if source_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)

    ratio = Fraction(target_rate, source_rate)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = signal.firwin(
        2 * RESAMPLE_HALF_TAPS * max_rate + 1,
        1.0 / max_rate,
        window=("kaiser", RESAMPLE_KAISER_BETA),
    )
    return signal.resample_poly(np.asarray(samples, dtype=np.float64), up, down, window=taps)


def read_recording(meta: RecordingMeta, base_dir: Optional[Path] = None) -> Recording:
    """
    Read a mono PCM16 or float32 WAV and canonicalize it to 4000 Hz.

    Raises:
        AudioError: unreadable, multichannel, unsupported encoding or empty audio
    """
    path = Path(meta.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path

    try:
        info = sf.info(str(path))
        data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise AudioError(f"{meta.recording_id}: cannot read {path}: {e}") from e

    if info.subtype not in ("PCM_16", "FLOAT"):
        raise AudioError(f"{meta.recording_id}: unsupported encoding {info.subtype}")
    if data.shape[1] != 1:
        raise AudioError(f"{meta.recording_id}: expected mono audio, got {data.shape[1]} channels")
    if data.shape[0] == 0:
        raise AudioError(f"{meta.recording_id}: zero-length audio")

    samples = data[:, 0]
    if rate != meta.sample_rate_hz:
        logger.warning(f"{meta.recording_id}: manifest says {meta.sample_rate_hz} Hz, file says {rate} Hz; using file rate")

    samples = resample(samples, rate)
    if not np.all(np.isfinite(samples)):
        raise AudioError(f"{meta.recording_id}: non-finite samples")

    return Recording(meta=meta, samples=samples)


def write_recording(recording: Recording, path: Path) -> None:
    """Write a canonical recording as a float32 mono WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), recording.samples.astype(np.float32), recording.sample_rate_hz, subtype="FLOAT")


def zscore(samples: np.ndarray) -> np.ndarray:
    """
    Standardize to zero mean and unit population variance.

    Constant inputs (sigma < 1e-8) map to all zeros.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError(f"zscore needs at least 2 samples, got {x.size}")
    mean = x.mean()
    sigma = x.std()
    if sigma < 1e-8:
        return np.zeros_like(x)
    return (x - mean) / sigma


# =============================================================================
# Synthetic corpus
# =============================================================================


def _burst(freq_hz: float, duration_s: float) -> np.ndarray:
    """Gaussian-windowed sinusoid."""
    n = int(round(duration_s * SAMPLE_RATE_HZ))
    t = np.arange(n) / SAMPLE_RATE_HZ
    window = signal.windows.gaussian(n, std=n / 6.0)
    return window * np.sin(2 * np.pi * freq_hz * t)


S1_BURST = _burst(40.0, 0.080)
S2_BURST = _burst(60.0, 0.060)
S2_PHASE = 0.35


def _add_at(target: np.ndarray, burst: np.ndarray, start: int) -> None:
    end = min(len(target), start + len(burst))
    if start < end:
        target[start:end] += burst[: end - start]


def _synth_recording(spec: SynthSpec, hr_bpm: float, positive: bool, rng: np.random.Generator) -> Tuple[np.ndarray, List[Tuple[float, float]]]:
    n = int(round(spec.duration_s * SAMPLE_RATE_HZ))
    heart = np.zeros(n)
    murmur_mask = np.zeros(n, dtype=bool)
    intervals: List[Tuple[float, float]] = []

    cycle_s = 60.0 / hr_bpm
    t = rng.uniform(0.0, cycle_s)
    while t < spec.duration_s:
        # Small beat-to-beat variability
        period = cycle_s * rng.uniform(0.98, 1.02)
        s1 = int(round(t * SAMPLE_RATE_HZ))
        s2 = int(round((t + S2_PHASE * period) * SAMPLE_RATE_HZ))
        _add_at(heart, S1_BURST, s1)
        _add_at(heart, S2_BURST, s2)

        systole_end = t + S2_PHASE * period + len(S2_BURST) / SAMPLE_RATE_HZ
        if positive and systole_end <= spec.duration_s:
            murmur_mask[s1 + len(S1_BURST): s2] = True
            intervals.append((round(t, 6), round(systole_end, 6)))
        t += period

    heart_power = np.mean(heart ** 2)
    x = heart.copy()

    if positive and murmur_mask.any():
        lo, hi = spec.murmur_band_hz
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=SAMPLE_RATE_HZ, output="sos")
        noise = signal.sosfilt(sos, rng.standard_normal(n))
        active = noise[murmur_mask]
        target = heart_power * 10 ** (spec.murmur_snr_db / 10.0)
        x[murmur_mask] += active * np.sqrt(target / np.mean(active ** 2))

    background = rng.standard_normal(n)
    x += background * np.sqrt(heart_power * 10 ** (-spec.background_snr_db / 10.0))
    return x, intervals


def synth_corpus(spec: SynthSpec) -> Tuple[Manifest, List[Recording]]:
    """
    Generate a deterministic synthetic phonocardiogram corpus.

    Each patient draws a murmur status and a heart rate once; every recording
    uses its own random substream derived from (seed, patient, recording), so
    generation order never changes the output.
    """
    spec.validate()
    entries: List[RecordingMeta] = []
    recordings: List[Recording] = []

    for p in range(spec.n_patients):
        patient_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, p]))
        positive = bool(patient_rng.random() < spec.murmur_prevalence)
        hr_bpm = patient_rng.uniform(*spec.heart_rate_bpm_range)
        patient_id = f"p{p:04d}"

        for r in range(spec.recordings_per_patient):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, p, r + 1]))
            samples, intervals = _synth_recording(spec, hr_bpm, positive, rng)
            recording_id = f"{patient_id}_r{r}"
            meta = RecordingMeta(
                recording_id=recording_id,
                patient_id=patient_id,
                path=f"{recording_id}.wav",
                label=int(positive),
                site=SITES[r % 4],
                sample_rate_hz=SAMPLE_RATE_HZ,
                murmur_intervals=tuple(intervals),
            )
            entries.append(meta)
            recordings.append(Recording(meta=meta, samples=samples))

    n_pos = sum(e.label for e in entries)
    logger.info(f"Synthesized {len(entries)} recordings from {spec.n_patients} patients ({n_pos} murmur-positive)")
    return Manifest(entries=entries), recordings


def write_corpus(manifest: Manifest, recordings: List[Recording], out_dir: Path) -> Path:
    """Write WAV files and manifest.jsonl into out_dir. Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for recording in recordings:
        write_recording(recording, out_dir / recording.meta.path)
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(manifest, manifest_path)
    logger.info(f"Wrote {len(recordings)} recordings to {out_dir}")
    return manifest_path
