"""Rollover-buffer windowing, patient-aware splits, oversampling plans and episodes."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from stethonet.config import WindowingConfig
from stethonet.corpus import SAMPLE_RATE_HZ, Manifest, Recording
from stethonet.views import AugmentationRecipe, sample_recipe

logger = logging.getLogger(__name__)

# Float slack when comparing gap boundaries in milliseconds
_GAP_SLACK_MS = 1e-6


class SplitError(ValueError):
    """A split or sampling request that the data cannot satisfy."""


class SegmentRef(NamedTuple):
    recording_id: str
    start_s: float
    end_s: float


@dataclass
class Segment:
    recording_id: str
    patient_id: str
    label: int
    start_s: float
    end_s: float
    samples: np.ndarray

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def ref(self) -> SegmentRef:
        return SegmentRef(self.recording_id, self.start_s, self.end_s)


@dataclass
class QualityFlags:
    temporal_continuity: bool = True
    amplitude_consistency: bool = True
    frequency_consistency: bool = True
    rhythm_preserved: bool = True
    label_pure: bool = True
    source_unified: bool = True

    @property
    def passed(self) -> bool:
        return all(vars(self).values())

    def failures(self) -> List[str]:
        return [name for name, ok in vars(self).items() if not ok]


@dataclass
class Window:
    window_id: str
    patient_id: str
    recording_id: str
    label: int
    samples: np.ndarray
    source_segments: List[Tuple[SegmentRef, float]] = field(default_factory=list)
    quality: QualityFlags = field(default_factory=QualityFlags)


@dataclass
class SplitAssignment:
    train: frozenset
    val: frozenset
    test: frozenset
    prevalence: Dict[str, float] = field(default_factory=dict)

    def split_of(self, patient_id: str) -> str:
        for name in ("train", "val", "test"):
            if patient_id in getattr(self, name):
                return name
        raise KeyError(patient_id)

    def to_json(self) -> dict:
        return {
            "train": sorted(self.train),
            "val": sorted(self.val),
            "test": sorted(self.test),
            "prevalence": self.prevalence,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SplitAssignment":
        return cls(
            train=frozenset(data["train"]),
            val=frozenset(data["val"]),
            test=frozenset(data["test"]),
            prevalence=dict(data.get("prevalence", {})),
        )


@dataclass
class Episode:
    support: List[Tuple[Hashable, int]]
    query: List[Tuple[Hashable, int]]


@dataclass
class PlanEntry:
    window_id: str
    recipe: AugmentationRecipe


# =============================================================================
# Segments
# =============================================================================


def _slice(rec: Recording, start_s: float, end_s: float) -> np.ndarray:
    start = int(round(start_s * SAMPLE_RATE_HZ))
    n = int(round((end_s - start_s) * SAMPLE_RATE_HZ))
    return rec.samples[start:start + n]


def extract_segments(rec: Recording, cfg: Optional[WindowingConfig] = None) -> Tuple[List[Segment], int]:
    """
    Map labeled intervals of a canonical recording onto segments.

    Positive recordings yield one segment per murmur interval. Negative
    recordings are tiled with 1.0 s tiles between and around any intervals.

    Returns:
        (segments, skipped) where skipped counts out-of-bounds intervals
    """
    cfg = cfg or WindowingConfig()
    meta = rec.meta
    duration = rec.duration_s
    skipped = 0
    in_bounds: List[Tuple[float, float]] = []

    for start_s, end_s in sorted(meta.murmur_intervals):
        if start_s < 0 or end_s > duration + 1e-9:
            skipped += 1
            logger.warning(f"{meta.recording_id}: interval ({start_s}, {end_s}) outside {duration:.3f} s, skipped")
            continue
        in_bounds.append((start_s, end_s))

    segments: List[Segment] = []

    def emit(start_s: float, end_s: float) -> None:
        segments.append(Segment(
            recording_id=meta.recording_id,
            patient_id=meta.patient_id,
            label=meta.label,
            start_s=start_s,
            end_s=end_s,
            samples=_slice(rec, start_s, end_s),
        ))

    if meta.label == 1:
        for start_s, end_s in in_bounds:
            length = end_s - start_s
            if cfg.min_segment_s <= length <= cfg.max_segment_s:
                emit(start_s, end_s)
            else:
                logger.debug(f"{meta.recording_id}: murmur segment of {length:.3f} s outside length range")
        return segments, skipped

    # Free regions around annotated intervals
    cursor = 0.0
    regions = []
    for start_s, end_s in in_bounds:
        if start_s > cursor:
            regions.append((cursor, start_s))
        cursor = max(cursor, end_s)
    if cursor < duration:
        regions.append((cursor, duration))

    for region_start, region_end in regions:
        t = region_start
        while region_end - t >= cfg.min_segment_s - 1e-9:
            end = min(t + cfg.negative_tile_s, region_end)
            emit(round(t, 6), round(end, 6))
            t = end

    return segments, skipped


def estimate_heart_rate(rec: Recording, cfg: Optional[WindowingConfig] = None) -> float:
    """
    Heart rate from the autocorrelation peak of the amplitude envelope,
    searched over 0.33-2.5 s lags. Falls back to 72 bpm when no peak exists.
    """
    cfg = cfg or WindowingConfig()
    env_rate = 100
    envelope = np.abs(signal.hilbert(rec.samples))
    envelope = signal.resample_poly(envelope, 1, SAMPLE_RATE_HZ // env_rate)
    envelope = envelope - envelope.mean()

    lo, hi = int(0.33 * env_rate), int(2.5 * env_rate)
    if len(envelope) <= hi or not np.any(envelope):
        return cfg.fallback_hr_bpm

    acf = signal.correlate(envelope, envelope, mode="full", method="fft")[len(envelope) - 1:]
    search = acf[lo:hi + 1]
    peaks, _ = signal.find_peaks(search)
    if len(peaks) == 0 or search[peaks].max() <= 0:
        return cfg.fallback_hr_bpm

    lag = (lo + peaks[np.argmax(search[peaks])]) / env_rate
    return 60.0 / lag


# =============================================================================
# Rollover buffer
# =============================================================================


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x ** 2))) if len(x) else 0.0


def _spectral_centroid(x: np.ndarray) -> float:
    magnitude = np.abs(np.fft.rfft(x))
    total = magnitude.sum()
    if total == 0:
        return 0.0
    freqs = np.fft.rfftfreq(len(x), d=1.0 / SAMPLE_RATE_HZ)
    return float((freqs * magnitude).sum() / total)


def gap_allowed(gap_ms: float, hr_estimate_bpm: float, cfg: WindowingConfig) -> bool:
    """The rhythm rules for joining two segments."""
    max_cycle_ms = cfg.max_gap_cycles * 60_000.0 / hr_estimate_bpm
    return (
        cfg.min_gap_ms - _GAP_SLACK_MS <= gap_ms <= cfg.max_gap_ms + _GAP_SLACK_MS
        and gap_ms <= max_cycle_ms + _GAP_SLACK_MS
    )


def assess_quality(
    pieces: List[np.ndarray],
    sources: List[Tuple[Segment, float]],
    hr_estimate_bpm: float,
    cfg: WindowingConfig,
) -> QualityFlags:
    """Quality checks over the contributed pieces of a window."""
    window = np.concatenate(pieces)
    sigma = float(window.std())
    flags = QualityFlags(
        label_pure=len({seg.label for seg, _ in sources}) == 1,
        source_unified=len({seg.recording_id for seg, _ in sources}) == 1,
        rhythm_preserved=all(gap_allowed(gap, hr_estimate_bpm, cfg) for _, gap in sources[1:]),
    )

    for prev, nxt in zip(pieces, pieces[1:]):
        if abs(prev[-1] - nxt[0]) >= cfg.continuity_sigmas * sigma + 1e-12:
            flags.temporal_continuity = False

        rms_prev, rms_next = _rms(prev), _rms(nxt)
        if rms_prev == 0 and rms_next == 0:
            ratio = 1.0
        elif rms_prev == 0:
            ratio = math.inf
        else:
            ratio = rms_next / rms_prev
        if not cfg.rms_ratio_low <= ratio <= cfg.rms_ratio_high:
            flags.amplitude_consistency = False

        if abs(_spectral_centroid(prev) - _spectral_centroid(nxt)) >= cfg.max_centroid_diff_hz:
            flags.frequency_consistency = False

    return flags


def build_windows(
    segments: Sequence[Segment],
    hr_estimate_bpm: float,
    cfg: Optional[WindowingConfig] = None,
) -> List[Window]:
    """
    Greedily concatenate adjacent same-recording, same-label segments into
    fixed-length windows.

    A gap outside [50, 1000] ms or longer than 1.5 expected cardiac cycles
    breaks the chain; the partial buffer is dropped, as is any leftover at
    the end of a recording.
    """
    cfg = cfg or WindowingConfig()
    if hr_estimate_bpm <= 0:
        raise ValueError(f"hr_estimate_bpm must be > 0, got {hr_estimate_bpm}")

    ordered = sorted(segments, key=lambda s: (s.recording_id, s.start_s))
    windows: List[Window] = []
    counters: Dict[str, int] = {}
    buffer: List[Tuple[Segment, float]] = []
    buffered = 0

    for seg in ordered:
        if buffer:
            prev = buffer[-1][0]
            gap_ms = (seg.start_s - prev.end_s) * 1000.0
            joinable = (
                seg.recording_id == prev.recording_id
                and seg.label == prev.label
                and gap_allowed(gap_ms, hr_estimate_bpm, cfg)
            )
            if not joinable:
                buffer, buffered = [], 0
        gap = (seg.start_s - buffer[-1][0].end_s) * 1000.0 if buffer else 0.0
        buffer.append((seg, gap))
        buffered += len(seg.samples)

        if buffered >= cfg.window_samples:
            pieces = []
            remaining = cfg.window_samples
            for part, _ in buffer:
                take = part.samples[:remaining]
                pieces.append(take)
                remaining -= len(take)
            first = buffer[0][0]
            index = counters.get(first.recording_id, 0)
            counters[first.recording_id] = index + 1
            windows.append(Window(
                window_id=f"{first.recording_id}-w{index:03d}",
                patient_id=first.patient_id,
                recording_id=first.recording_id,
                label=first.label,
                samples=np.concatenate(pieces),
                source_segments=[(part.ref, gap_ms) for part, gap_ms in buffer],
                quality=assess_quality(pieces, buffer, hr_estimate_bpm, cfg),
            ))
            buffer, buffered = [], 0

    return windows


# =============================================================================
# Splits
# =============================================================================


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_patients(
    manifest: Manifest,
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 42,
) -> SplitAssignment:
    """
    Patient-aware stratified split.

    Patients are stratified by patient-level label; positives are spread
    over the splits in proportion to the ratios, then negatives fill each
    split up to its patient quota.

    Raises:
        SplitError: fewer than 5 patients, or a split would be empty
    """
    labels = manifest.patient_labels()
    patients = sorted(labels)
    n = len(patients)
    if n < 5:
        raise SplitError(f"need at least 5 patients to split, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"split ratios must sum to 1, got {ratios}")

    n_val = _round_half_up(ratios[1] * n)
    n_test = _round_half_up(ratios[2] * n)
    quotas = [n - n_val - n_test, n_val, n_test]
    if min(quotas) < 1:
        raise SplitError(f"too few patients ({n}) to fill every split: {quotas}")

    rng = np.random.default_rng(seed)
    positives = [p for p in patients if labels[p] == 1]
    negatives = [p for p in patients if labels[p] == 0]
    rng.shuffle(positives)
    rng.shuffle(negatives)

    n_pos = len(positives)
    pos_counts = [0, min(quotas[1], _round_half_up(ratios[1] * n_pos)), min(quotas[2], _round_half_up(ratios[2] * n_pos))]
    pos_counts[0] = n_pos - pos_counts[1] - pos_counts[2]
    # Overflowing train positives move to val/test while they have room
    while pos_counts[0] > quotas[0]:
        target = 1 if quotas[1] - pos_counts[1] >= quotas[2] - pos_counts[2] else 2
        pos_counts[target] += 1
        pos_counts[0] -= 1

    groups: List[List[str]] = [[], [], []]
    pos_iter, neg_iter = iter(positives), iter(negatives)
    for i in range(3):
        groups[i].extend(next(pos_iter) for _ in range(pos_counts[i]))
        groups[i].extend(next(neg_iter) for _ in range(quotas[i] - pos_counts[i]))

    names = ("train", "val", "test")
    prevalence = {
        name: (sum(labels[p] for p in group) / len(group)) for name, group in zip(names, groups)
    }
    prevalence["all"] = n_pos / n

    assignment = SplitAssignment(
        train=frozenset(groups[0]),
        val=frozenset(groups[1]),
        test=frozenset(groups[2]),
        prevalence=prevalence,
    )
    logger.info(
        f"Split {n} patients into {len(groups[0])}/{len(groups[1])}/{len(groups[2])} "
        f"(prevalence {prevalence['train']:.2f}/{prevalence['val']:.2f}/{prevalence['test']:.2f})"
    )
    return assignment


def subsample_patients(
    patient_labels: Dict[str, int],
    fraction: float,
    seed: int,
) -> List[str]:
    """
    Stratified patient subset for label-fraction experiments.

    Each class is shuffled once per seed and truncated, so the subset at a
    smaller fraction is always contained in the subset at a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise SplitError(f"fraction must be in (0, 1], got {fraction}")

    rng = np.random.default_rng(seed)
    chosen: List[str] = []
    for label in (0, 1):
        members = sorted(p for p, y in patient_labels.items() if y == label)
        rng.shuffle(members)
        if not members:
            continue
        keep = max(1, math.ceil(fraction * len(members) - 1e-9))
        chosen.extend(members[:keep])

    if len({patient_labels[p] for p in chosen}) < 2:
        raise SplitError(f"fraction {fraction} leaves a single-class training split")
    return sorted(chosen)


# =============================================================================
# Oversampling and episodes
# =============================================================================


def oversample_minority(
    train_windows: Sequence[Window],
    seed: int,
    train_patients: Optional[Iterable[str]] = None,
) -> List[PlanEntry]:
    """
    Augmentation plan that brings the minority class to a 1:1 ratio.

    Minority windows are cycled in a seeded order; each entry carries its own
    recipe drawn from the 1D augmentation catalogue.

    Raises:
        SplitError: single-class training split, or a window from outside
            the training patients
    """
    if train_patients is not None:
        allowed = set(train_patients)
        outside = [w.window_id for w in train_windows if w.patient_id not in allowed]
        if outside:
            raise SplitError(f"windows from non-training patients: {outside[:3]}")

    by_label: Dict[int, List[Window]] = {0: [], 1: []}
    for w in train_windows:
        by_label[w.label].append(w)
    if not by_label[0] or not by_label[1]:
        raise SplitError("oversampling needs both classes in the training split")

    minority = 0 if len(by_label[0]) < len(by_label[1]) else 1
    deficit = abs(len(by_label[0]) - len(by_label[1]))
    if deficit == 0:
        return []

    rng = np.random.default_rng(seed)
    sources = sorted(by_label[minority], key=lambda w: w.window_id)
    order = rng.permutation(len(sources))
    plan = []
    for i in range(deficit):
        source = sources[order[i % len(sources)]]
        plan.append(PlanEntry(window_id=source.window_id, recipe=sample_recipe(rng)))

    logger.info(f"Oversampling plan: {deficit} augmented copies of class {minority}")
    return plan


def make_episode(batch: Sequence[Tuple[Hashable, int]], k_shot: int = 5, seed: int = 0) -> Episode:
    """
    Partition a labeled batch into disjoint support and query sets.

    Per class the support size is min(k_shot, floor(n_c / 2)), at least 1.

    Raises:
        SplitError: a class with a single member
    """
    by_class: Dict[int, List[int]] = {}
    for i, (_, label) in enumerate(batch):
        by_class.setdefault(label, []).append(i)

    rng = np.random.default_rng(seed)
    support, query = [], []
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            raise SplitError(f"class {label} has a single member; cannot form support and query")
        order = rng.permutation(members)
        n_support = max(1, min(k_shot, len(members) // 2))
        support.extend(batch[i] for i in order[:n_support])
        query.extend(batch[i] for i in order[n_support:])
    return Episode(support=support, query=query)


def sample_balanced_batch(labels: Sequence[int], per_class: int, rng: np.random.Generator) -> List[int]:
    """Indices of a class-balanced batch drawn without replacement."""
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    members = {label: np.flatnonzero(labels == label) for label in classes}
    size = min([per_class] + [len(m) for m in members.values()])
    chosen: List[int] = []
    for label in classes:
        chosen.extend(rng.choice(members[label], size=size, replace=False).tolist())
    return chosen
