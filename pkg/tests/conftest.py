"""Pytest configuration and fixtures."""

import os

import numpy as np
import pytest

# Set test environment variables before stethonet.config is imported
os.environ["STETHONET_SEED"] = "7"
os.environ["STETHONET_LOG_LEVEL"] = "WARNING"
os.environ["STETHONET_NUM_THREADS"] = "1"

from stethonet.config import (  # noqa: E402
    BaselineConfig,
    EncoderConfig,
    LossConfig,
    PretrainConfig,
    ProtoConfig,
    ProtoHeadConfig,
    RunConfig,
    SinkhornConfig,
)
from stethonet.corpus import SynthSpec  # noqa: E402
from stethonet.store import WindowSet  # noqa: E402

WINDOW = 4000


@pytest.fixture
def small_synth_spec():
    """Ten patients, one short recording each."""
    return SynthSpec(n_patients=10, recordings_per_patient=1, duration_s=4.0, murmur_prevalence=0.5, seed=3)


@pytest.fixture
def tiny_run_config():
    """A run configuration small enough to train in seconds."""
    return RunConfig(
        seed=11,
        pretrain=PretrainConfig(epochs=2, batch_size=4, lr=1e-3, n_time_masks=1, n_freq_masks=1, max_mask_width=4),
        proto=ProtoConfig(epochs=2, lr=1e-3, k_shot=2, per_class=4, episodes_per_epoch=2),
        baseline=BaselineConfig(epochs=3, head_lr=1e-3, backbone_lr=1e-4, freeze_epochs=2, batch_size=4),
        loss=LossConfig(temperature=0.5, alpha=0.3, sinkhorn=SinkhornConfig(epsilon=0.1, max_iters=20)),
        encoder=EncoderConfig(embed_dim=8, tcn_blocks=2, enc2d_widths=(4, 8), enc2d_blocks_per_stage=1, dropout=0.0),
        head=ProtoHeadConfig(hidden=8, metric_dim=4, dropout=0.0),
    )


def _toy_windows(split: str, n_per_class: int, n_patients: int, seed: int) -> WindowSet:
    """Separable toy windows: low tone for class 0, noisy high tone for class 1."""
    rng = np.random.default_rng(seed)
    t = np.arange(WINDOW) / 4000.0
    samples, labels, patients, ids = [], [], [], []
    for label in (0, 1):
        for i in range(n_per_class):
            freq = 40.0 if label == 0 else 250.0
            x = np.sin(2 * np.pi * freq * t + rng.uniform(0, np.pi)) + 0.1 * rng.standard_normal(WINDOW)
            x = (x - x.mean()) / x.std()
            samples.append(x.astype(np.float32))
            labels.append(label)
            patients.append(f"{split}-c{label}-p{i % n_patients}")
            ids.append(f"{split}-c{label}-w{i:03d}")
    return WindowSet(
        split=split,
        window_ids=ids,
        patient_ids=patients,
        recording_ids=[p + "_r0" for p in patients],
        samples=np.stack(samples),
        _labels=np.asarray(labels, dtype=np.int64),
        sealed=split == "test",
    )


@pytest.fixture
def toy_train():
    return _toy_windows("train", n_per_class=8, n_patients=4, seed=0)


@pytest.fixture
def toy_val():
    return _toy_windows("val", n_per_class=4, n_patients=2, seed=1)


@pytest.fixture
def toy_test():
    return _toy_windows("test", n_per_class=4, n_patients=2, seed=2)
