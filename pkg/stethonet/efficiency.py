"""Label-efficiency curves: pretrained fine-tuning against a from-scratch supervised baseline."""

import copy
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import f1_score

from stethonet.config import RunConfig
from stethonet.models import ModelBundle, score_windows
from stethonet.stats import BOOTSTRAP_RESAMPLES, bootstrap_ci
from stethonet.store import WindowSet
from stethonet.training import adopt_architecture, pretrain, train_linear_baseline, train_proto
from stethonet.windows import subsample_patients

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class EfficiencyRow:
    fraction: float
    n_patients: int
    n_windows: int
    ssl_f1: float
    ssl_ci: Tuple[float, float]
    supervised_f1: float
    supervised_ci: Tuple[float, float]
    relative_improvement: float
    efficiency_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def _f1(labels: np.ndarray, preds: np.ndarray) -> float:
    return float(f1_score(labels, preds, zero_division=0))


def _test_f1(bundle: ModelBundle, test: WindowSet, n_boot: int, seed: int) -> Tuple[float, Tuple[float, float]]:
    _, scores = score_windows(bundle, test)
    preds = (scores >= bundle.threshold).astype(np.int64)
    ci = bootstrap_ci(test.labels, preds, test.patient_ids, _f1, n=n_boot, seed=seed)
    return _f1(test.labels, preds), ci


def efficiency_curve(
    config: RunConfig,
    train: WindowSet,
    val: Optional[WindowSet],
    test: WindowSet,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    pretrained: Optional[ModelBundle] = None,
    n_boot: int = BOOTSTRAP_RESAMPLES,
) -> List[EfficiencyRow]:
    """
    Paired runs per label fraction on nested, stratified patient subsets.

    The pretrained arm fine-tunes the prototypical head on a copy of one
    shared pretrain checkpoint (pretraining sees every training window,
    unlabeled); the supervised arm trains the linear baseline from scratch.
    Test F1 carries a patient-level bootstrap 95% CI.

    Raises:
        SplitError: a fraction leaving a single-class training split
    """
    if test.sealed:
        test = test.unseal()
    if pretrained is None:
        pretrained = pretrain(config, train).bundle
    config = adopt_architecture(config, pretrained)
    patient_labels = train.patient_labels()

    rows = []
    for fraction in sorted(fractions):
        patients = subsample_patients(patient_labels, fraction, config.seed)
        subset = train.restrict_patients(patients)
        logger.info(f"Label fraction {fraction:.2f}: {len(patients)} patients, {len(subset)} windows")

        ssl = train_proto(config, copy.deepcopy(pretrained), subset, val).bundle
        supervised = train_linear_baseline(config, None, subset, val).bundle
        ssl_f1, ssl_ci = _test_f1(ssl, test, n_boot, config.seed)
        sup_f1, sup_ci = _test_f1(supervised, test, n_boot, config.seed)

        rows.append(EfficiencyRow(
            fraction=fraction,
            n_patients=len(patients),
            n_windows=len(subset),
            ssl_f1=ssl_f1,
            ssl_ci=ssl_ci,
            supervised_f1=sup_f1,
            supervised_ci=sup_ci,
            relative_improvement=(ssl_f1 - sup_f1) / sup_f1 if sup_f1 > 0 else float("inf"),
            efficiency_ratio=ssl_f1 / sup_f1 if sup_f1 > 0 else float("inf"),
        ))
        logger.info(f"Fraction {fraction:.2f}: SSL F1 {ssl_f1:.3f} vs supervised {sup_f1:.3f}")
    return rows
