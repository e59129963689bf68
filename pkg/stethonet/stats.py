"""Paired significance tests for comparing two classifiers on the same samples."""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import average_precision_score

logger = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 2000


@dataclass
class DeLongResult:
    auc_a: float
    auc_b: float
    delta_auc: float
    z: float
    p: float


@dataclass
class McNemarResult:
    b: int
    c: int
    p_exact: float


@dataclass
class BootstrapResult:
    delta: float
    ci_low: float
    ci_high: float
    p: float
    n_resamples: int
    redrawn: int


@dataclass
class ComparisonReport:
    delong: DeLongResult
    mcnemar: McNemarResult
    bootstrap_auprc: BootstrapResult
    threshold_a: float = 0.5
    threshold_b: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


# =============================================================================
# DeLong
# =============================================================================


def compute_midrank(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    z = x[order]
    n = len(x)
    ranks = np.zeros(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j < n and z[j] == z[i]:
            j += 1
        ranks[i:j] = 0.5 * (i + j - 1) + 1
        i = j
    out = np.empty(n, dtype=np.float64)
    out[order] = ranks
    return out


def _delong_covariance(predictions: np.ndarray, n_pos: int) -> Tuple[np.ndarray, np.ndarray]:
    """AUCs and their covariance; predictions rows are models, positives first."""
    m = n_pos
    n = predictions.shape[1] - m
    k = predictions.shape[0]
    tx = np.empty((k, m))
    ty = np.empty((k, n))
    tz = np.empty((k, m + n))
    for r in range(k):
        tx[r] = compute_midrank(predictions[r, :m])
        ty[r] = compute_midrank(predictions[r, m:])
        tz[r] = compute_midrank(predictions[r])
    aucs = (tx.sum(axis=1) / m - (m + 1) / 2.0) / n
    v01 = (tz[:, :m] - tx) / n
    v10 = 1.0 - (tz[:, m:] - ty) / m
    sx = np.atleast_2d(np.cov(v01)) if m > 1 else np.zeros((k, k))
    sy = np.atleast_2d(np.cov(v10)) if n > 1 else np.zeros((k, k))
    return aucs, sx / m + sy / n


def delong_test(scores_a: Sequence[float], scores_b: Sequence[float], labels: Sequence[int]) -> DeLongResult:
    """
    Two-sided DeLong test for paired AUCs. A zero-variance difference
    gives z = 0 and p = 1.

    Raises:
        ValueError: single-class labels or unpaired inputs
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not (a.shape == b.shape == y.shape):
        raise ValueError("DeLong needs paired scores on the same samples")
    if len(np.unique(y)) < 2:
        raise ValueError("DeLong needs both classes")

    order = np.argsort(-y, kind="mergesort")
    n_pos = int(y.sum())
    aucs, cov = _delong_covariance(np.vstack([a[order], b[order]]), n_pos)
    delta = float(aucs[0] - aucs[1])
    var = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    if var <= 1e-15:
        z, p = 0.0, 1.0
    else:
        z = delta / np.sqrt(var)
        p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return DeLongResult(auc_a=float(aucs[0]), auc_b=float(aucs[1]), delta_auc=delta, z=float(z), p=p)


# =============================================================================
# McNemar
# =============================================================================


def mcnemar_test(correct_a: Sequence[bool], correct_b: Sequence[bool]) -> McNemarResult:
    """Exact two-sided binomial test over the discordant pairs."""
    ca = np.asarray(correct_a, dtype=bool)
    cb = np.asarray(correct_b, dtype=bool)
    if ca.shape != cb.shape:
        raise ValueError("McNemar needs paired predictions")
    b = int(np.sum(ca & ~cb))
    c = int(np.sum(~ca & cb))
    if b + c == 0:
        return McNemarResult(b=b, c=c, p_exact=1.0)
    p = min(1.0, 2.0 * float(stats.binom.cdf(min(b, c), b + c, 0.5)))
    return McNemarResult(b=b, c=c, p_exact=p)


# =============================================================================
# Patient-level bootstrap
# =============================================================================


def patient_resamples(
    labels: np.ndarray,
    patient_ids: Sequence[str],
    n: int,
    seed: int,
    stats_out: Dict[str, int],
) -> Iterator[np.ndarray]:
    """
    Row indices of n patient-level resamples drawn with replacement.

    Resamples holding a single class are redrawn; the number redrawn is
    written to stats_out["redrawn"].
    """
    patients = sorted(set(patient_ids))
    rows: Dict[str, List[int]] = {p: [] for p in patients}
    for i, p in enumerate(patient_ids):
        rows[p].append(i)
    if len(np.unique(labels)) < 2:
        raise ValueError("bootstrap needs both classes in the full sample")

    rng = np.random.default_rng(seed)
    stats_out["redrawn"] = 0
    produced = 0
    while produced < n:
        pick = rng.integers(0, len(patients), size=len(patients))
        idx = np.concatenate([rows[patients[j]] for j in pick])
        if len(np.unique(labels[idx])) < 2:
            stats_out["redrawn"] += 1
            if stats_out["redrawn"] > 100 * n:
                raise ValueError("bootstrap keeps drawing single-class resamples")
            continue
        produced += 1
        yield idx


def bootstrap_auprc(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    labels: Sequence[int],
    patient_ids: Sequence[str],
    n: int = BOOTSTRAP_RESAMPLES,
    seed: int = 42,
) -> BootstrapResult:
    """
    Patient-level bootstrap of AUPRC(a) - AUPRC(b).

    The p value compares |observed delta| with the resampled deltas centered
    at zero; the CI is the 2.5/97.5 percentile interval.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    observed = float(average_precision_score(y, a) - average_precision_score(y, b))

    counters: Dict[str, int] = {}
    deltas = np.array([
        average_precision_score(y[idx], a[idx]) - average_precision_score(y[idx], b[idx])
        for idx in patient_resamples(y, patient_ids, n, seed, counters)
    ])
    if counters["redrawn"]:
        logger.warning(f"Redrew {counters['redrawn']} single-class bootstrap resamples")

    null = deltas - deltas.mean()
    p = float(np.mean(np.abs(null) >= abs(observed)))
    low, high = np.percentile(deltas, [2.5, 97.5])
    return BootstrapResult(
        delta=observed,
        ci_low=float(low),
        ci_high=float(high),
        p=p,
        n_resamples=n,
        redrawn=counters["redrawn"],
    )


def bootstrap_ci(
    labels: Sequence[int],
    values: Sequence[float],
    patient_ids: Sequence[str],
    metric: Callable[[np.ndarray, np.ndarray], float],
    n: int = BOOTSTRAP_RESAMPLES,
    seed: int = 42,
) -> Tuple[float, float]:
    """Percentile 95% CI of metric(labels, values) over patient resamples."""
    y = np.asarray(labels, dtype=np.int64)
    v = np.asarray(values)
    counters: Dict[str, int] = {}
    samples = [metric(y[idx], v[idx]) for idx in patient_resamples(y, patient_ids, n, seed, counters)]
    low, high = np.percentile(samples, [2.5, 97.5])
    return float(low), float(high)


def compare(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    labels: Sequence[int],
    patient_ids: Sequence[str],
    threshold_a: float = 0.5,
    threshold_b: float = 0.5,
    n: int = BOOTSTRAP_RESAMPLES,
    seed: int = 42,
) -> ComparisonReport:
    """DeLong, McNemar and bootstrap AUPRC for two models scored on the same samples."""
    y = np.asarray(labels, dtype=np.int64)
    correct_a = (np.asarray(scores_a) >= threshold_a).astype(np.int64) == y
    correct_b = (np.asarray(scores_b) >= threshold_b).astype(np.int64) == y
    report = ComparisonReport(
        delong=delong_test(scores_a, scores_b, y),
        mcnemar=mcnemar_test(correct_a, correct_b),
        bootstrap_auprc=bootstrap_auprc(scores_a, scores_b, y, patient_ids, n=n, seed=seed),
        threshold_a=float(threshold_a),
        threshold_b=float(threshold_b),
    )
    logger.info(
        f"Compare: dAUC {report.delong.delta_auc:+.4f} (p={report.delong.p:.4f}), "
        f"McNemar b={report.mcnemar.b} c={report.mcnemar.c} (p={report.mcnemar.p_exact:.4f}), "
        f"dAUPRC {report.bootstrap_auprc.delta:+.4f} (p={report.bootstrap_auprc.p:.4f})"
    )
    return report
