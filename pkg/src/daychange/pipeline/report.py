"""Per-stream summaries: change rates, method agreement, rank correlations."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.stats import spearmanr

from .._rng import BOOT_STREAM, rng
from ..errors import DayChangeError, UndefinedCorrelationError
from .online import DetectionLog


def changepoint_rate(log: DetectionLog, n_days_incl_imputed: int) -> float:
    """Detected change points per monitored day (imputed days included)."""
    if n_days_incl_imputed < 1:
        raise DayChangeError("day count must be at least 1")
    return len(log.entries) / n_days_incl_imputed


def _as_logs(logs) -> list[DetectionLog]:
    if isinstance(logs, DetectionLog):
        return [logs]
    return list(logs)


def method_similarity(log_a, log_b) -> float:
    """Jaccard overlap of (stream, day) detections between two methods.

    Both sides must cover overlapping stream sets; agreement over zero
    detections on shared streams counts as perfect.
    """
    logs_a, logs_b = _as_logs(log_a), _as_logs(log_b)
    streams_a = {log.stream_id for log in logs_a}
    streams_b = {log.stream_id for log in logs_b}
    if not streams_a & streams_b:
        raise DayChangeError(
            f"logs cover disjoint stream sets {sorted(streams_a)} vs "
            f"{sorted(streams_b)}"
        )
    set_a = {(log.stream_id, day) for log in logs_a for day in log.days()}
    set_b = {(log.stream_id, day) for log in logs_b for day in log.days()}
    union = set_a | set_b
    if not union:
        return 1.0
    return len(set_a & set_b) / len(union)


class SpearmanCI(NamedTuple):
    rho: float
    ci_low: float
    ci_high: float


def spearman_bootstrap(x, y, B: int = 1000, seed: int = 0) -> SpearmanCI:
    """Spearman correlation with a percentile 95% CI from paired resamples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise DayChangeError("x and y must be equal-length vectors of size >= 3")
    for name, v in (("x", x), ("y", y)):
        if np.all(v == v[0]):
            raise UndefinedCorrelationError(
                f"{name} has zero rank variance; correlation undefined"
            )
    rho = float(spearmanr(x, y).statistic)
    n = x.size
    g = rng(seed, BOOT_STREAM)
    boots = np.empty(B)
    for b in range(B):
        idx = g.integers(0, n, size=n)
        with np.errstate(invalid="ignore"):
            boots[b] = spearmanr(x[idx], y[idx]).statistic
    boots = boots[np.isfinite(boots)]  # degenerate resamples carry no signal
    if boots.size == 0:
        raise UndefinedCorrelationError("every bootstrap resample was degenerate")
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return SpearmanCI(rho=rho, ci_low=float(lo), ci_high=float(hi))
