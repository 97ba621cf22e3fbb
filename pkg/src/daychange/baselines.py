"""Baseline detectors: Hotelling max, multivariate CUSUM, sample divergence.

The CUSUM follows Crosier (1988): the distance b_t is the square root of the
quadratic form and the update accumulates the signed deviation, so the shrink
factor (1 - a/b_t) with a = sqrt(p) is scale-consistent and the identity
||S_t||_{Sigma^{-1}} = max(0, b_t - a) holds after every step.  A variant
with a squared-distance b_t and absolute deviations in the update is kept
behind ``convention="quadratic_abs"`` for A/B comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ._linalg import as_precision
from ._rng import rng
from .errors import DayChangeError, InsufficientDataError, SplitError, WindowError
from .estimators import pooled_estimates, _mean_cov
from .model import FeatureMatrix
from .vctest import CandidateScan, _scan_from_stats

CUSUM_CONVENTIONS = ("crosier", "quadratic_abs")


@dataclass
class CusumState:
    """Running CUSUM vector with its last distance and reset count."""

    s: np.ndarray
    last_b: float = 0.0
    reset_count: int = 0

    @classmethod
    def initial(cls, p: int) -> "CusumState":
        return cls(s=np.zeros(p))


@dataclass
class DivergenceSplit:
    """Pre/post day counts and the L1 divergence at one candidate day."""

    t0: int
    t1: int
    stat: float


def _values(Y) -> np.ndarray:
    return Y.values if isinstance(Y, FeatureMatrix) else np.asarray(Y, float)


def _window_days(t: int, db: int, k_floor: int):
    if db < 1:
        raise WindowError(f"db={db} must be at least 1")
    k_lo = max(t - db, k_floor)
    k_hi = t - 1
    if k_lo > k_hi:
        raise WindowError(f"db={db} leaves no candidate days for T={t}")
    return range(k_lo, k_hi + 1)


def hotelling_max(Y, db: int) -> CandidateScan:
    """Max of (y_t - mu)^T Sigma^{-1} (y_t - mu) over the search window.

    Pooled mean and covariance over all T days; requires T > p for a
    positive-definite pooled covariance (reduce p or preprocess otherwise).
    """
    values = _values(Y)
    t = values.shape[1]
    mc = pooled_estimates(values)
    try:
        prec = as_precision(mc.cov, "pooled covariance")
    except DayChangeError as exc:
        raise type(exc)(
            f"{exc}; Hotelling needs T > p days or upstream regularization"
        ) from None
    days = _window_days(t, db, 1)
    stats = [prec.quad(values[:, k - 1] - mc.mean) for k in days]
    return _scan_from_stats(list(days), stats, "hotelling", "pooled")


def cusum_step(
    state: CusumState,
    y_t,
    mu_hat,
    sigma_hat,
    a: float,
    convention: str = "crosier",
) -> CusumState:
    """One CUSUM update; resets S to zero whenever b_t does not exceed a."""
    if a <= 0:
        raise DayChangeError(f"tuning parameter a={a} must be positive")
    if convention not in CUSUM_CONVENTIONS:
        raise DayChangeError(f"unknown CUSUM convention {convention!r}")
    prec = as_precision(sigma_hat, "CUSUM sigma")
    dev = np.asarray(y_t, float) - np.asarray(mu_hat, float)
    d = state.s + dev
    q = prec.quad(d)
    if convention == "crosier":
        b = float(np.sqrt(q))
        carrier = d
    else:
        b = float(q)
        carrier = state.s + np.abs(dev)
    if b > a:
        return CusumState(s=carrier * (1.0 - a / b), last_b=b,
                          reset_count=state.reset_count)
    return CusumState(s=np.zeros_like(d), last_b=b,
                      reset_count=state.reset_count + 1)


def cusum_max(
    Y,
    db: int,
    a: float | None = None,
    baseline: str = "prewindow",
    convention: str = "crosier",
) -> CandidateScan:
    """Max of S_t^T Sigma^{-1} S_t over the window, recursing from day 1.

    Baseline mean/covariance come from the pre-window days (first T-db) by
    default, or from all days with ``baseline="pooled"``.
    """
    values = _values(Y)
    p, t = values.shape
    if a is None:
        a = float(np.sqrt(p))
    days = _window_days(t, db, 1)
    if baseline == "prewindow":
        n_base = t - db
        if n_base < 2:
            raise InsufficientDataError(
                f"CUSUM baseline needs at least 2 pre-window days, got {n_base}"
            )
        mc = _mean_cov(values[:, :n_base], n_base, n_base - 1)
    elif baseline == "pooled":
        mc = pooled_estimates(values)
    else:
        raise DayChangeError(f"unknown CUSUM baseline {baseline!r}")
    prec = as_precision(mc.cov, "CUSUM baseline covariance")
    state = CusumState.initial(p)
    stat_by_day = {}
    for day in range(1, max(days) + 1):
        state = cusum_step(state, values[:, day - 1], mc.mean, prec, a, convention)
        if day >= days[0]:
            stat_by_day[day] = prec.quad(state.s)
    return _scan_from_stats(
        list(days), [stat_by_day[d] for d in days], "cusum", baseline
    )


def sample_divergence(Y, k: int) -> DivergenceSplit:
    """L1 energy-style divergence between days before and from k onward."""
    values = _values(Y)
    t = values.shape[1]
    t0 = k - 1
    t1 = t - k + 1
    if t0 < 2 or t1 < 2:
        raise SplitError(
            f"split at k={k} leaves ({t0}, {t1}) days; need 2 per side"
        )
    x = values[:, : k - 1].T
    z = values[:, k - 1 :].T
    between = np.abs(x[:, None, :] - z[None, :, :]).sum(axis=2).sum()
    within_x = pdist(x, metric="cityblock").sum()
    within_z = pdist(z, metric="cityblock").sum()
    stat = (
        2.0 * between / (t0 * t1)
        - 2.0 * within_x / (t0 * (t0 - 1))
        - 2.0 * within_z / (t1 * (t1 - 1))
    )
    return DivergenceSplit(t0=t0, t1=t1, stat=float(stat))


def divergence_window_stats(values: np.ndarray, db: int) -> tuple[list[int], np.ndarray]:
    """Divergence at every candidate day of the window, from one distance matrix."""
    values = np.asarray(values, float)
    t = values.shape[1]
    days = list(_window_days(t, db, 3))
    dist = squareform(pdist(values.T, metric="cityblock"))
    stats = np.empty(len(days))
    for i, k in enumerate(days):
        t0 = k - 1
        t1 = t - k + 1
        between = dist[: k - 1, k - 1 :].sum()
        within_x = dist[: k - 1, : k - 1].sum() / 2.0
        within_z = dist[k - 1 :, k - 1 :].sum() / 2.0
        stats[i] = (
            2.0 * between / (t0 * t1)
            - 2.0 * within_x / (t0 * (t0 - 1))
            - 2.0 * within_z / (t1 * (t1 - 1))
        )
    return days, stats


def divergence_pvalues(
    observed: np.ndarray, null_stats: np.ndarray, smoothed: bool = False
) -> np.ndarray:
    """Per-candidate empirical p-values against columns of null statistics."""
    counts = (null_stats >= observed[None, :]).sum(axis=0)
    b = null_stats.shape[0]
    if smoothed:
        return (counts + 1.0) / (b + 1.0)
    return counts / b


def divergence_adjusted(
    Y,
    db: int,
    B: int = 1000,
    null_sampler=None,
    seed: int = 0,
    smoothed: bool = False,
):
    """Candidate day with the minimum empirical divergence p-value.

    For each candidate k the p-value is the proportion of B null replicate
    statistics at k that reach the observed statistic; reject for small
    values of the returned minimum.  Ties go to the earliest day.
    """
    if B < 1:
        raise DayChangeError(f"B={B} must be at least 1")
    if null_sampler is None:
        raise DayChangeError("divergence_adjusted requires a null_sampler")
    values = _values(Y)
    days, observed = divergence_window_stats(values, db)
    null_stats = np.empty((B, len(days)))
    for b in range(B):
        null_values = null_sampler(rng(seed, b))
        _, null_stats[b] = divergence_window_stats(null_values, db)
    pvals = divergence_pvalues(observed, null_stats, smoothed)
    best = int(np.argmin(pvals))  # first occurrence: earliest day wins ties
    return days[best], float(pvals[best])
