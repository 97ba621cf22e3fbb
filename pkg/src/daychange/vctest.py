"""Variance-component score statistic for a candidate change day.

Modeling the post-change mean shift as beta ~ N(0, tau I) and the variance
shift as delta I reduces a (p+1)-parameter alternative to the two variance
components (tau, delta).  Stacking the m = T-k+1 post-change days gives a
Gaussian with covariance I_m x Sigma + J_m x tau I + I_m x delta I, and
differentiating its marginal log-likelihood at (tau, delta) = (0, 0) yields,
with A = Sigma^{-1}, e_t = y_t - mu for t >= k and s = sum of the e_t:

    U_tau   = (s^T A^2 s - m tr A) / 2
    U_delta = (sum_t e_t^T A^2 e_t - m tr A) / 2
    I(tau, delta) = tr(A^2)/2 * [[m^2, m], [m, m]]   (expected information)

The quadratic form Q_k = U^T I^{-1} U is scanned over candidate days
k in [T-db, T-1] and the maximum is the test statistic.  Plug-in estimates
of (mu, Sigma) come either from all days (the classical choice, valid under
the null) or from pre-change days only, which avoids the bias of pooled
estimates when a change is actually present.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._linalg import Precision, as_precision
from .errors import SingularInformationError, WindowError
from .estimators import pooled_estimates, prechange_estimates, regularize_cov
from .model import FeatureMatrix

VARIANTS = ("full", "mean_only", "variance_only")
ESTIMATOR_MODES = ("prechange", "all_days")

# Smallest candidate day each estimator mode can score: pre-change
# covariance needs 3 prior days, pooled estimation needs only a nonempty
# pre-change stretch.
_K_FLOOR = {"prechange": 4, "all_days": 2}


@dataclass
class ScoreParts:
    """Score vector and expected information at one candidate day."""

    u_tau: float
    u_delta: float
    info: np.ndarray
    m: int


@dataclass
class CandidateScan:
    """Per-candidate statistics over a search window plus the max.

    ``stats`` maps each candidate day k to its statistic, in ascending day
    order; ties in the max are broken toward the earliest day.  Baseline
    detectors reuse this shape with their method name in ``variant``.
    """

    stats: dict[int, float]
    argmax_day: int
    max_stat: float
    variant: str
    estimator_mode: Optional[str] = None


def _scan_from_stats(days, stats, variant, estimator_mode=None) -> CandidateScan:
    stats = np.asarray(stats, dtype=float)
    best = int(np.argmax(stats))  # first occurrence: earliest day wins ties
    return CandidateScan(
        stats={int(d): float(s) for d, s in zip(days, stats)},
        argmax_day=int(days[best]),
        max_stat=float(stats[best]),
        variant=variant,
        estimator_mode=estimator_mode,
    )


def score_parts(Y, k: int, mu_hat, sigma_hat) -> ScoreParts:
    """Score vector and expected information for candidate day k.

    ``sigma_hat`` may be a covariance matrix or an already-factored
    :class:`~daychange._linalg.Precision`.
    """
    values = Y.values if isinstance(Y, FeatureMatrix) else np.asarray(Y, float)
    t = values.shape[1]
    m = t - k + 1
    if m < 2:
        raise WindowError(f"candidate k={k} leaves m={m} post-change days; need 2")
    if k < 2:
        raise WindowError(f"candidate k={k} has no pre-change days")
    prec = as_precision(sigma_hat, f"sigma_hat at k={k}")
    mu_hat = np.asarray(mu_hat, dtype=float)
    e = values[:, k - 1 :] - mu_hat[:, None]
    ae = prec.solve(e)
    a_s = ae.sum(axis=1)  # A s, with s the summed post-change residual
    tr_a = prec.trace_inv
    u_tau = 0.5 * (float(a_s @ a_s) - m * tr_a)
    u_delta = 0.5 * (float(np.sum(ae * ae)) - m * tr_a)
    tr_a2 = prec.trace_inv_sq
    info = 0.5 * tr_a2 * np.array([[m * m, m], [m, m]], dtype=float)
    return ScoreParts(u_tau=u_tau, u_delta=u_delta, info=info, m=m)


def q_statistic(parts: ScoreParts, variant: str = "full") -> float:
    """Q = U^T I^{-1} U, or the single-component version for a sub-model."""
    if variant not in VARIANTS:
        raise WindowError(f"unknown variant {variant!r}")
    i_tt = parts.info[0, 0]
    i_td = parts.info[0, 1]
    i_dd = parts.info[1, 1]
    if variant == "mean_only":
        if i_tt <= 0:
            raise SingularInformationError("tau-information is not positive")
        return parts.u_tau**2 / i_tt
    if variant == "variance_only":
        if i_dd <= 0:
            raise SingularInformationError("delta-information is not positive")
        return parts.u_delta**2 / i_dd
    det = i_tt * i_dd - i_td * i_td
    if det <= 0:
        raise SingularInformationError(
            f"information matrix singular (det={det:.6g}, m={parts.m})"
        )
    u0, u1 = parts.u_tau, parts.u_delta
    return (i_dd * u0 * u0 - 2.0 * i_td * u0 * u1 + i_tt * u1 * u1) / det


def scan_batch(
    cube: np.ndarray,
    db: int,
    variant: str = "full",
    estimator_mode: str = "prechange",
) -> np.ndarray:
    """Max Q_k for a stack of replicate panels at phi = 1.

    ``cube`` has shape (B, p, T).  Full regularization makes the working
    covariance diagonal, so every candidate's statistics reduce to
    elementwise operations that vectorize across replicates.  Agreement with
    :func:`scan` is exact up to floating-point summation order.
    """
    cube = np.asarray(cube, dtype=float)
    nrep, p, t = cube.shape
    if variant not in VARIANTS:
        raise WindowError(f"unknown variant {variant!r}")
    if estimator_mode not in ESTIMATOR_MODES:
        raise WindowError(f"unknown estimator_mode {estimator_mode!r}")
    if db < 1:
        raise WindowError(f"db={db} must be at least 1")
    k_lo, k_hi = t - db, t - 1
    floor = _K_FLOOR[estimator_mode]
    if k_lo < floor:
        raise WindowError(
            f"window start k={k_lo} is below the estimator floor {floor} "
            f"(T={t}, db={db}); shrink db"
        )
    prefix = np.cumsum(cube, axis=2)
    prefix_sq = np.cumsum(cube * cube, axis=2)
    if estimator_mode == "all_days":
        mean_all = prefix[:, :, -1] / t
        var_all = (prefix_sq[:, :, -1] - t * mean_all**2) / (t - 1)
        _check_positive_variances(var_all)
    best = np.full(nrep, -np.inf)
    for k in range(k_lo, k_hi + 1):
        if estimator_mode == "prechange":
            n_pre = k - 1
            mean = prefix[:, :, n_pre - 1] / n_pre
            var = (prefix_sq[:, :, n_pre - 1] - n_pre * mean**2) / (n_pre - 1)
            _check_positive_variances(var)
        else:
            mean, var = mean_all, var_all
        m = t - k + 1
        e = cube[:, :, k - 1 :] - mean[:, :, None]
        a = 1.0 / var
        ae = e * a[:, :, None]
        tr_a = a.sum(axis=1)
        tr_a2 = (a * a).sum(axis=1)
        u_tau = 0.5 * ((ae.sum(axis=2) ** 2).sum(axis=1) - m * tr_a)
        u_delta = 0.5 * ((ae * ae).sum(axis=(1, 2)) - m * tr_a)
        c = 0.5 * tr_a2
        if variant == "mean_only":
            q = u_tau**2 / (c * m * m)
        elif variant == "variance_only":
            q = u_delta**2 / (c * m)
        else:
            det = c * c * m * m * (m - 1)
            q = (c * m * u_tau**2 - 2 * c * m * u_tau * u_delta
                 + c * m * m * u_delta**2) / det
        np.maximum(best, q, out=best)
    return best


def _check_positive_variances(var: np.ndarray) -> None:
    if np.all(var > 0.0):
        return
    bad_rep = int(np.nonzero(~(var > 0.0).all(axis=1))[0][0])
    from .errors import DegenerateFeatureError

    raise DegenerateFeatureError(
        f"replicate {bad_rep} has a feature with non-positive sample variance"
    )


def scan(
    Y,
    db: int,
    variant: str = "full",
    estimator_mode: str = "prechange",
    phi: float = 1.0,
) -> CandidateScan:
    """Q_k over candidate days k in [T-db, T-1].

    In ``prechange`` mode each candidate k re-estimates mu and the
    regularized covariance from days 1..k-1; in ``all_days`` mode one pooled
    estimate over all T days is shared across candidates.
    """
    if estimator_mode not in ESTIMATOR_MODES:
        raise WindowError(f"unknown estimator_mode {estimator_mode!r}")
    values = Y.values if isinstance(Y, FeatureMatrix) else np.asarray(Y, float)
    names = Y.feature_names if isinstance(Y, FeatureMatrix) else None
    t = values.shape[1]
    if db < 1:
        raise WindowError(f"db={db} must be at least 1")
    k_lo = t - db
    k_hi = t - 1
    if k_lo > k_hi:
        raise WindowError(f"db={db} leaves no candidate days for T={t}")
    floor = _K_FLOOR[estimator_mode]
    if k_lo < floor:
        raise WindowError(
            f"window start k={k_lo} is below the estimator floor {floor} "
            f"(T={t}, db={db}); shrink db"
        )
    days = range(k_lo, k_hi + 1)
    stats = []
    if estimator_mode == "all_days":
        mc = pooled_estimates(values)
        reg = regularize_cov(mc.cov, phi, names)
        prec = Precision(reg.sigma_star_phi, "pooled sigma")
        for k in days:
            stats.append(q_statistic(score_parts(values, k, mc.mean, prec), variant))
    else:
        for k in days:
            mc = prechange_estimates(values, k)
            reg = regularize_cov(mc.cov, phi, names)
            prec = Precision(reg.sigma_star_phi, f"pre-change sigma at k={k}")
            stats.append(q_statistic(score_parts(values, k, mc.mean, prec), variant))
    return _scan_from_stats(list(days), stats, variant, estimator_mode)
