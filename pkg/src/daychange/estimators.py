"""Mean/covariance estimators and the regularized covariance.

Two estimation modes exist throughout the package: pooled estimates over all
T days (appropriate under the no-change null) and pre-change estimates over
days 1..k-1 only, which stay unbiased when a change actually occurred at k.
The regularized covariance blends the pre-change correlation matrix toward
the identity with weight phi, leaving the variances untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DayChangeError, DegenerateFeatureError, InsufficientDataError
from .model import FeatureMatrix


@dataclass
class MeanCov:
    """Sample mean and covariance with the day count that produced them."""

    mean: np.ndarray
    cov: np.ndarray
    n_used: int


@dataclass
class RegularizedCov:
    """Variance/correlation split of a covariance plus its phi-blend.

    ``sigma_star_phi = V^{1/2} [(1-phi) R + phi I] V^{1/2}`` where V is the
    diagonal of sample variances and R the sample correlation.  phi=0
    recovers the unregularized covariance, phi=1 the diagonal of variances.
    """

    v_hat: np.ndarray
    r_hat: np.ndarray
    phi: float
    sigma_star_phi: np.ndarray


def _values(Y) -> np.ndarray:
    if isinstance(Y, FeatureMatrix):
        if not Y.fully_observed:
            raise InsufficientDataError(
                "estimators require a fully observed panel; impute first"
            )
        return Y.values
    return np.asarray(Y, dtype=float)


def _mean_cov(values: np.ndarray, mean_div: int, cov_div: int) -> MeanCov:
    n = values.shape[1]
    mean = values.sum(axis=1) / mean_div
    centered = values - mean[:, None]
    cov = (centered @ centered.T) / cov_div
    return MeanCov(mean=mean, cov=cov, n_used=n)


def pooled_estimates(Y) -> MeanCov:
    """Sample mean and covariance over all T days (divisor T-1)."""
    values = _values(Y)
    t = values.shape[1]
    if t < 2:
        raise InsufficientDataError(f"need at least 2 days, got {t}")
    return _mean_cov(values, t, t - 1)


def prechange_estimates(Y, k: int) -> MeanCov:
    """Mean (divisor k-1) and covariance (divisor k-2) over days 1..k-1.

    k = 3 is the mathematical floor (covariance divisor 1); scans impose a
    stricter 3-pre-change-day stability floor on top of this.
    """
    values = _values(Y)
    t = values.shape[1]
    if k < 3:
        raise InsufficientDataError(
            f"candidate day k={k} leaves {k - 1} pre-change days; "
            "covariance needs at least 2"
        )
    if k > t + 1:
        raise InsufficientDataError(f"k={k} exceeds day count {t} + 1")
    pre = values[:, : k - 1]
    return _mean_cov(pre, k - 1, k - 2)


def regularize_cov(cov: np.ndarray, phi: float, feature_names=None) -> RegularizedCov:
    """phi-blend of an arbitrary sample covariance (shared machinery)."""
    if not 0.0 <= phi <= 1.0:
        raise DayChangeError(f"phi={phi} must lie in [0, 1]")
    s2 = np.diagonal(cov).copy()
    bad = np.nonzero(s2 <= 0.0)[0]
    if bad.size:
        i = int(bad[0])
        name = feature_names[i] if feature_names is not None else f"feature {i}"
        raise DegenerateFeatureError(
            f"{name} has non-positive sample variance {s2[i]:.6g}", feature=name
        )
    s = np.sqrt(s2)
    r_hat = cov / np.outer(s, s)
    np.clip(r_hat, -1.0, 1.0, out=r_hat)  # float error on collinear features
    np.fill_diagonal(r_hat, 1.0)
    p = cov.shape[0]
    blended = (1.0 - phi) * r_hat + phi * np.eye(p)
    sigma_star = np.outer(s, s) * blended
    return RegularizedCov(
        v_hat=np.diag(s2), r_hat=r_hat, phi=float(phi), sigma_star_phi=sigma_star
    )


def regularized_sigma(Y, k: int, phi: float) -> RegularizedCov:
    """Regularized pre-change covariance at candidate day k."""
    names = Y.feature_names if isinstance(Y, FeatureMatrix) else None
    mc = prechange_estimates(Y, k)
    return regularize_cov(mc.cov, phi, names)


def pooled_estimator_bias(T: int, k: int, beta, delta: float):
    """Bias of the pooled estimators when a change occurred at day k.

    Returns ``(mu_bias, sigma_bias)`` with
    ``mu_bias = ((T-k+1)/T) beta`` and
    ``sigma_bias = ((T-k+1)/T) delta I + ((k-1)(T-k+1)/(T(T-1))) beta beta^T``.
    """
    if not 2 <= k <= T:
        raise InsufficientDataError(f"k={k} outside 2..T for T={T}")
    beta = np.asarray(beta, dtype=float)
    p = beta.shape[0]
    m = T - k + 1
    mu_bias = (m / T) * beta
    sigma_bias = (m / T) * delta * np.eye(p) + (
        (k - 1) * m / (T * (T - 1))
    ) * np.outer(beta, beta)
    return mu_bias, sigma_bias
