"""Independent numerical oracles used to pin expected values in tests.

Everything here is deliberately brute force and shares no code path with the
library: the stacked-Gaussian log-likelihood is evaluated through a dense
covariance built from explicit Kronecker products, scores come from central
differences, the expected information from explicitly formed dV/dtheta
matrices, and the divergence from a triple loop.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import multivariate_normal


def stacked_covariance(sigma: np.ndarray, m: int, tau: float, delta: float):
    """Covariance of the m stacked post-change days (day-major ordering)."""
    p = sigma.shape[0]
    return np.kron(np.eye(m), sigma + delta * np.eye(p)) + np.kron(
        np.ones((m, m)), tau * np.eye(p)
    )


def post_change_loglik(
    y_post: np.ndarray, mu: np.ndarray, sigma: np.ndarray, tau: float, delta: float
) -> float:
    """Marginal log-likelihood of the post-change block at (tau, delta).

    ``y_post`` is p-by-m (one column per post-change day).  The pre-change
    block does not depend on (tau, delta), so it is omitted: it cancels from
    every derivative taken here.
    """
    p, m = y_post.shape
    big_cov = stacked_covariance(sigma, m, tau, delta)
    e = (y_post - mu[:, None]).T.reshape(m * p)
    return float(multivariate_normal.logpdf(e, mean=np.zeros(m * p), cov=big_cov))


def fd_score(y_post, mu, sigma, step: float = 1e-5):
    """Central-difference score vector in (tau, delta) at the null."""

    def ll(tau, delta):
        return post_change_loglik(y_post, mu, sigma, tau, delta)

    u_tau = (ll(step, 0.0) - ll(-step, 0.0)) / (2.0 * step)
    u_delta = (ll(0.0, step) - ll(0.0, -step)) / (2.0 * step)
    return u_tau, u_delta


def explicit_information(sigma: np.ndarray, m: int) -> np.ndarray:
    """Expected information (1/2) tr(V^-1 dV V^-1 dV') from explicit dV's."""
    p = sigma.shape[0]
    v0 = stacked_covariance(sigma, m, 0.0, 0.0)
    dv_tau = np.kron(np.ones((m, m)), np.eye(p))
    dv_delta = np.eye(m * p)
    w_tau = np.linalg.solve(v0, dv_tau)
    w_delta = np.linalg.solve(v0, dv_delta)
    info = np.empty((2, 2))
    info[0, 0] = 0.5 * np.trace(w_tau @ w_tau)
    info[0, 1] = info[1, 0] = 0.5 * np.trace(w_tau @ w_delta)
    info[1, 1] = 0.5 * np.trace(w_delta @ w_delta)
    return info


def brute_force_divergence(x: np.ndarray, z: np.ndarray) -> float:
    """Triple-loop L1 divergence between row samples x (T0, p) and z (T1, p)."""
    t0, t1 = x.shape[0], z.shape[0]
    between = 0.0
    for i in range(t0):
        for j in range(t1):
            between += np.abs(x[i] - z[j]).sum()
    within_x = 0.0
    for i in range(t0):
        for j in range(i + 1, t0):
            within_x += np.abs(x[i] - x[j]).sum()
    within_z = 0.0
    for i in range(t1):
        for j in range(i + 1, t1):
            within_z += np.abs(z[i] - z[j]).sum()
    return (
        2.0 * between / (t0 * t1)
        - 2.0 * within_x / (t0 * (t0 - 1))
        - 2.0 * within_z / (t1 * (t1 - 1))
    )


def random_spd(rng: np.random.Generator, p: int) -> np.ndarray:
    a = rng.standard_normal((p, p))
    return a @ a.T + (0.5 + rng.uniform()) * np.eye(p)
