"""Generative model for daily feature panels and synthetic-data generation.

A stream is a p-feature-by-T-day matrix.  Pre-change days are i.i.d.
N(mu, Sigma); from the change day k onward each day picks up a shared mean
shift beta and an added variance delta on the affected features.  Synthetic
data for power studies and null replicates is produced here, deterministically
from an explicit seed.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._linalg import cholesky_factor
from ._rng import rng
from .errors import DayChangeError, InsufficientDataError

CHANGE_KINDS = ("mean_only", "variance_only", "both", "none")


@dataclass
class FeatureMatrix:
    """A p-by-T daily feature panel.

    ``values[i, t]`` is feature i on day ``day_index[t]``; day labels are
    consecutive integers so calendar gaps must be materialized as fully
    missing days before construction.  ``missing_mask`` is True where a value
    was observed.
    """

    values: np.ndarray
    day_index: np.ndarray
    feature_names: list[str]
    missing_mask: np.ndarray
    start_date: Optional[datetime.date] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.day_index = np.asarray(self.day_index, dtype=int)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        p, t = self.values.shape
        if self.missing_mask.shape != (p, t):
            raise DayChangeError(
                f"missing_mask shape {self.missing_mask.shape} does not match "
                f"values shape {(p, t)}"
            )
        if len(self.feature_names) != p:
            raise DayChangeError(
                f"{len(self.feature_names)} feature names for {p} features"
            )
        if self.day_index.shape != (t,):
            raise DayChangeError("day_index length does not match day count")
        if t > 1 and not np.all(np.diff(self.day_index) == 1):
            raise DayChangeError("day_index must be consecutive increasing integers")
        if not np.all(np.isfinite(self.values[self.missing_mask])):
            raise DayChangeError("observed values must be finite")

    @classmethod
    def from_values(cls, values, feature_names=None, start_day=1, start_date=None):
        values = np.asarray(values, dtype=float)
        p, t = values.shape
        if feature_names is None:
            feature_names = [f"f{i + 1}" for i in range(p)]
        return cls(
            values=values,
            day_index=np.arange(start_day, start_day + t),
            feature_names=list(feature_names),
            missing_mask=np.ones((p, t), dtype=bool),
            start_date=start_date,
        )

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.missing_mask.all())

    def slice_days(self, start: int, stop: int) -> "FeatureMatrix":
        """Sub-panel over day positions [start, stop), preserving day labels."""
        return FeatureMatrix(
            values=self.values[:, start:stop],
            day_index=self.day_index[start:stop],
            feature_names=self.feature_names,
            missing_mask=self.missing_mask[:, start:stop],
            start_date=self.start_date,
        )

    def dates(self):
        """Calendar dates per day, or None when no start date is attached."""
        if self.start_date is None:
            return None
        return [
            self.start_date + datetime.timedelta(days=int(d - 1))
            for d in self.day_index
        ]


@dataclass
class ChangePointParams:
    """Realized parameters of one change-point configuration.

    ``beta`` is the full-length mean-shift vector (zeros off the affected
    subset); ``affected`` lists the affected feature indices, which also
    receive the added variance ``delta``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    k: int
    beta: np.ndarray
    delta: float
    tau: float
    omega: float
    affected: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.affected = np.asarray(self.affected, dtype=int)
        p = self.mu.shape[0]
        if self.sigma.shape != (p, p):
            raise DayChangeError("sigma shape does not match mu length")
        if not np.allclose(self.sigma, self.sigma.T):
            raise DayChangeError("sigma must be symmetric")
        if self.beta.shape != (p,):
            raise DayChangeError("beta length does not match feature count")
        if self.delta < 0 or self.tau < 0:
            raise DayChangeError("delta and tau must be non-negative")
        if self.k < 2:
            raise DayChangeError("change day k must be at least 2")
        n_aff = affected_count(self.omega, p)
        if not 1 <= n_aff <= p:
            raise DayChangeError(f"omega={self.omega} maps to {n_aff} features")


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of one synthetic scenario."""

    T: int
    p: int
    k_star: int
    rho: float
    change_kind: str
    effect: float
    omega: float
    phi: float
    seed: int

    def __post_init__(self):
        if self.change_kind not in CHANGE_KINDS:
            raise DayChangeError(f"unknown change_kind {self.change_kind!r}")
        if not 0 <= self.rho < 1:
            raise DayChangeError("rho must lie in [0, 1)")
        if not 0 <= self.phi <= 1:
            raise DayChangeError("phi must lie in [0, 1]")
        if self.change_kind != "none":
            if self.k_star < 2:
                raise DayChangeError("need at least 2 post-change days (k_star >= 2)")
            if not 2 <= self.k <= self.T:
                raise DayChangeError(
                    f"change day k={self.k} outside 2..T for T={self.T}"
                )
            if self.effect < 0:
                raise DayChangeError("effect must be non-negative")

    @property
    def k(self) -> int:
        """First post-change day implied by k_star = T - k + 1."""
        return self.T - self.k_star + 1


def affected_count(omega: float, p: int) -> int:
    return int(round(omega * p))


def exchangeable_sigma(p: int, rho: float) -> np.ndarray:
    """Unit-diagonal covariance with common off-diagonal correlation rho.

    Eigenvalues are 1 + (p-1)rho (once) and 1 - rho (p-1 times), so the
    matrix is positive-definite exactly for rho in (-1/(p-1), 1).
    """
    if rho >= 1:
        raise DayChangeError(f"rho={rho} must be below 1")
    if p > 1 and rho < -1.0 / (p - 1):
        raise DayChangeError(
            f"rho={rho} below -1/(p-1)={-1.0 / (p - 1):.6g}; matrix not PD"
        )
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def generate_null(T, p, mu, sigma, seed) -> FeatureMatrix:
    """T i.i.d. draws from N_p(mu, sigma), deterministic given seed."""
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (p,))
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (p, p):
        raise DayChangeError(f"sigma must be {p}x{p}, got {sigma.shape}")
    chol = cholesky_factor(sigma, "generate_null sigma")
    z = rng(seed).standard_normal((p, T))
    return FeatureMatrix.from_values(mu[:, None] + chol @ z)


def generate_from_params(params: ChangePointParams, T: int, seed) -> FeatureMatrix:
    """Sample a stream with an explicit, fixed change-point configuration."""
    g = rng(seed) if not isinstance(seed, np.random.Generator) else seed
    return _sample_stream(params, T, g)


def _sample_stream(params: ChangePointParams, T: int, g: np.random.Generator):
    p = params.mu.shape[0]
    if not 2 <= params.k <= T:
        raise DayChangeError(f"change day k={params.k} outside 2..{T}")
    chol = cholesky_factor(params.sigma, "stream sigma")
    values = params.mu[:, None] + chol @ g.standard_normal((p, T))
    m = T - params.k + 1
    post = slice(params.k - 1, T)
    values[:, post] += params.beta[:, None]
    if params.delta > 0 and params.affected.size:
        extra = g.standard_normal((params.affected.size, m))
        values[params.affected, post] += np.sqrt(params.delta) * extra
    return FeatureMatrix.from_values(values)


def realize_params(spec: ScenarioSpec, g: np.random.Generator) -> ChangePointParams:
    """Draw the affected subset and beta for one replicate of a scenario.

    The subset is uniform without replacement; beta is N(0, tau I) on the
    subset and zero elsewhere, drawn once per replicate and shared across
    post-change days.  The draw order (subset, then beta) is fixed so effect
    rescaling under common random numbers reuses the same underlying normals.
    """
    p = spec.p
    mu = np.zeros(p)
    sigma = exchangeable_sigma(p, spec.rho)
    n_aff = affected_count(spec.omega, p)
    affected = np.sort(g.choice(p, size=n_aff, replace=False))
    z_beta = g.standard_normal(n_aff)
    tau = spec.effect if spec.change_kind in ("mean_only", "both") else 0.0
    delta = spec.effect if spec.change_kind in ("variance_only", "both") else 0.0
    beta = np.zeros(p)
    beta[affected] = np.sqrt(tau) * z_beta
    k = spec.k if spec.change_kind != "none" else max(2, spec.T)
    return ChangePointParams(
        mu=mu, sigma=sigma, k=k, beta=beta, delta=delta, tau=tau,
        omega=spec.omega, affected=affected,
    )


def generate_alternative(spec: ScenarioSpec, g: Optional[np.random.Generator] = None):
    """Sample one replicate of a scenario.

    Returns the stream together with the realized parameters (beta and the
    affected subset) for oracle checks.  With ``change_kind="none"`` the
    output is a pure null stream.
    """
    if g is None:
        g = rng(spec.seed)
    if spec.change_kind == "none":
        mu = np.zeros(spec.p)
        sigma = exchangeable_sigma(spec.p, spec.rho)
        chol = cholesky_factor(sigma, "scenario sigma")
        values = mu[:, None] + chol @ g.standard_normal((spec.p, spec.T))
        params = ChangePointParams(
            mu=mu, sigma=sigma, k=max(2, spec.T), beta=np.zeros(spec.p),
            delta=0.0, tau=0.0, omega=spec.omega,
            affected=np.arange(affected_count(spec.omega, spec.p)),
        )
        return FeatureMatrix.from_values(values), params
    if spec.k_star < 2:
        raise InsufficientDataError(
            f"k_star={spec.k_star}: the window needs at least 2 post-change days"
        )
    params = realize_params(spec, g)
    return _sample_stream(params, spec.T, g), params


def scenario_null_sampler(spec: ScenarioSpec):
    """Sampler of same-shape null streams (effect 0) for a scenario."""
    mu = np.zeros(spec.p)
    sigma = exchangeable_sigma(spec.p, spec.rho)
    chol = cholesky_factor(sigma, "scenario sigma")

    def sample(g: np.random.Generator) -> np.ndarray:
        return mu[:, None] + chol @ g.standard_normal((spec.p, spec.T))

    sample.tag = f"iid-gauss:p={spec.p}:T={spec.T}:rho={spec.rho:.17g}"
    return sample


def scenario_alt_sampler(spec: ScenarioSpec):
    """Sampler of alternative streams at the scenario's effect size."""

    def sample(g: np.random.Generator) -> np.ndarray:
        fm, _ = generate_alternative(spec, g)
        return fm.values

    sample.tag = (
        f"alt:{spec.change_kind}:p={spec.p}:T={spec.T}:k*={spec.k_star}"
        f":rho={spec.rho:.17g}:omega={spec.omega:.17g}:effect={spec.effect:.17g}"
    )
    return sample


def with_effect(spec: ScenarioSpec, effect: float) -> ScenarioSpec:
    return replace(spec, effect=effect)
