"""Empirical null distributions, thresholds, power and calibration loops.

Thresholds and p-values come exclusively from Monte Carlo or permutation
nulls; no asymptotic reference distribution is used anywhere.  Replicates are
seeded per index, so results are identical whether they run serially or on a
process pool.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
import warnings
from dataclasses import dataclass
from math import ceil, sqrt
from typing import Callable, Optional

import numpy as np
from joblib import Parallel, delayed

from ._rng import ALT_STREAM, NULL_STREAM, seed_sequence
from .detectors import DetectorSpec, Scorer, config_digest, make_scorer
from .errors import CalibrationError, DayChangeError, NullBuildError
from .estimators import pooled_estimates
from .model import (
    ScenarioSpec,
    generate_alternative,
    scenario_null_sampler,
    with_effect,
)

MIN_NULL_SIZE = 100  # floor for thresholding at alpha = 0.05


@dataclass
class NullDistribution:
    """Sorted max-statistics from B replicates under no change."""

    samples: np.ndarray
    B: int
    method: str
    config_digest: str


@dataclass
class PowerEstimate:
    """Monte Carlo rejection rate with its binomial standard error."""

    power: float
    reps: int

    @property
    def se(self) -> float:
        return sqrt(self.power * (1.0 - self.power) / self.reps)


@dataclass
class CalibrationResult:
    effect: float
    power: PowerEstimate
    trace: list  # (effect, PowerEstimate) in evaluation order


@dataclass
class PhiSelection:
    phi: float
    selections: list  # phi chosen at each iteration


def _map_replicates(fn, n: int, n_jobs: int = 1):
    if n_jobs == 1:
        return [fn(i) for i in range(n)]
    return Parallel(n_jobs=n_jobs)(delayed(fn)(i) for i in range(n))

_BATCH_CHUNK = 256  # replicates per vectorized scoring call


def _batch_scores(scorer, sampler, n: int, base, on_error, n_jobs: int = 1):
    """Max statistics for n replicates, batched when the scorer supports it.

    Datasets are always drawn replicate-by-replicate from per-index
    sub-streams, so batching changes neither the draws nor their order.
    """
    if scorer.batch_fn is None:

        def one(i):
            g = np.random.default_rng(seed_sequence(base, i))
            try:
                return scorer(sampler(g)).max_stat
            except DayChangeError as exc:
                on_error(i, exc)

        return np.asarray(_map_replicates(one, n, n_jobs), dtype=float)

    def chunk(start):
        stop = min(start + _BATCH_CHUNK, n)
        panels = []
        for i in range(start, stop):
            g = np.random.default_rng(seed_sequence(base, i))
            try:
                panels.append(sampler(g))
            except DayChangeError as exc:
                on_error(i, exc)
        try:
            return scorer.batch_fn(np.stack(panels))
        except DayChangeError:
            # fall back per replicate so the failing index is reported
            for offset, values in enumerate(panels):
                try:
                    scorer(values)
                except DayChangeError as exc:
                    on_error(start + offset, exc)
            raise

    starts = list(range(0, n, _BATCH_CHUNK))
    chunks = _map_replicates(lambda j: chunk(starts[j]), len(starts), n_jobs)
    return np.concatenate(chunks)


def build_null(
    scorer: Scorer,
    shape: tuple[int, int],
    null_sampler,
    B: int,
    seed,
    n_jobs: int = 1,
) -> NullDistribution:
    """Score B independently sampled (or permuted) null datasets.

    Deterministic given seed; any detector failure aborts with the replicate
    index and seed material needed to reproduce it in isolation.
    """
    if B < MIN_NULL_SIZE:
        raise DayChangeError(
            f"B={B} null replicates is below the floor {MIN_NULL_SIZE}"
        )
    t, p = shape
    base = seed_sequence(seed, NULL_STREAM)

    def on_error(b, exc):
        raise NullBuildError(
            f"detector {scorer.name} failed on null replicate {b}: {exc}",
            replicate=b,
            seed_key=(base.entropy, base.spawn_key + (b,)),
        ) from exc

    samples = np.sort(_batch_scores(scorer, null_sampler, B, base, on_error, n_jobs))
    digest = config_digest(
        dict(
            scorer.digest_fields,
            T=t,
            p=p,
            B=B,
            seed=repr(seed),
            sampler=getattr(null_sampler, "tag", "opaque"),
        )
    )
    return NullDistribution(
        samples=samples, B=B, method=scorer.name, config_digest=digest
    )


def threshold(nd: NullDistribution, alpha: float) -> float:
    """The ceil((1-alpha)B)-th order statistic of the null samples."""
    if not 0.0 < alpha < 1.0:
        raise DayChangeError(f"alpha={alpha} must lie in (0, 1)")
    idx = max(1, ceil((1.0 - alpha) * nd.B))
    return float(nd.samples[idx - 1])


def p_value(nd: NullDistribution, observed: float, smoothed: bool = False) -> float:
    """Proportion of null samples at or above the observed statistic."""
    count = nd.B - int(np.searchsorted(nd.samples, observed, side="left"))
    if smoothed:
        return (count + 1.0) / (nd.B + 1.0)
    return count / nd.B


def save_null(nd: NullDistribution, path: str) -> None:
    """Atomically persist a null distribution next to its digest."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(
                fh,
                schema_version=1,
                samples=nd.samples,
                B=nd.B,
                method=nd.method,
                config_digest=nd.config_digest,
            )
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_null(path: str) -> NullDistribution:
    with np.load(path, allow_pickle=False) as data:
        if int(data["schema_version"]) != 1:
            raise DayChangeError(f"unsupported null-cache version in {path}")
        return NullDistribution(
            samples=np.asarray(data["samples"], dtype=float),
            B=int(data["B"]),
            method=str(data["method"]),
            config_digest=str(data["config_digest"]),
        )


class NullCache:
    """Disk cache of null distributions keyed by config digest.

    Reads are safe under concurrency; writes go through an atomic replace,
    so a single writer never exposes a partial file.
    """

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, digest: str) -> str:
        return os.path.join(self.directory, f"null_{digest}.npz")

    def get(self, digest: str) -> Optional[NullDistribution]:
        path = self._path(digest)
        if not os.path.exists(path):
            return None
        nd = load_null(path)
        if nd.config_digest != digest:
            return None  # stale or corrupt entry: treat as a miss
        return nd

    def put(self, nd: NullDistribution) -> str:
        path = self._path(nd.config_digest)
        save_null(nd, path)
        return path

    def get_or_build(self, digest: str, builder: Callable[[], NullDistribution]):
        nd = self.get(digest)
        if nd is not None:
            return nd
        nd = builder()
        if nd.config_digest != digest:
            raise DayChangeError(
                "builder produced a null with a different config digest"
            )
        self.put(nd)
        return nd


def estimate_power(
    scorer: Scorer,
    thresh: float,
    alt_sampler,
    reps: int,
    seed,
    n_jobs: int = 1,
) -> PowerEstimate:
    """Rejection rate of ``max_stat > thresh`` over seeded replicates."""
    if reps < 1:
        raise DayChangeError(f"reps={reps} must be positive")
    base = seed_sequence(seed, ALT_STREAM)

    def on_error(r, exc):
        raise type(exc)(
            f"detector {scorer.name} failed on power replicate {r}: {exc}"
        ) from exc

    stats = _batch_scores(scorer, alt_sampler, reps, base, on_error, n_jobs)
    return PowerEstimate(power=float(np.mean(stats > thresh)), reps=reps)


def _audit_monotone(trace) -> None:
    """Abort when the power-vs-effect trace is non-monotone beyond 2 SE."""
    ordered = sorted(trace, key=lambda t: t[0])
    for (e1, p1), (e2, p2) in zip(ordered, ordered[1:]):
        slack = 2.0 * sqrt(p1.se**2 + p2.se**2)
        if p1.power > p2.power + slack:
            raise CalibrationError(
                f"power not monotone in effect: {p1.power:.3f} at {e1:.6g} vs "
                f"{p2.power:.3f} at {e2:.6g} (slack {slack:.3f})",
                trace=trace,
            )


def _bisect_power(
    power_fn,
    target: float,
    tol: float,
    initial: float,
    max_doublings: int = 40,
):
    """Bisection of a Monte Carlo power curve over a scalar effect.

    ``power_fn`` must use common random numbers across effect values so that
    the monotonicity audit is meaningful.
    """
    trace = []

    def evaluate(effect):
        pe = power_fn(effect)
        trace.append((effect, pe))
        return pe

    lo, hi = 0.0, float(initial)
    pe_hi = evaluate(hi)
    doublings = 0
    while pe_hi.power < target:
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise CalibrationError(
                f"could not bracket target power {target} after "
                f"{max_doublings} doublings (last effect {hi:.6g})",
                trace=trace,
            )
        pe_hi = evaluate(hi)
    best = (hi, pe_hi)
    while True:
        mid = 0.5 * (lo + hi)
        pe = evaluate(mid)
        best = min((best, (mid, pe)), key=lambda t: abs(t[1].power - target))
        if abs(pe.power - target) <= tol or (hi - lo) < 1e-3 * mid:
            _audit_monotone(trace)
            return CalibrationResult(effect=best[0], power=best[1], trace=trace)
        if pe.power < target:
            lo = mid
        else:
            hi = mid


def calibrate_effect(
    template: ScenarioSpec,
    change_kind: str,
    target_power: float = 0.8,
    alpha: float = 0.05,
    reps: int = 1000,
    B: int = 1000,
    seed: int = 0,
    db: int = 7,
    tol: float = 0.02,
    initial: float = 1.0,
    n_jobs: int = 1,
    null_distribution: Optional[NullDistribution] = None,
) -> CalibrationResult:
    """Effect size at which the full score test hits the target power.

    The threshold comes from an empirical null at the template's shape; the
    search is a bisection with common random numbers across effect values.
    """
    if not 0.0 < target_power < 1.0:
        raise CalibrationError(f"target power {target_power} must be in (0, 1)")
    spec0 = dataclasses.replace(template, change_kind=change_kind, effect=0.0)
    scorer = make_scorer(
        DetectorSpec(method="vcstar", phi=spec0.phi), min(db, spec0.T - 4)
    )
    if spec0.k < spec0.T - scorer.db:
        raise CalibrationError(
            f"change day k={spec0.k} falls outside the db={scorer.db} window"
        )
    nd = null_distribution
    if nd is None:
        nd = build_null(
            scorer, (spec0.T, spec0.p), scenario_null_sampler(spec0), B, seed,
            n_jobs=n_jobs,
        )
    thresh = threshold(nd, alpha)

    def power_fn(effect):
        spec_e = with_effect(spec0, effect)

        def alt(g):
            fm, _ = generate_alternative(spec_e, g)
            return fm.values

        return estimate_power(scorer, thresh, alt, reps, seed, n_jobs=n_jobs)

    return _bisect_power(power_fn, target_power, tol, initial)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = cov for a merely PSD covariance."""
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    return eigvecs * np.sqrt(eigvals)[None, :]


def fitted_null_sampler(mean: np.ndarray, cov: np.ndarray, T: int):
    """Sampler of T-day streams from a fitted (possibly singular) Gaussian."""
    factor = _psd_factor(cov)
    p = mean.shape[0]

    def sample(g: np.random.Generator) -> np.ndarray:
        return mean[:, None] + factor @ g.standard_normal((p, T))

    sample.tag = f"fitted-gauss:p={p}:T={T}"
    return sample


def select_phi(
    Y_prechange,
    shape: tuple[int, int],
    seed: int = 0,
    alpha: float = 0.05,
    B: int = 200,
    reps: int = 200,
    target_power: float = 0.8,
    k_star: int = 4,
    db: int = 7,
    grid=tuple(np.round(np.arange(0.0, 1.0, 0.1), 1)),
    max_iter: int = 5,
    n_jobs: int = 1,
) -> PhiSelection:
    """Iterative grid selection of the covariance regularization weight.

    Starting from phi = 0.9: build a null at the current phi from the fitted
    pre-change Gaussian, find the mean-shift variance that reaches the target
    power at that phi, evaluate that shift's power over the phi grid (each
    grid point against its own null), and move to the argmax (ties toward
    more regularization).  Stops after ``max_iter`` rounds or when the same
    phi is selected at two consecutive iterations.  With more features than
    days the result is 1 immediately.
    """
    t, p = shape
    if p > t:
        return PhiSelection(phi=1.0, selections=[])
    mc = pooled_estimates(Y_prechange)
    null_sampler = fitted_null_sampler(mc.mean, mc.cov, t)
    db_eff = min(db, t - 4)
    k = t - k_star + 1
    if db_eff < 1 or k < t - db_eff or k < 4:
        raise DayChangeError(
            f"shape T={t} too small for k_star={k_star} with the pre-change floor"
        )

    def alt_sampler(tau):
        def sample(g: np.random.Generator) -> np.ndarray:
            values = null_sampler(g)
            beta = np.sqrt(tau) * g.standard_normal(p)
            values[:, k - 1 :] += beta[:, None]
            return values

        sample.tag = f"{null_sampler.tag}:shift-tau={tau:.17g}:k={k}"
        return sample

    def scorer_at(phi):
        return make_scorer(DetectorSpec(method="vcstar", phi=phi), db_eff)

    current = 0.9
    selections: list[float] = []
    for iteration in range(max_iter):
        scorer = scorer_at(current)
        nd = build_null(scorer, shape, null_sampler, B, seed_sequence(seed, iteration, 0), n_jobs=n_jobs)
        thresh = threshold(nd, alpha)

        def power_fn(tau):
            return estimate_power(
                scorer, thresh, alt_sampler(tau),
                reps, seed_sequence(seed, iteration, 1), n_jobs=n_jobs,
            )

        cal = _bisect_power(power_fn, target_power, tol=0.02, initial=1.0)
        tau = cal.effect
        best_phi, best_power = None, -1.0
        for phi_g in grid:
            try:
                scorer_g = scorer_at(phi_g)
                nd_g = build_null(
                    scorer_g, shape, null_sampler, B,
                    seed_sequence(seed, iteration, 2), n_jobs=n_jobs,
                )
                pe = estimate_power(
                    scorer_g, threshold(nd_g, alpha), alt_sampler(tau),
                    reps, seed_sequence(seed, iteration, 3), n_jobs=n_jobs,
                )
            except DayChangeError as exc:
                warnings.warn(
                    f"phi={phi_g} excluded from the grid: {exc}", stacklevel=2
                )
                continue
            # ties go to the larger phi: >= with ascending grid
            if pe.power >= best_power:
                best_phi, best_power = float(phi_g), pe.power
        if best_phi is None:
            raise DayChangeError("every phi grid point failed its null build")
        selections.append(best_phi)
        if len(selections) >= 2 and selections[-1] == selections[-2]:
            break
        current = best_phi
    return PhiSelection(phi=selections[-1], selections=selections)
