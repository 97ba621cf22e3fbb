"""Uniform detector interface over the score test and the baselines.

A scorer maps a p-by-T value matrix to a :class:`CandidateScan`; larger max
statistics mean more evidence for a change, so one empirical-null machinery
serves every method.  The divergence detector needs a reference set of null
statistics to convert raw divergences into per-candidate p-values; its scan
carries the negated minimum p-value so that "large = reject" still holds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import baselines, vctest
from ._rng import rng
from .errors import DayChangeError
from .vctest import CandidateScan

METHOD_NAMES = (
    "vcstar",
    "vc",
    "vcstar-mean",
    "vcstar-var",
    "hotelling",
    "cusum",
    "divergence",
)

_VC_CONFIG = {
    "vcstar": ("full", "prechange"),
    "vc": ("full", "all_days"),
    "vcstar-mean": ("mean_only", "prechange"),
    "vcstar-var": ("variance_only", "prechange"),
}


@dataclass(frozen=True)
class DetectorSpec:
    """Method name plus the knobs that parameterize it."""

    method: str
    phi: float = 1.0
    cusum_a: Optional[float] = None
    cusum_baseline: str = "prewindow"
    cusum_convention: str = "crosier"
    divergence_b: Optional[int] = None
    smoothed: bool = False

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise DayChangeError(
                f"unknown method {self.method!r}; choose from {METHOD_NAMES}"
            )

    def digest_fields(self, db: int) -> dict:
        fields = {"method": self.method, "db": db}
        if self.method in _VC_CONFIG:
            variant, mode = _VC_CONFIG[self.method]
            fields.update(variant=variant, estimator_mode=mode, phi=self.phi)
        elif self.method == "cusum":
            fields.update(
                a=self.cusum_a,
                baseline=self.cusum_baseline,
                convention=self.cusum_convention,
            )
        elif self.method == "divergence":
            fields.update(inner_b=self.divergence_b, smoothed=self.smoothed)
        return fields


@dataclass
class Scorer:
    """Callable detector with the metadata needed for caching.

    ``batch_fn``, when present, maps a (B, p, T) stack of panels to their B
    max statistics in one vectorized pass; it must agree with ``fn`` up to
    floating-point summation order.
    """

    name: str
    db: int
    fn: Callable[[np.ndarray], CandidateScan]
    digest_fields: dict = field(default_factory=dict)
    batch_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, values: np.ndarray) -> CandidateScan:
        return self.fn(values)


def config_digest(fields: dict) -> str:
    """Stable short digest of a detector/null configuration."""
    canon = json.dumps(fields, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def divergence_reference(
    null_sampler, db: int, B: int, seed, stream: int = 0
) -> np.ndarray:
    """B-by-window matrix of null divergence statistics for p-value lookup."""
    stats = None
    for b in range(B):
        values = null_sampler(rng(seed, stream, b))
        _, row = baselines.divergence_window_stats(values, db)
        if stats is None:
            stats = np.empty((B, row.shape[0]))
        stats[b] = row
    return stats


def make_scorer(
    spec: DetectorSpec, db: int, reference: Optional[np.ndarray] = None
) -> Scorer:
    """Build the scoring closure for one detector configuration."""
    batch_fn = None
    if spec.method in _VC_CONFIG:
        variant, mode = _VC_CONFIG[spec.method]

        def fn(values, _v=variant, _m=mode, _phi=spec.phi):
            return vctest.scan(values, db, _v, _m, _phi)

        if spec.phi == 1.0:

            def batch_fn(cube, _v=variant, _m=mode):
                return vctest.scan_batch(cube, db, _v, _m)

    elif spec.method == "hotelling":

        def fn(values):
            return baselines.hotelling_max(values, db)

    elif spec.method == "cusum":

        def fn(values, _a=spec.cusum_a, _b=spec.cusum_baseline,
               _c=spec.cusum_convention):
            return baselines.cusum_max(values, db, a=_a, baseline=_b, convention=_c)

    else:  # divergence
        if reference is None:
            raise DayChangeError(
                "the divergence detector needs a reference null "
                "(see divergence_reference)"
            )
        ref = np.asarray(reference, dtype=float)

        def fn(values, _ref=ref, _sm=spec.smoothed):
            days, observed = baselines.divergence_window_stats(values, db)
            if _ref.shape[1] != len(days):
                raise DayChangeError(
                    f"reference covers {_ref.shape[1]} candidates, scan has "
                    f"{len(days)}"
                )
            pvals = baselines.divergence_pvalues(observed, _ref, _sm)
            return vctest._scan_from_stats(days, -pvals, "divergence")

    return Scorer(
        name=spec.method, db=db, fn=fn, digest_fields=spec.digest_fields(db),
        batch_fn=batch_fn,
    )
