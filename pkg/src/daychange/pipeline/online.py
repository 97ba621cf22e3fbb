"""Sequential detection loop over one residual segment.

Testing starts once nine days are available (a seven-day run-in plus at
least two potential post-change days, the candidate day included).  The
search window is the last seven days when fifteen or more days are in hand,
otherwise it shrinks to preserve the run-in.  After a detection the
pre-change days are dropped and monitoring restarts at the detected day.

Each test draws its permutation null from a sub-seed keyed by the current
window's first day label and length, so re-running the loop on the suffix
that starts at a detected day reproduces the remaining detections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._rng import REF_STREAM, seed_sequence
from ..detectors import DetectorSpec, divergence_reference, make_scorer
from ..errors import DayChangeError
from ..inference import MIN_NULL_SIZE, build_null, p_value, threshold
from ..model import FeatureMatrix

RUN_IN_DAYS = 7
MIN_TEST_DAYS = 9  # run-in + candidate day + one more post-change day
FULL_WINDOW = 7


@dataclass
class DetectionEntry:
    """One detected change point."""

    day: int
    method: str
    statistic: float
    p_value: float
    db: int
    t_at_test: int


@dataclass
class DetectionLog:
    """Ordered detections for one stream."""

    stream_id: str
    entries: list[DetectionEntry] = field(default_factory=list)

    def days(self) -> list[int]:
        return [e.day for e in self.entries]


def window_size(t: int) -> int:
    """Search window at current length t: 7 once t >= 15, else t - 8."""
    if t < MIN_TEST_DAYS:
        raise DayChangeError(f"testing starts at {MIN_TEST_DAYS} days, got {t}")
    return FULL_WINDOW if t >= 15 else t - 8


def _permutation_sampler(values: np.ndarray):
    t = values.shape[1]

    def sample(g: np.random.Generator) -> np.ndarray:
        return values[:, g.permutation(t)]

    sample.tag = f"perm:T={t}"
    return sample


def online_detect(
    Y_segment: FeatureMatrix,
    detector: DetectorSpec,
    alpha: float = 0.05,
    B: int = 200,
    seed: int = 0,
    stream_id: str = "stream",
    cache=None,
) -> DetectionLog:
    """Run the sequential loop over one preprocessed segment."""
    if B < MIN_NULL_SIZE:
        raise DayChangeError(f"B={B} below the null-size floor {MIN_NULL_SIZE}")
    values = Y_segment.values
    labels = Y_segment.day_index
    p, n = values.shape
    log = DetectionLog(stream_id=stream_id)
    start = 0  # position of day 1 of the current (post-reset) stream
    t_end = start + MIN_TEST_DAYS - 1
    while t_end < n:
        length = t_end - start + 1
        db = window_size(length)
        window = values[:, start : t_end + 1]
        test_seed = seed_sequence(seed, int(labels[start]), length)
        sampler = _permutation_sampler(window)
        reference = None
        if detector.method == "divergence":
            ref_b = detector.divergence_b or B
            reference = divergence_reference(
                sampler, db, ref_b, test_seed, stream=REF_STREAM
            )
        scorer = make_scorer(detector, db, reference=reference)
        nd = None
        if cache is not None:
            digest = _null_digest(scorer, window, B, test_seed, sampler)
            nd = cache.get(digest)
        if nd is None:
            nd = build_null(scorer, (length, p), sampler, B, test_seed)
            if cache is not None:
                cache.put(nd)
        observed = scorer(window)
        if observed.max_stat > threshold(nd, alpha):
            rel_day = observed.argmax_day  # 1-based within the current window
            abs_pos = start + rel_day - 1
            log.entries.append(
                DetectionEntry(
                    day=int(labels[abs_pos]),
                    method=detector.method,
                    statistic=observed.max_stat,
                    p_value=p_value(nd, observed.max_stat),
                    db=db,
                    t_at_test=length,
                )
            )
            start = abs_pos  # detected day becomes day 1; its suffix is kept
            t_end = max(t_end, start + MIN_TEST_DAYS - 1)
        else:
            t_end += 1
    return log


def _null_digest(scorer, window, B, test_seed, sampler) -> str:
    import hashlib

    from ..detectors import config_digest

    data_tag = hashlib.sha256(np.ascontiguousarray(window).tobytes()).hexdigest()[:16]
    return config_digest(
        dict(
            scorer.digest_fields,
            T=window.shape[1],
            p=window.shape[0],
            B=B,
            seed=repr((test_seed.entropy, test_seed.spawn_key)),
            sampler=f"{sampler.tag}:{data_tag}",
        )
    )
