"""Ingestion and preprocessing of daily feature files.

Raw daily panels go through: calendar completion at ingest, segmentation on
missing-day runs, per-feature linear imputation, a rank-based inverse normal
transform, and ridge-penalized day-of-week residualization.  Detection then
runs on the residual panels.
"""

from __future__ import annotations

import csv
import datetime
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from ..errors import DayChangeError, IngestError, InsufficientDataError
from ..model import FeatureMatrix


@dataclass
class SegmentSpec:
    """Bounds and gap rules that a usable data segment must satisfy."""

    start_day: Optional[int] = None
    end_day: Optional[int] = None
    max_consecutive_missing: int = 3
    min_length: int = 14


@dataclass
class PreprocessConfig:
    """Knobs of the residualization pipeline."""

    int_offset: float = 0.375  # Blom rank-normal offset
    ridge_lambda: float = 10.0
    causal: bool = False

    def __post_init__(self):
        if not 0.0 <= self.int_offset <= 0.5:
            raise DayChangeError("int_offset must lie in [0, 0.5]")
        if self.ridge_lambda < 0:
            raise DayChangeError("ridge_lambda must be non-negative")


def ingest(path) -> FeatureMatrix:
    """Read a delimited daily feature file into a panel.

    Header row: a date column followed by feature names.  One row per
    calendar day, empty (or non-finite) cells are missing, and gaps between
    row dates are materialized as fully missing days.
    """
    with open(path, newline="") as fh:
        # sniff the delimiter from the header line; fall back to comma
        head = fh.readline()
        delim = "\t" if "\t" in head else ("," if "," in head else None)
        if delim is None:
            raise IngestError(f"{path}: cannot find a delimiter in the header")
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise IngestError(f"{path}: header must name a date column and features")
        feature_names = [h.strip() for h in header[1:]]
        dates: list[datetime.date] = []
        rows: list[list[float]] = []
        masks: list[list[bool]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}",
                    row=lineno,
                )
            try:
                date = datetime.date.fromisoformat(row[0].strip())
            except ValueError:
                raise IngestError(
                    f"{path}:{lineno}: unparseable date {row[0]!r}", row=lineno
                ) from None
            if dates:
                if date == dates[-1]:
                    raise IngestError(
                        f"{path}:{lineno}: duplicate date {date}", row=lineno
                    )
                if date < dates[-1]:
                    raise IngestError(
                        f"{path}:{lineno}: dates must increase ({date} after "
                        f"{dates[-1]})",
                        row=lineno,
                    )
            vals, mask = [], []
            for j, cell in enumerate(row[1:], start=1):
                cell = cell.strip()
                if not cell:
                    vals.append(np.nan)
                    mask.append(False)
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise IngestError(
                        f"{path}:{lineno}: column {feature_names[j - 1]!r} has "
                        f"unparseable value {cell!r}",
                        row=lineno,
                        column=feature_names[j - 1],
                    ) from None
                if np.isfinite(x):
                    vals.append(x)
                    mask.append(True)
                else:
                    vals.append(np.nan)
                    mask.append(False)
            dates.append(date)
            rows.append(vals)
            masks.append(mask)
    if not dates:
        raise IngestError(f"{path}: no data rows")
    p = len(feature_names)
    t = (dates[-1] - dates[0]).days + 1
    values = np.full((p, t), np.nan)
    mask = np.zeros((p, t), dtype=bool)
    for date, vals, m in zip(dates, rows, masks):
        col = (date - dates[0]).days
        values[:, col] = vals
        mask[:, col] = m
    values[~mask] = 0.0  # placeholder under the mask; never read
    return FeatureMatrix(
        values=values,
        day_index=np.arange(1, t + 1),
        feature_names=feature_names,
        missing_mask=mask,
        start_date=dates[0],
    )


def segment(Y: FeatureMatrix, spec: SegmentSpec | None = None) -> list[FeatureMatrix]:
    """Maximal usable sub-ranges of a stream.

    A day counts as missing when every feature is missing.  Runs of more
    than ``max_consecutive_missing`` such days split the stream; leading and
    trailing missing days are trimmed; only pieces spanning at least
    ``min_length`` days survive.
    """
    spec = spec or SegmentSpec()
    t = Y.n_days
    lo = 0 if spec.start_day is None else max(0, spec.start_day - int(Y.day_index[0]))
    hi = t if spec.end_day is None else min(t, spec.end_day - int(Y.day_index[0]) + 1)
    day_missing = ~Y.missing_mask.any(axis=0)
    segments = []
    pos = lo
    while pos < hi:
        if day_missing[pos]:
            pos += 1
            continue
        start = pos
        last_observed = pos
        run = 0
        while pos < hi:
            if day_missing[pos]:
                run += 1
                if run > spec.max_consecutive_missing:
                    break
            else:
                run = 0
                last_observed = pos
            pos += 1
        piece = Y.slice_days(start, last_observed + 1)
        if piece.n_days >= spec.min_length:
            segments.append(piece)
        pos = last_observed + 1 + run if run else pos
    return segments


def impute(Y: FeatureMatrix):
    """Per-feature linear interpolation of missing cells.

    Leading/trailing missing stretches copy the nearest observed value.
    Returns the fully observed panel and the boolean mask of imputed cells.
    """
    values = Y.values.copy()
    imputed = ~Y.missing_mask
    t = Y.n_days
    positions = np.arange(t)
    for i in range(Y.n_features):
        mask = Y.missing_mask[i]
        if mask.all():
            continue
        if not mask.any():
            raise InsufficientDataError(
                f"feature {Y.feature_names[i]!r} has no observed days"
            )
        values[i] = np.interp(positions, positions[mask], values[i, mask])
    out = FeatureMatrix(
        values=values,
        day_index=Y.day_index.copy(),
        feature_names=list(Y.feature_names),
        missing_mask=np.ones_like(Y.missing_mask),
        start_date=Y.start_date,
    )
    return out, imputed


def inverse_normal_transform(x, offset: float = 0.375) -> np.ndarray:
    """Rank-based inverse standard normal transform with averaged ties.

    Rank r maps to the standard normal quantile at
    (r - offset) / (n + 1 - 2*offset).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise InsufficientDataError("inverse normal transform needs n >= 2")
    ranks = rankdata(x, method="average")
    if np.all(x == x[0]):
        warnings.warn(
            "all values equal: inverse normal transform maps everything to 0",
            stacklevel=2,
        )
    return ndtri((ranks - offset) / (n + 1.0 - 2.0 * offset))


def _helmert_basis() -> np.ndarray:
    """Orthonormal 7-by-6 basis of the sum-to-zero weekday-effect subspace."""
    basis = np.zeros((7, 6))
    for j in range(1, 7):
        col = np.zeros(7)
        col[:j] = 1.0 / np.sqrt(j * (j + 1))
        col[j] = -j / np.sqrt(j * (j + 1))
        basis[:, j - 1] = col
    return basis


_HELMERT = _helmert_basis()


def dow_residualize(x, day_of_week, lam: float) -> np.ndarray:
    """Residuals of x after an L2-penalized day-of-week fit.

    The model is an unpenalized intercept plus seven sum-to-zero weekday
    effects whose squared norm is penalized by ``lam``.  ``lam=0`` with every
    weekday observed reproduces weekday-mean subtraction; ``lam=inf`` shrinks
    the effects away entirely, leaving x minus its mean.
    """
    x = np.asarray(x, dtype=float)
    dow = np.asarray(day_of_week, dtype=int)
    if x.shape != dow.shape:
        raise DayChangeError("x and day_of_week must have equal length")
    if np.any((dow < 0) | (dow > 6)):
        raise DayChangeError("day_of_week entries must lie in 0..6")
    if lam < 0:
        raise DayChangeError("lambda must be non-negative")
    if np.isinf(lam):
        return x - x.mean()
    n = x.size
    z = np.zeros((n, 7))
    z[np.arange(n), dow] = 1.0
    design = np.hstack([np.ones((n, 1)), z @ _HELMERT])
    # augmented least squares: rows sqrt(lam) * [0 I] implement the penalty
    # on the (orthonormal-basis) effect coordinates, leaving the intercept free
    penalty = np.sqrt(lam) * np.hstack([np.zeros((6, 1)), np.eye(6)])
    aug_design = np.vstack([design, penalty])
    aug_target = np.concatenate([x, np.zeros(6)])
    theta, *_ = np.linalg.lstsq(aug_design, aug_target, rcond=None)
    return x - design @ theta


def weekday_labels(Y: FeatureMatrix) -> np.ndarray:
    """Weekday (0=Monday) per day, from dates when present else day labels."""
    dates = Y.dates()
    if dates is not None:
        return np.array([d.weekday() for d in dates])
    return (Y.day_index - 1) % 7


@dataclass
class PreprocessedSegment:
    """Residual panel for one segment plus its imputation bookkeeping."""

    matrix: FeatureMatrix
    imputed: np.ndarray
    n_days_incl_imputed: int


def preprocess_segment(
    seg: FeatureMatrix, config: PreprocessConfig | None = None
) -> PreprocessedSegment:
    """Impute, rank-normalize, and weekday-residualize one segment.

    Statistics are computed over all segment days (retrospective mode); with
    ``config.causal=True`` the day-t residual only uses days 1..t.
    """
    config = config or PreprocessConfig()
    filled, imputed = impute(seg)
    dow = weekday_labels(filled)
    values = np.empty_like(filled.values)
    if not config.causal:
        for i in range(filled.n_features):
            transformed = inverse_normal_transform(
                filled.values[i], config.int_offset
            )
            values[i] = dow_residualize(transformed, dow, config.ridge_lambda)
    else:
        # strict-causal: day t's residual uses only days 1..t; the first day
        # has no rank information and keeps a zero residual
        values[:] = 0.0
        for t in range(1, filled.n_days):
            for i in range(filled.n_features):
                prefix = inverse_normal_transform(
                    filled.values[i, : t + 1], config.int_offset
                )
                res = dow_residualize(prefix, dow[: t + 1], config.ridge_lambda)
                values[i, t] = res[-1]
    out = FeatureMatrix(
        values=values,
        day_index=filled.day_index.copy(),
        feature_names=list(filled.feature_names),
        missing_mask=np.ones_like(filled.missing_mask),
        start_date=filled.start_date,
    )
    return PreprocessedSegment(
        matrix=out, imputed=imputed, n_days_incl_imputed=out.n_days
    )


def _mean_abs_autocorr(x: np.ndarray, max_lag: int = 7) -> float:
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        return 0.0
    acfs = []
    for lag in range(1, max_lag + 1):
        if lag >= x.size:
            break
        acfs.append(abs(float(x[lag:] @ x[:-lag]) / denom))
    return float(np.mean(acfs)) if acfs else 0.0


def tune_ridge_lambda(
    segments: list[FeatureMatrix],
    grid,
    config: PreprocessConfig | None = None,
):
    """Mean |lag 1..7 autocorrelation| of residuals per candidate lambda.

    Returns ``(best_lambda, rows)`` where rows are (lambda, score) pairs and
    the best lambda minimizes the score.
    """
    config = config or PreprocessConfig()
    rows = []
    for lam in grid:
        cfg = PreprocessConfig(
            int_offset=config.int_offset, ridge_lambda=float(lam),
            causal=config.causal,
        )
        scores = []
        for seg in segments:
            pre = preprocess_segment(seg, cfg)
            for i in range(pre.matrix.n_features):
                scores.append(_mean_abs_autocorr(pre.matrix.values[i]))
        rows.append((float(lam), float(np.mean(scores))))
    best = min(rows, key=lambda r: r[1])[0]
    return best, rows
