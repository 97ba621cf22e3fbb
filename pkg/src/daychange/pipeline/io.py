"""Readers and writers for the pipeline's delimited artifacts.

All floating-point output carries 17 significant digits so reruns can be
diffed byte for byte.
"""

from __future__ import annotations

import csv
import datetime
from typing import Iterable, Optional

from ..errors import IngestError
from ..model import FeatureMatrix
from .online import DetectionEntry, DetectionLog

LOG_HEADER = [
    "stream_id",
    "day_index",
    "calendar_date",
    "method",
    "statistic",
    "p_value",
    "db",
    "T_at_test",
]


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def write_feature_csv(fm: FeatureMatrix, path: str) -> None:
    """Write a panel back to the ingestable date + features format."""
    dates = fm.dates()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(fm.feature_names))
        for t in range(fm.n_days):
            date = (
                dates[t].isoformat()
                if dates is not None
                else (
                    datetime.date(2000, 1, 1)
                    + datetime.timedelta(days=int(fm.day_index[t]) - 1)
                ).isoformat()
            )
            row = [date]
            for i in range(fm.n_features):
                row.append(fmt17(fm.values[i, t]) if fm.missing_mask[i, t] else "")
            writer.writerow(row)


def write_detection_log(
    logs: Iterable[DetectionLog],
    path: str,
    start_dates: Optional[dict] = None,
) -> None:
    """Line-delimited detection records for one or more streams."""
    start_dates = start_dates or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for log in logs:
            base = start_dates.get(log.stream_id)
            for e in log.entries:
                date = ""
                if base is not None:
                    date = (base + datetime.timedelta(days=e.day - 1)).isoformat()
                writer.writerow(
                    [
                        log.stream_id,
                        e.day,
                        date,
                        e.method,
                        fmt17(e.statistic),
                        fmt17(e.p_value),
                        e.db,
                        e.t_at_test,
                    ]
                )


def read_detection_log(path: str) -> list[DetectionLog]:
    """Parse a detection-log file back into per-stream logs."""
    logs: dict[str, DetectionLog] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LOG_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise IngestError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            sid = row["stream_id"]
            log = logs.setdefault(sid, DetectionLog(stream_id=sid))
            log.entries.append(
                DetectionEntry(
                    day=int(row["day_index"]),
                    method=row["method"],
                    statistic=float(row["statistic"]),
                    p_value=float(row["p_value"]),
                    db=int(row["db"]),
                    t_at_test=int(row["T_at_test"]),
                )
            )
    return list(logs.values())


def write_table(rows: list[dict], path: str, columns: list[str]) -> None:
    """Tidy CSV with deterministic column order and 17-digit floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                v = row.get(col, "")
                if isinstance(v, float):
                    out.append(fmt17(v))
                else:
                    out.append(v)
            writer.writerow(out)
