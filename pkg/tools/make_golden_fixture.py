"""Generate the checked-in preprocessing fixture and its golden residuals.

Run from the repository root:

    python tools/make_golden_fixture.py

The fixture is a 4-feature, 40-day stream starting on a Monday with a
two-day fully missing gap, a leading missing cell, and scattered single
missing cells.  The golden file freezes the residuals of the default
pipeline (impute -> inverse normal transform -> day-of-week ridge with
lambda = 10).
"""

import csv
import datetime
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from daychange.pipeline.io import fmt17, write_feature_csv  # noqa: E402
from daychange.pipeline.preprocess import (  # noqa: E402
    PreprocessConfig,
    ingest,
    preprocess_segment,
    segment,
)

DATA_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data"
FIXTURE = DATA_DIR / "fixture_daily_features.csv"
GOLDEN = DATA_DIR / "golden_residuals.csv"

N_DAYS = 40
FEATURES = ["distance", "home_time", "outgoing_calls", "screen_time"]
START = datetime.date(2024, 1, 1)  # a Monday


def build_fixture() -> None:
    rng = np.random.default_rng(20240101)
    base = rng.standard_normal((4, N_DAYS))
    # weekly structure plus feature-specific scales and levels
    dow = np.array([(START + datetime.timedelta(days=t)).weekday()
                    for t in range(N_DAYS)])
    weekly = np.array([0.8, -0.2, 0.0, 0.1, -0.1, -0.6, 0.5])
    values = np.empty_like(base)
    values[0] = 12.0 + 3.0 * base[0] + 2.0 * weekly[dow]
    values[1] = 600.0 + 80.0 * base[1] - 30.0 * weekly[dow]
    values[2] = 5.0 + 2.0 * base[2]
    values[3] = 210.0 + 40.0 * base[3] + 15.0 * weekly[dow]
    mask = np.ones((4, N_DAYS), dtype=bool)
    mask[:, 16:18] = False          # two fully missing days (within the cap)
    mask[2, 0] = False              # leading missing cell for one feature
    for i, t in ((0, 5), (1, 23), (3, 30), (2, 31)):
        mask[i, t] = False          # scattered single missing cells
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    with open(FIXTURE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + FEATURES)
        for t in range(N_DAYS):
            row = [(START + datetime.timedelta(days=t)).isoformat()]
            for i in range(4):
                row.append(fmt17(values[i, t]) if mask[i, t] else "")
            writer.writerow(row)


def build_golden() -> None:
    stream = ingest(str(FIXTURE))
    segments = segment(stream)
    assert len(segments) == 1 and segments[0].n_days == N_DAYS
    pre = preprocess_segment(segments[0], PreprocessConfig(ridge_lambda=10.0))
    write_feature_csv(pre.matrix, str(GOLDEN))


if __name__ == "__main__":
    build_fixture()
    build_golden()
    print(f"wrote {FIXTURE}")
    print(f"wrote {GOLDEN}")
