"""End-to-end preprocessing against checked-in golden residuals."""

import csv
from pathlib import Path

import numpy as np
import pytest

from daychange.pipeline.preprocess import (
    PreprocessConfig,
    dow_residualize,
    ingest,
    inverse_normal_transform,
    preprocess_segment,
    segment,
)

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "fixture_daily_features.csv"
GOLDEN = DATA / "golden_residuals.csv"


def read_matrix(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row[1:]] for row in reader]
    return header[1:], np.array(rows).T


@pytest.fixture(scope="module")
def pipeline_output():
    stream = ingest(str(FIXTURE))
    segments = segment(stream)
    assert len(segments) == 1
    return preprocess_segment(segments[0], PreprocessConfig(ridge_lambda=10.0))


class TestGoldenResiduals:
    def test_segment_covers_all_forty_days(self, pipeline_output):
        assert pipeline_output.matrix.n_days == 40
        assert pipeline_output.n_days_incl_imputed == 40
        # two fully missing days plus five scattered cells were imputed
        assert pipeline_output.imputed.sum() == 2 * 4 + 5

    def test_residuals_match_golden_to_1e12(self, pipeline_output):
        names, golden = read_matrix(GOLDEN)
        assert names == pipeline_output.matrix.feature_names
        assert golden.shape == pipeline_output.matrix.values.shape
        assert np.max(np.abs(golden - pipeline_output.matrix.values)) < 1e-12

    def test_int_median_identity_n3(self):
        out = inverse_normal_transform(np.array([5.0, 1.0, 9.0]))
        assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_ridge_centering_identity_at_infinite_lambda(self, pipeline_output):
        # on the fixture's own imputed + transformed series
        stream = ingest(str(FIXTURE))
        seg = segment(stream)[0]
        from daychange.pipeline.preprocess import impute, weekday_labels

        filled, _ = impute(seg)
        x = inverse_normal_transform(filled.values[0])
        res = dow_residualize(x, weekday_labels(filled), np.inf)
        assert np.allclose(res, x - x.mean(), atol=1e-15)

    def test_residuals_have_near_zero_weekday_structure(self, pipeline_output):
        # ridge at lambda=10 removes most of the planted weekly signal
        from daychange.pipeline.preprocess import weekday_labels

        values = pipeline_output.matrix.values
        dow = weekday_labels(pipeline_output.matrix)
        for i in range(values.shape[0]):
            weekday_means = [values[i, dow == d].mean() for d in range(7)]
            assert np.max(np.abs(weekday_means)) < 0.6
