import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from slopecp.panel import META_SUFFIX, ColumnSchema, PanelError, TemperaturePanel, ingest_csv, scale_day, scaled_time


def _long_csv(path, frame):
    frame.to_csv(path, index=False)
    return path


def _frame(n_days=30, locs=("a", "b"), start="2000-01-01", seed=0):
    rng = np.random.default_rng(seed)
    dates = pd.date_range(start, periods=n_days, freq="D").strftime("%Y-%m-%d")
    rows = [(loc, d, float(rng.normal(10 + i, 1))) for i, loc in enumerate(locs) for d in dates]
    return pd.DataFrame(rows, columns=["location_id", "date", "value"])


def test_scaled_time_endpoints():
    t = scaled_time(5)
    assert t[0] == -1.0 and t[-1] == 1.0
    np.testing.assert_allclose(t, [-1, -0.5, 0, 0.5, 1])


def test_scaled_time_too_short():
    with pytest.raises(PanelError):
        scaled_time(1)


@given(st.integers(2, 5000), st.integers(1, 5000))
def test_scale_day_matches_grid(n, d):
    d = min(d, n)
    assert scale_day(d, n) == pytest.approx(scaled_time(n)[d - 1], abs=1e-15)


def test_from_array_centers_and_marks_missing():
    vals = np.array([[1.0, 2.0, np.nan, 5.0], [0.0, 0.0, 0.0, 4.0]])
    p = TemperaturePanel.from_array(vals, ["x", "y"])
    np.testing.assert_allclose(p.offsets, [8 / 3, 1.0])
    assert p.n_obs == 7
    assert not p.observed[0, 2]
    assert np.isnan(p.values[0, 2])
    np.testing.assert_allclose(np.nanmean(p.values, axis=1), 0.0, atol=1e-15)


def test_panel_is_read_only():
    p = TemperaturePanel.from_array(np.ones((2, 3)))
    with pytest.raises(ValueError):
        p.values[0, 0] = 3.0


def test_ingest_long_csv(tmp_path):
    f = _long_csv(tmp_path / "d.csv", _frame())
    p = ingest_csv(f)
    assert p.location_ids == ("a", "b")
    assert p.n_days == 30 and p.start_date == "2000-01-01"
    np.testing.assert_allclose(np.nanmean(p.values, axis=1), 0.0, atol=1e-12)


def test_ingest_fills_calendar_gaps(tmp_path):
    fr = _frame(n_days=100)
    fr = fr.drop(index=[5, 6])
    p = ingest_csv(_long_csv(tmp_path / "d.csv", fr), min_completeness=0.9)
    assert p.n_days == 100
    assert p.observed.sum() == 198


def test_completeness_floor_names_location(tmp_path):
    fr = _frame(n_days=100)
    fr = fr[~((fr.location_id == "b") & (fr.index % 10 == 0))]
    with pytest.raises(PanelError, match="b"):
        ingest_csv(_long_csv(tmp_path / "d.csv", fr))


def test_duplicate_rows_rejected(tmp_path):
    fr = _frame(n_days=10)
    fr = pd.concat([fr, fr.iloc[[3]]])
    with pytest.raises(PanelError, match="duplicate"):
        ingest_csv(_long_csv(tmp_path / "d.csv", fr))


def test_missing_column(tmp_path):
    fr = _frame().drop(columns="value")
    with pytest.raises(PanelError, match="value"):
        ingest_csv(_long_csv(tmp_path / "d.csv", fr))


def test_bad_dates(tmp_path):
    fr = _frame(n_days=3)
    fr.loc[0, "date"] = "not a date"
    with pytest.raises(PanelError):
        ingest_csv(_long_csv(tmp_path / "d.csv", fr))


def test_one_file_per_location(tmp_path):
    fr = _frame()
    paths = []
    for loc, g in fr.groupby("location_id"):
        path = tmp_path / f"{loc}.csv"
        g[["date", "value"]].to_csv(path, index=False)
        paths.append(path)
    p = ingest_csv(paths, ColumnSchema(location=None))
    assert set(p.location_ids) == {"a", "b"}


def test_canonical_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(3, 400)) * 7.3 + 1 / 3
    vals[1, ::50] = np.nan
    p = TemperaturePanel.from_array(vals, ["s1", "s2", "s3"], "1956-10-08")
    p.to_csv(tmp_path / "p.csv")
    meta = json.loads((tmp_path / ("p.csv" + META_SUFFIX)).read_text())
    assert meta["n_days"] == 400 and meta["centered"]
    q = ingest_csv(tmp_path / "p.csv")
    assert np.array_equal(p.observed, q.observed)
    assert np.array_equal(p.values[p.observed], q.values[q.observed])
    assert np.array_equal(p.offsets, q.offsets)
    assert q.start_date == "1956-10-08"


def test_round_trip_without_dates(tmp_path):
    p = TemperaturePanel.from_array(np.arange(20.0).reshape(2, 10))
    p.to_csv(tmp_path / "p.csv")
    q = ingest_csv(tmp_path / "p.csv")
    assert np.array_equal(p.values, q.values) and q.start_date is None


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 60), st.integers(0, 10_000))
def test_centering_property(M, N, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(M, N)) * 10 + rng.normal(size=(M, 1)) * 50
    p = TemperaturePanel.from_array(vals)
    np.testing.assert_allclose(p.values + p.offsets[:, None], vals, atol=1e-9)
    np.testing.assert_allclose(p.values.mean(axis=1), 0.0, atol=1e-9)
