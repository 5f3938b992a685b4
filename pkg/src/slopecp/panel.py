"""Daily multi-location panels: ingestion, centering, alignment and export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.utils.validation import check_array

META_SUFFIX = ".meta.json"


class PanelError(ValueError):
    """Raised when a panel cannot be built from the given input."""


@dataclass(frozen=True)
class ColumnSchema:
    """Column names used when reading a daily CSV.

    ``location`` may be ``None`` for one-location-per-file input, in which
    case the location id is taken from the file stem.
    """

    date: str = "date"
    value: str = "value"
    location: str | None = "location_id"


def scaled_time(n_days):
    """Affine map of day index ``t = 1..N`` onto ``[-1, 1]``.

    Accepts either a day count or a :class:`TemperaturePanel`.
    """
    if isinstance(n_days, TemperaturePanel):
        n_days = n_days.n_days
    n_days = int(n_days)
    if n_days < 2:
        raise PanelError(f"scaled time needs at least 2 days, got {n_days}")
    t = np.arange(1, n_days + 1, dtype=float)
    return 2.0 * (t - 1.0) / (n_days - 1.0) - 1.0


def scale_day(day, n_days):
    """Scale (possibly fractional) day index ``day`` with the ``scaled_time`` map."""
    return 2.0 * (np.asarray(day, dtype=float) - 1.0) / (n_days - 1.0) - 1.0


@dataclass(frozen=True, eq=False)
class TemperaturePanel:
    """An ``M x N`` grid of zero-centered daily values.

    Unobserved cells hold ``nan`` in ``values`` and ``False`` in ``observed``.
    ``offsets`` are the per-location means removed during centering.
    """

    values: np.ndarray
    observed: np.ndarray
    location_ids: tuple[str, ...]
    start_date: str | None = None
    offsets: np.ndarray | None = None
    t_star: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 2 or values.shape != observed.shape:
            raise PanelError("values and observed must be matching 2-D arrays")
        if len(self.location_ids) != values.shape[0]:
            raise PanelError("one location id per row is required")
        if not np.all(np.isfinite(values[observed])):
            raise PanelError("observed cells must be finite")
        values[~observed] = np.nan
        values.flags.writeable = False
        observed.flags.writeable = False
        offsets = np.zeros(values.shape[0]) if self.offsets is None else np.asarray(self.offsets, float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "location_ids", tuple(str(s) for s in self.location_ids))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "t_star", scaled_time(values.shape[1]))

    @classmethod
    def from_array(cls, values, location_ids=None, start_date=None, center=True):
        """Build a panel from an ``M x N`` array with ``nan`` for missing days."""
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        observed = np.isfinite(values)
        offsets = np.zeros(values.shape[0])
        if center:
            values, offsets = _center(values, observed)
        if location_ids is None:
            location_ids = [f"loc{i}" for i in range(values.shape[0])]
        return cls(values, observed, tuple(location_ids), start_date, offsets)

    @property
    def n_locations(self):
        return self.values.shape[0]

    @property
    def n_days(self):
        return self.values.shape[1]

    @property
    def n_obs(self):
        return int(self.observed.sum())

    @property
    def day_index(self):
        return np.arange(1, self.n_days + 1)

    @property
    def completeness(self):
        return self.observed.mean(axis=1)

    def filled(self, fill=0.0):
        """Values with unobserved cells replaced by ``fill``."""
        return np.where(self.observed, self.values, fill)

    def dates(self):
        if self.start_date is None:
            return None
        return pd.date_range(self.start_date, periods=self.n_days, freq="D")

    def to_csv(self, path):
        """Write the canonical long CSV and its JSON sidecar.

        Values are written with full round-trip precision, so
        ``ingest_csv`` on the result reproduces this panel exactly.
        """
        path = Path(path)
        rows = []
        dates = self.dates()
        for i, loc in enumerate(self.location_ids):
            for t in np.flatnonzero(self.observed[i]):
                day = dates[t].strftime("%Y-%m-%d") if dates is not None else str(t + 1)
                rows.append(f"{loc},{day},{float(self.values[i, t])!r}")
        path.write_text("location_id,date,value\n" + "\n".join(rows) + "\n", encoding="utf-8")
        meta = {
            "n_days": self.n_days,
            "n_locations": self.n_locations,
            "location_ids": list(self.location_ids),
            "start_date": self.start_date,
            "centered": True,
            "offsets": [float(o) for o in self.offsets],
        }
        Path(str(path) + META_SUFFIX).write_text(json.dumps(meta, indent=2), encoding="utf-8")
        return path


def _center(values, observed):
    values = values.copy()
    offsets = np.zeros(values.shape[0])
    for i in range(values.shape[0]):
        obs = observed[i]
        if obs.any():
            offsets[i] = values[i, obs].mean()
            values[i, obs] -= offsets[i]
    return values, offsets


def _read_one(path, schema):
    try:
        frame = pd.read_csv(path, dtype={schema.value: float}, keep_default_na=True, float_precision="round_trip")
    except (ValueError, KeyError) as exc:
        raise PanelError(f"{path}: {exc}") from exc
    missing = [c for c in (schema.date, schema.value) if c not in frame.columns]
    if schema.location is not None and schema.location not in frame.columns:
        missing.append(schema.location)
    if missing:
        raise PanelError(f"{path}: missing columns {missing}")
    if schema.location is None:
        frame = frame.assign(**{"__loc": Path(path).stem})
        loc_col = "__loc"
    else:
        loc_col = schema.location
    frame = frame.rename(columns={schema.date: "date", schema.value: "value", loc_col: "location"})
    return frame[["location", "date", "value"]]


def ingest_csv(path, schema=None, min_completeness=0.95):
    """Read one or more daily CSV files into a :class:`TemperaturePanel`.

    Parameters
    ----------
    path : path-like or list of path-like
        A long-format file with a location column, or several files
        holding one location each (``schema.location=None``).
    schema : ColumnSchema, optional
    min_completeness : float
        Locations whose fraction of observed days falls below this are
        rejected.

    Notes
    -----
    The day axis covers every calendar day between the earliest and latest
    date found. A canonical file written by :meth:`TemperaturePanel.to_csv`
    is recognised through its sidecar and read back without re-centering
    (the day column may then hold integer day indices).
    """
    schema = schema or ColumnSchema()
    paths = [path] if isinstance(path, (str, Path)) else list(path)
    meta = None
    if len(paths) == 1:
        sidecar = Path(str(paths[0]) + META_SUFFIX)
        if sidecar.exists():
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            schema = ColumnSchema()
    frame = pd.concat([_read_one(p, schema) for p in paths], ignore_index=True)
    frame["location"] = frame["location"].astype(str)
    frame = frame[frame["value"].notna()]

    if meta is not None and meta.get("start_date") is None:
        try:
            day = pd.to_numeric(frame["date"], errors="raise").astype(int).to_numpy() - 1
        except ValueError as exc:
            raise PanelError(f"unparseable day index: {exc}") from exc
        start = None
    else:
        try:
            dates = pd.to_datetime(frame["date"], format="ISO8601")
        except (ValueError, TypeError) as exc:
            raise PanelError(f"unparseable dates: {exc}") from exc
        origin = dates.min() if meta is None else pd.Timestamp(meta["start_date"])
        day = (dates - origin).dt.days.to_numpy()
        start = origin.strftime("%Y-%m-%d")

    dup = frame.assign(day=day).duplicated(["location", "day"], keep=False)
    if dup.any():
        offenders = sorted(set(frame.loc[dup, "location"]))
        raise PanelError(f"duplicate (location, date) pairs for locations {offenders}")

    if meta is not None:
        location_ids = list(meta["location_ids"])
        n_days = int(meta["n_days"])
    else:
        location_ids = list(dict.fromkeys(frame["location"]))
        n_days = int(day.max()) + 1
    row_of = {loc: i for i, loc in enumerate(location_ids)}
    values = np.full((len(location_ids), n_days), np.nan)
    values[frame["location"].map(row_of).to_numpy(), day] = frame["value"].to_numpy()
    observed = np.isfinite(values)

    frac = observed.mean(axis=1)
    low = [f"{loc} ({f:.3f})" for loc, f in zip(location_ids, frac) if f < min_completeness]
    if low:
        raise PanelError(f"locations below completeness floor {min_completeness}: {', '.join(low)}")

    if meta is not None and meta.get("centered"):
        return TemperaturePanel(values, observed, tuple(location_ids), start, np.asarray(meta["offsets"]))
    values, offsets = _center(values, observed)
    return TemperaturePanel(values, observed, tuple(location_ids), start, offsets)


def as_panel(X):
    """Coerce input to a :class:`TemperaturePanel`.

    Arrays and DataFrames are read as ``(n_days, n_locations)`` with ``nan``
    marking missing days; a DataFrame's columns become location ids and a
    ``DatetimeIndex`` supplies the start date. Array input is zero-centered.
    """
    if isinstance(X, TemperaturePanel):
        return X
    ids, start = None, None
    if isinstance(X, pd.DataFrame):
        ids = [str(c) for c in X.columns]
        if isinstance(X.index, pd.DatetimeIndex) and len(X.index):
            start = X.index[0].strftime("%Y-%m-%d")
    arr = check_array(X, ensure_all_finite="allow-nan", ensure_min_samples=2, dtype=float)
    return TemperaturePanel.from_array(arr.T, ids, start)
