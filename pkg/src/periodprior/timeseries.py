"""Irregularly sampled observations with optional per-point uncertainties."""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"time": "time", "value": "value", "sigma": None}


class TimeSeriesError(ValueError):
    """Raised when observations cannot form a valid series."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True)
class TimeSeries:
    """Observations ``values[i]`` taken at ``times[i]``.

    Times are strictly increasing. ``sigmas`` is ``None`` when the source
    carries no uncertainty column, in which case likelihoods fall back to a
    single global noise scale.
    """

    times: np.ndarray
    values: np.ndarray
    sigmas: Optional[np.ndarray] = None
    name: str = ""
    n_dropped: int = 0
    mean_removed: float = 0.0

    def __post_init__(self):
        times = _frozen(self.times)
        values = _frozen(self.values)
        if times.ndim != 1 or values.shape != times.shape:
            raise TimeSeriesError("times and values must be 1-D arrays of equal length")
        if times.size < 1:
            raise TimeSeriesError("a time series needs at least one observation")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise TimeSeriesError("times and values must be finite")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise TimeSeriesError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.sigmas is not None:
            sigmas = _frozen(self.sigmas)
            if sigmas.shape != times.shape:
                raise TimeSeriesError("sigmas must match times in length")
            if not (np.all(np.isfinite(sigmas)) and np.all(sigmas > 0)):
                raise TimeSeriesError("sigmas must be finite and strictly positive")
            object.__setattr__(self, "sigmas", sigmas)

    @property
    def M(self) -> int:
        return int(self.times.size)

    def __len__(self):
        return self.M

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    def replace(self, **changes) -> "TimeSeries":
        return dataclasses.replace(self, **changes)


def from_arrays(times, values, sigmas=None, name="") -> TimeSeries:
    """Build a series from unsorted arrays, sorting by time and rejecting ties."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(times, kind="stable")
    times, values = times[order], values[order]
    if sigmas is not None:
        sigmas = np.asarray(sigmas, dtype=float)[order]
    if times.size > 1 and np.any(np.diff(times) == 0):
        dup = times[1:][np.diff(times) == 0][0]
        raise TimeSeriesError(f"duplicate timestamp {dup!r}")
    return TimeSeries(times, values, sigmas, name=name)


def _split(line, delimiter):
    if delimiter == ",":
        return [c.strip() for c in line.split(",")]
    return line.split()


def load_timeseries(path, column_map: Optional[Mapping[str, Optional[str]]] = None,
                    delimiter: Optional[str] = None) -> TimeSeries:
    """Read a delimited text file with a header row.

    Parameters
    ----------
    path : str or Path
        Comma- or whitespace-separated file. Lines starting with ``#`` are
        ignored.
    column_map : mapping, optional
        Keys ``time``, ``value`` and optionally ``sigma`` naming the header
        columns to use. A ``sigma`` of ``None`` means no uncertainty column.
    delimiter : {",", None}
        ``None`` sniffs the header: commas if present, otherwise whitespace.

    Rows holding any non-finite mapped entry are dropped and counted in
    ``TimeSeries.n_dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    cmap = dict(DEFAULT_COLUMNS)
    if column_map:
        cmap.update(column_map)

    lines = [ln for ln in path.read_text().splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise TimeSeriesError(f"{path}: empty file")
    if delimiter is None:
        delimiter = "," if "," in lines[0] else None
    header = _split(lines[0], delimiter)

    wanted = [("time", cmap["time"]), ("value", cmap["value"])]
    if cmap.get("sigma"):
        wanted.append(("sigma", cmap["sigma"]))
    idx = {}
    for role, col in wanted:
        if col not in header:
            raise TimeSeriesError(f"{path}: column {col!r} (for {role}) not in header {header}")
        idx[role] = header.index(col)

    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = _split(ln, delimiter)
        try:
            rows.append([float(cells[idx[role]]) for role, _ in wanted])
        except (ValueError, IndexError) as exc:
            raise TimeSeriesError(f"{path}:{lineno}: non-numeric or missing entry") from exc
    data = np.array(rows, dtype=float).reshape(-1, len(wanted))
    keep = np.all(np.isfinite(data), axis=1)
    if "sigma" in idx:
        keep &= data[:, 2] > 0
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("%s: dropped %d row(s) with non-finite entries", path, n_dropped)
    data = data[keep]
    if data.shape[0] < 2:
        raise TimeSeriesError(f"{path}: fewer than 2 valid rows")

    sigmas = data[:, 2] if "sigma" in idx else None
    series = from_arrays(data[:, 0], data[:, 1], sigmas, name=path.stem)
    return series.replace(n_dropped=n_dropped)


def save_timeseries(series: TimeSeries, path, column_map=None, delimiter=","):
    """Write ``series`` so that :func:`load_timeseries` reads it back bit-identically."""
    cmap = dict(DEFAULT_COLUMNS)
    if column_map:
        cmap.update(column_map)
    cols = [series.times, series.values]
    names = [cmap["time"], cmap["value"]]
    if series.sigmas is not None:
        cols.append(series.sigmas)
        names.append(cmap["sigma"] or "sigma")
    sep = delimiter if delimiter == "," else " "
    out = [sep.join(names)]
    for row in zip(*cols):
        out.append(sep.join(format(float(v), ".17g") for v in row))
    Path(path).write_text("\n".join(out) + "\n")


def detrend_mean(series: TimeSeries) -> TimeSeries:
    """Subtract the arithmetic mean of the values.

    The removed mean is accumulated in ``mean_removed`` so the original
    level can be restored. Applying it twice is a no-op.
    """
    if series.M < 2:
        raise TimeSeriesError("detrending needs at least 2 observations")
    mean = float(np.mean(series.values))
    scale = float(np.max(np.abs(series.values)))
    # already centred to rounding precision: keep values bit-identical
    if abs(mean) <= 1e-12 * scale:
        return series
    return series.replace(values=series.values - mean,
                          mean_removed=series.mean_removed + mean)
