"""Generalised (floating-mean) Lomb-Scargle periodogram.

Power at each frequency is the fractional reduction of the weighted
variance obtained by fitting ``a cos(2 pi f t) + b sin(2 pi f t) + c``, so it
lies in ``[0, 1]`` and is unchanged by offsets, time shifts and rescaling of
the values.
"""
from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from .timeseries import TimeSeries


class PeriodogramError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class PeriodogramResult:
    frequencies: np.ndarray
    powers: np.ndarray
    peaks: tuple = ()

    @property
    def best_frequency(self) -> float:
        return float(self.frequencies[np.argmax(self.powers)])

    @property
    def best_period(self) -> float:
        return 1.0 / self.best_frequency


def default_freq_grid(data: TimeSeries, oversample: float = 5.0):
    """From ``1/span`` to ``0.5 M / span`` in steps of ``1/(oversample span)``."""
    if data.M < 4:
        raise PeriodogramError("need at least 4 observations")
    span = data.span
    if not span > 0:
        raise PeriodogramError("time span is zero")
    f_min, f_max = 1.0 / span, 0.5 * data.M / span
    step = 1.0 / (oversample * span)
    n = int(math.floor((f_max - f_min) / step + 1e-9)) + 1
    return f_min + step * np.arange(n)


def lomb_scargle(data: TimeSeries, freqs, chunk: int = 512) -> PeriodogramResult:
    """Floating-mean periodogram, weighted by ``1/sigma**2`` when sigmas exist."""
    freqs = np.asarray(freqs, dtype=float)
    if data.M < 4:
        raise PeriodogramError("need at least 4 observations")
    if freqs.size == 0 or np.any(freqs <= 0):
        raise PeriodogramError("frequencies must be positive")
    w = np.ones(data.M) if data.sigmas is None else 1.0 / data.sigmas ** 2
    w = w / w.sum()
    t = data.times - data.times[0]
    y = data.values - w @ data.values
    YY = w @ (y * y)
    if not YY > 0 or YY <= 1e-24 * float(np.max(np.abs(data.values))) ** 2:
        raise PeriodogramError("constant series: zero variance")

    power = np.empty(freqs.size)
    for i in range(0, freqs.size, chunk):
        arg = 2 * np.pi * np.outer(freqs[i:i + chunk], t)
        c, s = np.cos(arg), np.sin(arg)
        C, S = c @ w, s @ w
        YC, YS = c @ (w * y), s @ (w * y)
        CC = (c * c) @ w - C * C
        SS = (s * s) @ w - S * S
        CS = (c * s) @ w - C * S
        Dn = CC * SS - CS * CS
        with np.errstate(divide="ignore", invalid="ignore"):
            p = (SS * YC * YC + CC * YS * YS - 2 * CS * YC * YS) / (YY * Dn)
        power[i:i + chunk] = np.where(Dn > 0, p, 0.0)
    power = np.clip(power, 0.0, 1.0)
    result = PeriodogramResult(freqs, power)
    return dataclasses.replace(result, peaks=tuple(find_peaks(result, 10)))


def find_peaks(result: PeriodogramResult, k: int):
    """Up to ``k`` strict interior local maxima as ``(frequency, power)``, strongest first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    p = result.powers
    if p.size < 3:
        return []
    idx = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])) + 1
    idx = idx[np.argsort(-p[idx], kind="stable")]
    chosen = []
    for i in idx:
        if all(abs(i - j) >= 2 for j in chosen):
            chosen.append(int(i))
        if len(chosen) == k:
            break
    return [(float(result.frequencies[i]), float(p[i])) for i in chosen]


def period_bounds(result: PeriodogramResult, factor: float = 2.0):
    """Bounds ``[P_peak / factor, factor * P_peak]`` around the strongest period."""
    P = result.best_period
    return P / factor, P * factor


def write_periodogram(result: PeriodogramResult, path, peaks_path=None):
    lines = ["frequency,power"]
    lines += [f"{f:.17g},{p:.17g}" for f, p in zip(result.frequencies, result.powers)]
    Path(path).write_text("\n".join(lines) + "\n")
    if peaks_path is not None:
        rows = ["rank,frequency,period,power"]
        rows += [f"{i + 1},{f:.17g},{1.0 / f:.17g},{p:.17g}"
                 for i, (f, p) in enumerate(result.peaks)]
        Path(peaks_path).write_text("\n".join(rows) + "\n")
