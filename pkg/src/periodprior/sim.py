"""Synthetic sinusoid data and the period-MMSE versus sample-size study."""
from __future__ import annotations

import dataclasses
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .timeseries import TimeSeries, from_arrays

logger = logging.getLogger(__name__)

TRUE_PERIOD = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class SimConfig:
    """Settings for ``y = sin(x) + e`` with ``e ~ N(0, sigma_e**2)``.

    ``n_points`` is either one size or a sequence of sizes (the buckets of
    the MMSE study).
    """

    n_points: tuple = (16,)
    sigma_e: float = 0.5
    x_range: tuple = (-4.0, 4.0)
    n_replicates: int = 20
    seed: int = 0
    noiseless: bool = False

    def __post_init__(self):
        n = self.n_points
        n = (int(n),) if np.ndim(n) == 0 else tuple(int(v) for v in n)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        lo, hi = self.x_range
        if not lo < hi:
            raise ValueError("x_range must satisfy lo < hi")
        if not self.sigma_e > 0:
            raise ValueError("sigma_e must be > 0")
        if min(n) < 4:
            raise ValueError("n_points must be >= 4")
        if self.n_replicates < 0:
            raise ValueError("n_replicates must be >= 0")


def replicate_seed(seed: int, replicate: int, n_points: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(int(n_points), int(replicate)))


def simulate_sinusoid(cfg: SimConfig, replicate: int = 0, n_points: int = None) -> TimeSeries:
    """One noisy draw of ``sin(x)`` at sorted uniform ``x`` in ``cfg.x_range``."""
    n = cfg.n_points[0] if n_points is None else int(n_points)
    rng = np.random.default_rng(replicate_seed(cfg.seed, replicate, n))
    lo, hi = cfg.x_range
    x = np.sort(rng.uniform(lo, hi, n))
    noise = rng.normal(0.0, cfg.sigma_e, n)
    y = np.sin(x) if cfg.noiseless else np.sin(x) + noise
    return from_arrays(x, y, name=f"sim_n{n}_r{replicate}")


def simulate_keplerian(params, n_points: int, span: float, sigma: float, seed: int,
                       t0: float = 0.0, jitter_sigmas: bool = True) -> TimeSeries:
    """Irregularly sampled Keplerian RV curve with white noise.

    Per-point uncertainties are attached at ``sigma`` when ``jitter_sigmas``.
    """
    from .models import keplerian_rv

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    t = np.sort(t0 + rng.uniform(0.0, span, n_points))
    v = keplerian_rv(params, t) + rng.normal(0.0, sigma, n_points)
    sig = np.full(n_points, sigma) if jitter_sigmas else None
    return from_arrays(t, v, sig, name="kepler_sim")


def box_summary(values: Sequence[float]) -> dict:
    """Median, quartiles, 1.5 IQR whiskers and outliers of the finite values."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
            "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
            "outliers": sorted(float(x) for x in v[(v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)])}


@dataclasses.dataclass
class MMSEStudy:
    rows: list
    summary: dict

    def median_abs_error(self, n):
        errs = [r["abs_error"] for r in self.rows if r["n_points"] == n and r["status"] == "ok"]
        return float(np.median(errs)) if errs else math.nan


def mmse_study(cfg: SimConfig, stage1_cfg: dict, detrend: bool = True,
               map_fn=map) -> MMSEStudy:
    """Stage-1 period MMSE for every replicate and sample size.

    ``stage1_cfg`` is the ``stage1`` section of a pipeline config. Runs that
    abort are kept as rows with ``status`` set to the error and a NaN
    estimate.
    """
    from .pipeline import stage1_posterior  # pipeline imports this module
    from .timeseries import detrend_mean

    rows = []
    for n in cfg.n_points:
        for rep in range(cfg.n_replicates):
            series = simulate_sinusoid(cfg, rep, n)
            if detrend:
                series = detrend_mean(series)
            seed = int(replicate_seed(cfg.seed, rep, n).generate_state(1)[0])
            try:
                res = stage1_posterior(series, stage1_cfg, seed, map_fn=map_fn)
                est = res.summary["P"].mmse_mean
                status = "ok"
            except Exception as exc:  # recorded, not dropped
                logger.warning("n=%d replicate %d aborted: %s", n, rep, exc)
                est, status = math.nan, f"error: {type(exc).__name__}"
            rows.append({"n_points": n, "replicate": rep, "mmse_P": est,
                         "abs_error": abs(est - TRUE_PERIOD), "status": status})
    summary = {}
    for n in cfg.n_points:
        bucket = [r["mmse_P"] for r in rows if r["n_points"] == n]
        if bucket:
            s = box_summary(bucket)
            s["n_missing"] = int(sum(not np.isfinite(b) for b in bucket))
            errs = [r["abs_error"] for r in rows if r["n_points"] == n]
            s["median_abs_error"] = float(np.nanmedian(errs)) if np.any(np.isfinite(errs)) else math.nan
            summary[n] = s
    return MMSEStudy(rows, summary)


def write_study(study: MMSEStudy, table_path, summary_path):
    lines = ["n_points,replicate,mmse_P,abs_error,status"]
    for r in study.rows:
        lines.append(f"{r['n_points']},{r['replicate']},{r['mmse_P']:.17g},"
                     f"{r['abs_error']:.17g},{r['status']}")
    Path(table_path).write_text("\n".join(lines) + "\n")
    cols = ["n_points", "n", "n_missing", "median", "q1", "q3", "whisker_lo", "whisker_hi",
            "median_abs_error", "outliers"]
    out = [",".join(cols)]
    for n, s in study.summary.items():
        vals = [str(n)] + [f"{s.get(c, math.nan):.17g}" if c not in ("n", "n_missing")
                           else str(s.get(c, 0)) for c in cols[1:-1]]
        vals.append(" ".join(f"{o:.17g}" for o in s.get("outliers", [])))
        out.append(",".join(vals))
    Path(summary_path).write_text("\n".join(out) + "\n")
