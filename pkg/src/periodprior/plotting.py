"""SVG figures for pipeline outputs. All functions write a file and return its path."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import models, priors  # noqa: E402

# fixed salt and no date keep SVG output byte-stable across runs
plt.rcParams["svg.hashsalt"] = "periodprior"
_META = {"Date": None}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, metadata=_META if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def plot_marginals(samples, summary, path, title=""):
    """Weighted histogram per parameter with MMSE mean, MAP and credible interval."""
    names = list(samples.names)
    ncol = min(3, len(names))
    nrow = -(-len(names) // ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3 * nrow), squeeze=False)
    w = samples.weights
    for ax, name in zip(axes.ravel(), names):
        x = samples.column(name)
        s = summary[name]
        ax.hist(x, bins=50, weights=w, density=True, color="0.7")
        ax.axvline(s.mmse_mean, color="C0", label="mean")
        ax.axvline(s.map, color="C3", ls="--", label="MAP")
        ax.axvspan(s.cred_lo, s.cred_hi, color="C0", alpha=0.15,
                   label=f"{int(round(100 * s.cred_level))}% interval")
        ax.set_xlabel(name)
    for ax in axes.ravel()[len(names):]:
        ax.set_visible(False)
    axes[0, 0].legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_prior_fit(samples, spec, path):
    """Period marginal of the stage-1 draws with the fitted prior density on top."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(samples.column("P"), bins=60, weights=samples.weights, density=True, color="0.75",
            label="stage 1 draws")
    lo, hi = priors.support(spec, n_scale=4)
    x = np.linspace(lo, hi, 800)
    p = np.exp(priors.log_prior(spec, x))
    if isinstance(spec, priors.Tempered):
        from scipy.integrate import trapezoid
        p /= trapezoid(p, x)
    ax.plot(x, p, color="C1", label="fitted prior")
    ax.set_xlabel("P")
    ax.set_ylabel("density")
    ax.legend()
    return _save(fig, path)


def plot_periodogram(result, path):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(1.0 / result.frequencies, result.powers, lw=0.8)
    for f, _ in result.peaks[:3]:
        ax.axvline(1.0 / f, color="C3", lw=0.6, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("period")
    ax.set_ylabel("power")
    return _save(fig, path)


def plot_full_bayes(series, curve, path):
    """Data with the hyperparameter-averaged GP mean and a 2-sigma band."""
    fig, ax = plt.subplots(figsize=(7, 4))
    sd = np.sqrt(curve.var)
    ax.fill_between(curve.grid, curve.mean - 2 * sd, curve.mean + 2 * sd, color="C0", alpha=0.2)
    ax.plot(curve.grid, curve.mean, color="C0")
    if series.sigmas is None:
        ax.plot(series.times, series.values, "k.", ms=4)
    else:
        ax.errorbar(series.times, series.values, series.sigmas, fmt="k.", ms=4, lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_phase_folded(res, path):
    """Data folded at the posterior mean period with the MMSE model curve."""
    theta = np.array([res.summary[n].mmse_mean for n in res.space.names])
    params = models.from_vector(res.model, theta)
    P = params.P
    t, y = res.series.times, res.series.values
    ref = params.t_p if res.model == "kepler" else t[0]
    phase = np.mod(t - ref, P) / P
    grid = np.linspace(0.0, 1.0, 400)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(phase, y, "k.", ms=4)
    ax.plot(grid, models.predict(params, ref + grid * P), color="C1")
    ax.set_xlabel(f"phase (P = {P:.4g})")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_mmse_box(study, path, true_value=None):
    ns = sorted(study.summary)
    data = [[r["mmse_P"] for r in study.rows if r["n_points"] == n and np.isfinite(r["mmse_P"])]
            for n in ns]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot(data, labels=[str(n) for n in ns])
    if true_value is not None:
        ax.axhline(true_value, color="C3", ls="--", lw=0.8)
    ax.set_xlabel("number of observations")
    ax.set_ylabel("period MMSE estimate")
    return _save(fig, path)
