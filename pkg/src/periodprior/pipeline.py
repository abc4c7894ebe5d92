"""Two-stage period inference: GP hyperparameter posterior, prior transfer, parametric fit.

Stage 1 samples the hyperparameters of a periodic-kernel GP and fits a 1-D
density to the period marginal. That density is written to ``prior.json``.
Stage 2 reads the file back and samples a parametric model whose period
prior is the transferred density; nothing flows from stage 2 to stage 1.
"""
from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import ais, gp, models, periodogram as pgram, priors
from .config import ConfigError, dump_config
from .sim import SimConfig, simulate_keplerian, simulate_sinusoid
from .timeseries import TimeSeries, detrend_mean, load_timeseries, save_timeseries

logger = logging.getLogger(__name__)

POSITIVE_HYPERS = {"A", "L", "l", "s1", "s2", "sigma_e"}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class DegeneratePosteriorError(ValueError):
    pass


def stage_seeds(master_seed: int) -> dict:
    """Independent integer seeds for every random step, derived from one master seed."""
    names = ("stage1", "prior", "stage2", "baseline")
    kids = np.random.SeedSequence(int(master_seed)).spawn(len(names))
    return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}


@contextlib.contextmanager
def parallel_map(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


def load_data(cfg: dict) -> TimeSeries:
    d = cfg["data"]
    if d["source"] == "file":
        series = load_timeseries(d["path"], d["columns"], d.get("delimiter"))
        if series.n_dropped:
            logger.warning("dropped %d invalid row(s) from %s", series.n_dropped, d["path"])
    elif d["source"] == "sim":
        s = d["sim"]
        sc = SimConfig(n_points=s["n_points"], sigma_e=s["sigma_e"], x_range=s["x_range"],
                       seed=cfg["seed"])
        series = simulate_sinusoid(sc, s.get("replicate", 0))
    else:
        k = d["kepler_sim"]
        params = models.KeplerParams(k["V0"], k["K"], k["e"], k["omega"], k["P"], k["t_p"])
        series = simulate_keplerian(params, int(k["n_points"]), float(k["span"]),
                                    float(k["sigma"]), cfg["seed"])
    if d["detrend"]:
        series = detrend_mean(series)
    return series


# ---------------------------------------------------------------- stage 1


@dataclasses.dataclass
class Stage1Result:
    series: TimeSeries
    hyper: gp.HyperModel
    space: ais.ParamSpace
    samples: ais.WeightedSampleSet
    summary: dict
    periodogram: Optional[pgram.PeriodogramResult] = None


def hyper_space(series: TimeSeries, stage1_cfg: dict, p_bounds) -> tuple:
    """Parameter space for the GP hyperparameters with data-derived default bounds."""
    se = stage1_cfg["sigma_e"]
    hyper = gp.HyperModel(stage1_cfg["kernel"], None if se == "infer" else float(se))
    var = float(np.var(series.values))
    scale = float(np.std(series.values))
    if not var > 0:
        raise DegeneratePosteriorError("degenerate posterior: data have zero variance")
    defaults = {"A": (1e-3 * var, 10 * var), "s1": (1e-3 * var, 10 * var),
                "s2": (1e-3 * var, 10 * var), "L": (1e-2, 1e2), "l": (1e-2, 1e2),
                "sigma_e": (1e-3 * scale, 3 * scale), "P": tuple(p_bounds)}
    user = stage1_cfg.get("bounds", {})
    bounds = [tuple(user.get(n, defaults[n])) for n in hyper.names]
    transforms = ["log" if n in POSITIVE_HYPERS else "identity" for n in hyper.names]
    for n, (lo, hi), tr in zip(hyper.names, bounds, transforms):
        if tr == "log" and lo <= 0:
            raise ConfigError(f"stage1.bounds.{n}: lower bound must be > 0")
    return hyper, ais.ParamSpace(hyper.names, bounds, transforms)


def stage1_posterior(series: TimeSeries, stage1_cfg: dict, seed: int,
                     periodogram_cfg: Optional[dict] = None, map_fn=map) -> Stage1Result:
    """AIS over the GP hyperparameters with independent uniform priors."""
    periodogram_cfg = periodogram_cfg or {"oversample": 5.0, "period_factor": 2.0}
    if not float(np.var(series.values)) > 0:
        raise DegeneratePosteriorError("degenerate posterior: data have zero variance")
    result = None
    if "P" in stage1_cfg.get("bounds", {}):
        p_bounds = tuple(stage1_cfg["bounds"]["P"])
    else:
        freqs = pgram.default_freq_grid(series, periodogram_cfg.get("oversample", 5.0))
        result = pgram.lomb_scargle(series, freqs)
        p_bounds = pgram.period_bounds(result, periodogram_cfg.get("period_factor", 2.0))
    hyper, space = hyper_space(series, stage1_cfg, p_bounds)
    loglik = hyper.log_likelihood_fn(series)
    log_prior = ais.log_uniform_box(space.bounds)

    def log_target(theta):
        return loglik(theta) + log_prior

    a = stage1_cfg["ais"]
    z_lo = space.to_unconstrained(np.array([b[0] for b in space.bounds]))
    z_hi = space.to_unconstrained(np.array([b[1] for b in space.bounds]))
    center = space.from_unconstrained(0.5 * (z_lo + z_hi))
    if result is not None:
        # start on the periodogram peak rather than the middle of [P/f, f P]
        center[space.index("P")] = result.best_period
    init = ais.initial_proposal(space, center=center, width_fraction=float(a["init_width"]))
    samples = ais.run_ais(log_target, space, init, int(a["N"]), int(a["T"]), seed,
                          adapt=a["adapt"], ridge=float(a["ridge"]),
                          min_shrink=float(a["min_shrink"]), map_fn=map_fn)
    summary = {n: ais.summarize(samples, n, 0.9) for n in space.names}
    return Stage1Result(series, hyper, space, samples, summary, result)


def fit_period_prior(samples: ais.WeightedSampleSet, prior_cfg: dict, seed: int, M: int,
                     extra_meta: Optional[dict] = None):
    """Fit the configured density to the period marginal; returns ``(spec, metadata)``.

    The marginal is the projection of the weighted draws onto ``P``.
    """
    p = samples.column("P")
    w = samples.weights
    kind = prior_cfg["fit"]
    try:
        if kind == "kde":
            # KDE centres are unweighted, so draw them by resampling the weights
            draws = ais.resample(samples, int(prior_cfg["resample"]), seed)
            spec = priors.fit_kde(draws[:, samples.names.index("P")])
        elif kind == "laplace":
            spec = priors.fit_laplace(p, w)
        elif kind == "gaussian":
            spec = priors.fit_gaussian(p, w)
        else:
            raise ConfigError(f"prior.fit: unknown fit {kind!r}")
    except priors.PriorError as exc:
        raise DegeneratePosteriorError(f"degenerate posterior: {exc}") from exc
    gamma = prior_cfg["gamma"]
    gamma = priors.default_gamma(M) if gamma == "auto" else float(gamma)
    spec = priors.temper(spec, gamma)
    meta = {"fit": kind, "gamma": gamma, "n_observations": int(M),
            "stage1_P": ais.summarize(samples, "P", prior_cfg["cred_level"]).as_dict(),
            "stage1_ess": ais.ess(samples),
            "density": priors.describe(spec, prior_cfg["cred_level"])}
    meta.update(extra_meta or {})
    return spec, meta


# ---------------------------------------------------------------- stage 2


@dataclasses.dataclass
class Stage2Result:
    series: TimeSeries
    model: str
    space: ais.ParamSpace
    samples: ais.WeightedSampleSet
    summary: dict
    prior: priors.PriorSpec


def model_space(series: TimeSeries, stage2_cfg: dict, prior: priors.PriorSpec):
    """Parameter space of the parametric model; P bounds follow the prior's support."""
    model = stage2_cfg["model"]
    y, t = series.values, series.times
    amp = float(np.max(np.abs(y - np.median(y))))
    p_lo, p_hi = priors.support(prior)
    p_bounds = (max(p_lo, 1e-12), p_hi)
    if model == "sinusoid":
        defaults = {"A": (0.0, 2 * amp), "P": p_bounds, "phi": (-math.pi, math.pi),
                    "b": (float(y.min()), float(y.max()))}
    else:
        defaults = {"V0": (float(y.min()), float(y.max())),
                    "K": (0.0, float(y.max() - y.min())), "e": (0.0, 0.95),
                    "omega": (0.0, 2 * math.pi), "P": p_bounds,
                    "t_p": (float(t[0]), float(t[0]) + p_bounds[1])}
    user = stage2_cfg.get("bounds", {})
    names = models.PARAM_NAMES[model]
    bounds = [tuple(user.get(n, defaults[n])) for n in names]
    return ais.ParamSpace(names, bounds)


def _noise(series, stage2_cfg):
    n = stage2_cfg["noise"]
    if n["sigma_s"] is None:
        raise ConfigError("stage2.noise.sigma_s: required for the parametric likelihood")
    return models.NoiseModel(float(n["sigma_s"]), bool(n.get("use_point_sigmas", False)))


def stage2_posterior(series: TimeSeries, prior: priors.PriorSpec, stage2_cfg: dict, seed: int,
                     map_fn=map) -> Stage2Result:
    """AIS over the parametric model; target = likelihood x period prior x uniform rest."""
    model = stage2_cfg["model"]
    space = model_space(series, stage2_cfg, prior)
    noise = _noise(series, stage2_cfg)
    j = space.index("P")
    rest = [b for i, b in enumerate(space.bounds) if i != j]
    log_uniform = ais.log_uniform_box(rest)
    t, y = series.times, series.values
    var = models.noise_variance(series, noise)
    norm = -0.5 * float(np.sum(np.log(var) + models.LOG_2PI))

    def log_target(theta):
        try:
            params = models.from_vector(model, theta)
        except ValueError:
            return -math.inf
        r = y - models.predict(params, t)
        return (norm - 0.5 * float(np.sum(r * r / var)) + priors.log_prior(prior, theta[j])
                + log_uniform)

    a = stage2_cfg["ais"]
    width = float(a["init_width"])
    center, scale = [], []
    desc = priors.describe(prior)
    for i, (lo, hi) in enumerate(space.bounds):
        if i == j:
            center.append(desc["mean"])
            scale.append(float(stage2_cfg.get("period_init_scale", 2.0)) * desc["std"])
        else:
            center.append(0.5 * (lo + hi))
            scale.append(width * (hi - lo))
    init = ais.initial_proposal(space, center=center, scale=scale)
    samples = ais.run_ais(log_target, space, init, int(a["N"]), int(a["T"]), seed,
                          adapt=a["adapt"], ridge=float(a["ridge"]),
                          min_shrink=float(a["min_shrink"]), map_fn=map_fn)
    summary = {n: ais.summarize(samples, n, 0.9) for n in space.names}
    return Stage2Result(series, model, space, samples, summary, prior)


# ---------------------------------------------------------------- file outputs


def write_summary(summary: dict, samples: ais.WeightedSampleSet, path):
    cols = ["parameter", "mmse_mean", "map", "cred_lo", "cred_hi", "std", "cred_level",
            "ess", "n_samples"]
    lines = [",".join(cols)]
    e = ais.ess(samples)
    for s in summary.values():
        vals = [s.mmse_mean, s.map, s.cred_lo, s.cred_hi, s.std, s.cred_level, e]
        lines.append(",".join([s.name, *(format(v, ".17g") for v in vals), str(len(samples))]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    out = {}
    for ln in lines[1:]:
        cells = ln.split(",")
        out[cells[0]] = {c: float(v) for c, v in zip(cols[1:], cells[1:])}
    return out


def write_ess_trace(samples: ais.WeightedSampleSet, path):
    lines = ["iteration,ess"] + [f"{i},{e:.17g}" for i, e in enumerate(samples.ess_trace)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_curve(curve: ais.FullBayesCurve, path):
    lines = ["t,mean,variance"]
    lines += [f"{t:.17g},{m:.17g},{v:.17g}" for t, m, v in zip(curve.grid, curve.mean, curve.var)]
    Path(path).write_text("\n".join(lines) + "\n")


def _plot(cfg, fn, *args, **kwargs):
    if not cfg.get("plots", True):
        return None
    from . import plotting
    try:
        return getattr(plotting, fn)(*args, **kwargs)
    except Exception as exc:  # figures never break a numeric run
        logger.warning("figure %s failed: %s", fn, exc)
        return None


def run_stage1(cfg: dict, out_dir=None, series: Optional[TimeSeries] = None) -> dict:
    """Stage 1 with files: samples, summaries, periodogram, full-Bayes curve and prior."""
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(cfg["seed"])
    files, figures = {}, []
    try:
        series = series if series is not None else load_data(cfg)
        save_timeseries(series, out / "data.csv")
        files["data"] = "data.csv"
        with parallel_map(int(cfg["threads"])) as pmap:
            res = stage1_posterior(series, cfg["stage1"], seeds["stage1"], cfg["periodogram"],
                                   map_fn=pmap)
        if res.periodogram is not None:
            pg = res.periodogram
            peaks = pgram.find_peaks(pg, int(cfg["periodogram"]["n_peaks"]))
            pg = dataclasses.replace(pg, peaks=tuple(peaks))
            pgram.write_periodogram(pg, out / "periodogram.csv", out / "periodogram_peaks.csv")
            files["periodogram"] = "periodogram.csv"
            files["periodogram_peaks"] = "periodogram_peaks.csv"
            figures.append(_plot(cfg, "plot_periodogram", pg, out / "periodogram.svg"))
        ais.write_samples(res.samples, out / "stage1_samples.csv")
        write_summary(res.summary, res.samples, out / "stage1_summary.csv")
        write_ess_trace(res.samples, out / "stage1_ess.csv")
        files.update(stage1_samples="stage1_samples.csv", stage1_summary="stage1_summary.csv",
                     stage1_ess="stage1_ess.csv")
        figures.append(_plot(cfg, "plot_marginals", res.samples, res.summary,
                             out / "stage1_marginals.svg", "GP hyperparameters"))

        if cfg["stage1"].get("full_bayes", True):
            t = series.times
            pad = 0.02 * series.span
            grid = np.linspace(t[0] - pad, t[-1] + pad, int(cfg["stage1"]["grid_points"]))
            curve = ais.full_bayes_gp(res.samples, series, grid, res.hyper.build,
                                      min_weight=float(cfg["stage1"]["fbs_min_weight"]))
            write_curve(curve, out / "stage1_full_bayes.csv")
            files["stage1_full_bayes"] = "stage1_full_bayes.csv"
            figures.append(_plot(cfg, "plot_full_bayes", series, curve,
                                 out / "stage1_full_bayes.svg"))

        spec, meta = fit_period_prior(
            res.samples, cfg["prior"], seeds["prior"], series.M,
            {"data": series.name, "stage1_P_bounds": list(res.space.bounds[res.space.index("P")])})
        priors.save_prior(spec, out / "prior.json", meta)
        files["prior"] = "prior.json"
        figures.append(_plot(cfg, "plot_prior_fit", res.samples, spec, out / "prior_fit.svg"))
    except (ais.AISError, DegeneratePosteriorError, gp.GPError, pgram.PeriodogramError,
            ValueError) as exc:
        raise StageError("stage1", str(exc)) from exc
    return {"result": res, "prior": spec, "prior_meta": meta, "files": files,
            "figures": [f for f in figures if f]}


def run_prior_fit(cfg: dict, out_dir=None) -> dict:
    """Refit ``prior.json`` from an existing ``stage1_samples.csv`` with ``cfg['prior']``."""
    out = Path(out_dir or cfg["output_dir"])
    try:
        samples = ais.read_samples(out / "stage1_samples.csv")
        if (out / "data.csv").is_file():
            M = load_timeseries(out / "data.csv").M
        else:
            M = load_data(cfg).M
        spec, meta = fit_period_prior(samples, cfg["prior"], stage_seeds(cfg["seed"])["prior"], M)
        priors.save_prior(spec, out / "prior.json", meta)
    except (DegeneratePosteriorError, ValueError, FileNotFoundError) as exc:
        raise StageError("prior-fit", str(exc)) from exc
    fig = _plot(cfg, "plot_prior_fit", samples, spec, out / "prior_fit.svg")
    return {"prior": spec, "prior_meta": meta, "files": {"prior": "prior.json"},
            "figures": [fig] if fig else []}


def run_periodogram(cfg: dict, out_dir=None, series: Optional[TimeSeries] = None) -> dict:
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        series = series if series is not None else load_data(cfg)
        pc = cfg["periodogram"]
        result = pgram.lomb_scargle(series, pgram.default_freq_grid(series, pc["oversample"]))
        result = dataclasses.replace(result, peaks=tuple(pgram.find_peaks(result, int(pc["n_peaks"]))))
        pgram.write_periodogram(result, out / "periodogram.csv", out / "periodogram_peaks.csv")
    except ValueError as exc:
        raise StageError("periodogram", str(exc)) from exc
    fig = _plot(cfg, "plot_periodogram", result, out / "periodogram.svg")
    return {"result": result, "files": {"periodogram": "periodogram.csv",
                                        "periodogram_peaks": "periodogram_peaks.csv"},
            "figures": [fig] if fig else []}


def _run_parametric(cfg, prior, out, tag, seed, series):
    files, figures = {}, []
    with parallel_map(int(cfg["threads"])) as pmap:
        res = stage2_posterior(series, prior, cfg["stage2"], seed, map_fn=pmap)
    ais.write_samples(res.samples, out / f"{tag}_samples.csv")
    write_summary(res.summary, res.samples, out / f"{tag}_summary.csv")
    write_ess_trace(res.samples, out / f"{tag}_ess.csv")
    files.update({f"{tag}_samples": f"{tag}_samples.csv", f"{tag}_summary": f"{tag}_summary.csv",
                  f"{tag}_ess": f"{tag}_ess.csv"})
    figures.append(_plot(cfg, "plot_marginals", res.samples, res.summary,
                         out / f"{tag}_marginals.svg", f"{res.model} parameters"))
    figures.append(_plot(cfg, "plot_phase_folded", res, out / f"{tag}_phase.svg"))
    return {"result": res, "files": files, "figures": [f for f in figures if f]}


def run_stage2(cfg: dict, prior=None, out_dir=None, series: Optional[TimeSeries] = None) -> dict:
    """Stage 2 from a prior object or from ``<out_dir>/prior.json``."""
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        if prior is None:
            prior, _ = priors.load_prior(out / "prior.json")
        elif isinstance(prior, (str, Path)):
            prior, _ = priors.load_prior(prior)
        series = series if series is not None else load_data(cfg)
        return _run_parametric(cfg, prior, out, "stage2", stage_seeds(cfg["seed"])["stage2"],
                               series)
    except (ais.AISError, ValueError, FileNotFoundError) as exc:
        raise StageError("stage2", str(exc)) from exc


def run_baseline_uniform(cfg: dict, out_dir=None, series: Optional[TimeSeries] = None) -> dict:
    """Stage 2 with a flat period prior on ``baseline.uniform`` instead of the GP prior."""
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        prior = priors.Uniform(*cfg["baseline"]["uniform"])
        series = series if series is not None else load_data(cfg)
        return _run_parametric(cfg, prior, out, "baseline",
                               stage_seeds(cfg["seed"])["baseline"], series)
    except (ais.AISError, ValueError) as exc:
        raise StageError("baseline", str(exc)) from exc


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_pipeline(cfg: dict, out_dir=None) -> dict:
    """Stage 1, prior transfer through ``prior.json``, stage 2 and optional baseline.

    Writes ``manifest.json`` holding the config snapshot, seeds and SHA-256
    of every numeric output; the manifest can be passed back as a config to
    reproduce the run.
    """
    out = Path(out_dir or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    s1 = run_stage1(cfg, out)
    series = s1["result"].series
    # the cut: stage 2 only sees what was written to disk
    s2 = run_stage2(cfg, out / "prior.json", out, series=series)
    files = {"config": "config.json", **s1["files"], **s2["files"]}
    figures = s1["figures"] + s2["figures"]
    baseline = None
    if cfg["baseline"]["enabled"]:
        baseline = run_baseline_uniform(cfg, out, series=series)
        files.update(baseline["files"])
        figures += baseline["figures"]

    groups = {
        "samples": sorted(v for k, v in files.items() if k.endswith("_samples")),
        "priors": ["prior.json"],
        "summaries": sorted(v for k, v in files.items() if k.endswith("_summary")),
    }
    hashes = {name: sha256(out / name) for name in sorted(set(files.values()))}
    digest = hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()
    manifest = {"config": cfg, "seeds": stage_seeds(cfg["seed"]), "files": hashes,
                "groups": groups, "figures": sorted(Path(f).name for f in figures),
                "manifest_hash": digest}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"manifest": manifest, "stage1": s1, "stage2": s2, "baseline": baseline}
