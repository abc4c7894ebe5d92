"""Adaptive importance sampling with a Gaussian proposal.

At every iteration ``N`` draws are taken from a multivariate normal proposal,
weighted by ``target / proposal`` and used to re-estimate the proposal mean
and covariance by weighted moment matching. All ``N * T`` weighted draws are
returned. Positive-only parameters may be sampled in log space; the Jacobian
is folded into the weights so the target is always the density over the
natural parameters.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import gp as gpmod

logger = logging.getLogger(__name__)

RIDGE = 1e-3
EIG_FLOOR = 1e-8
MIN_SHRINK = 0.3


class AISError(RuntimeError):
    """Sampling cannot continue, e.g. every weight of an iteration is zero."""


@dataclasses.dataclass(frozen=True)
class ParamSpace:
    names: tuple
    bounds: tuple
    transforms: tuple = None

    def __post_init__(self):
        names = tuple(self.names)
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        transforms = (tuple(self.transforms) if self.transforms is not None
                      else ("identity",) * len(names))
        if not (len(names) == len(bounds) == len(transforms)) or not names:
            raise ValueError("names, bounds and transforms must have equal, non-zero length")
        for name, (lo, hi), tr in zip(names, bounds, transforms):
            if not lo < hi:
                raise ValueError(f"bounds for {name!r} must satisfy lower < upper, got ({lo}, {hi})")
            if tr not in ("identity", "log"):
                raise ValueError(f"unknown transform {tr!r} for {name!r}")
            if tr == "log" and lo < 0:
                raise ValueError(f"log transform for {name!r} needs a non-negative lower bound")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "transforms", transforms)

    @property
    def D(self) -> int:
        return len(self.names)

    @property
    def _log_mask(self):
        return np.array([t == "log" for t in self.transforms])

    def index(self, name) -> int:
        return self.names.index(name)

    def to_unconstrained(self, theta):
        z = np.array(theta, dtype=float, copy=True)
        mask = self._log_mask
        with np.errstate(divide="ignore"):
            z[..., mask] = np.log(z[..., mask])
        return z

    def from_unconstrained(self, z):
        theta = np.array(z, dtype=float, copy=True)
        mask = self._log_mask
        theta[..., mask] = np.exp(theta[..., mask])
        return theta

    def log_jacobian(self, z):
        """``log |d theta / d z|`` per row."""
        return np.sum(np.asarray(z)[..., self._log_mask], axis=-1)

    def in_bounds(self, theta):
        theta = np.atleast_2d(theta)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.all((theta >= lo) & (theta <= hi), axis=1)


@dataclasses.dataclass(frozen=True)
class ProposalState:
    """Gaussian proposal in the unconstrained coordinates of a ``ParamSpace``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("cov must be D x D")
        if not np.all(np.isfinite(mean)):
            raise ValueError("proposal mean must be finite")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ValueError("proposal covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def D(self):
        return self.mean.size

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.D)) @ self._chol.T

    def logpdf(self, z):
        diff = np.atleast_2d(z) - self.mean
        sol = linalg.solve_triangular(self._chol, diff.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * (np.sum(sol * sol, axis=0) + logdet + self.D * math.log(2 * math.pi))


def initial_proposal(space: ParamSpace, center=None, scale=None, width_fraction=0.5):
    """Broad Gaussian start in unconstrained coordinates.

    ``center`` defaults to the midpoint of each (transformed) bound; ``scale``
    (the per-dimension standard deviation) defaults to ``width_fraction``
    times the transformed bound width.
    """
    z_lo = space.to_unconstrained(np.array([b[0] for b in space.bounds]))
    z_hi = space.to_unconstrained(np.array([b[1] for b in space.bounds]))
    if center is None:
        if not (np.all(np.isfinite(z_lo)) and np.all(np.isfinite(z_hi))):
            raise ValueError("finite bounds are needed to default the proposal centre")
        center_z = 0.5 * (z_lo + z_hi)
    else:
        center_z = space.to_unconstrained(np.asarray(center, dtype=float))
    if scale is None:
        width = z_hi - z_lo
        if not np.all(np.isfinite(width)):
            raise ValueError("finite bounds are needed to default the proposal scale")
        scale = width_fraction * width
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (space.D,))
    return ProposalState(center_z, np.diag(scale ** 2))


@dataclasses.dataclass(frozen=True)
class WeightedSampleSet:
    """All draws of an AIS run in natural coordinates.

    ``log_weights`` are unnormalised importance weights, ``log_target`` the
    unnormalised log posterior at each draw and ``iteration`` the 0-based
    iteration that produced it.
    """

    names: tuple
    samples: np.ndarray
    log_weights: np.ndarray
    log_target: np.ndarray
    iteration: np.ndarray
    ess_trace: tuple = ()

    def __post_init__(self):
        n = self.samples.shape[0]
        if not (self.log_weights.shape == self.log_target.shape == self.iteration.shape == (n,)):
            raise ValueError("sample, weight and target arrays disagree in length")
        if self.samples.shape[1] != len(self.names):
            raise ValueError("samples have the wrong number of columns")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def weights(self):
        """Self-normalised weights."""
        lw = self.log_weights
        if not np.any(np.isfinite(lw)):
            raise AISError("no finite weights")
        w = np.exp(lw - np.max(lw))
        return w / w.sum()

    def column(self, dim):
        return self.samples[:, self._dim(dim)]

    def _dim(self, dim):
        return self.names.index(dim) if isinstance(dim, str) else int(dim)


def adapt_proposal(z, log_weights, previous: Optional[ProposalState] = None,
                   ridge: float = RIDGE, min_shrink: float = 0.0) -> ProposalState:
    """Weighted moment matching of the next Gaussian proposal.

    ``z`` holds draws in unconstrained coordinates. A ridge of
    ``ridge * trace / D`` is added to the weighted covariance and its
    eigenvalues are floored at ``1e-8 * trace``. If a single draw carries all
    the weight, the mean moves to it and the previous covariance is kept.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not finite.any():
        raise AISError("cannot adapt: no finite weights")
    z, lw = z[finite], lw[finite]
    w = np.exp(lw - lw.max())
    w /= w.sum()
    mean = w @ z
    D = z.shape[1]
    diff = z - mean
    cov = (w[:, None] * diff).T @ diff
    tr = float(np.trace(cov))
    if z.shape[0] == 1 or not tr > 0:
        if previous is None:
            raise AISError("degenerate weights and no previous covariance to fall back on")
        if z.shape[0] > 1:
            mean = z[np.argmax(lw)]
        return ProposalState(mean, previous.cov)
    cov = cov + (ridge * tr / D) * np.eye(D)
    if previous is not None and min_shrink > 0:
        # floor the eigenvalues of cov measured in the metric of the previous
        # covariance, so one degenerate iteration cannot collapse the proposal
        Lp = previous._chol
        rel = linalg.solve_triangular(Lp, linalg.solve_triangular(Lp, cov, lower=True).T,
                                      lower=True)
        vals, vecs = linalg.eigh(0.5 * (rel + rel.T))
        if vals.min() < min_shrink:
            rel = (vecs * np.maximum(vals, min_shrink)) @ vecs.T
            cov = Lp @ rel @ Lp.T
            tr = float(np.trace(cov))
    vals, vecs = linalg.eigh(0.5 * (cov + cov.T))
    vals = np.maximum(vals, EIG_FLOOR * tr)
    cov = (vecs * vals) @ vecs.T
    return ProposalState(mean, 0.5 * (cov + cov.T))


def _evaluate(log_target, thetas, map_fn):
    vals = np.fromiter(map_fn(log_target, list(thetas)), dtype=float, count=len(thetas))
    vals[np.isnan(vals)] = -np.inf
    return vals


def run_ais(log_target: Callable, space: ParamSpace, init: ProposalState, N: int, T: int,
            seed: int, adapt: str = "local", ridge: float = RIDGE,
            min_shrink: float = MIN_SHRINK, map_fn: Callable = map) -> WeightedSampleSet:
    """Adaptive importance sampling of ``log_target`` over ``space``.

    Parameters
    ----------
    log_target : callable
        Unnormalised log density of a natural-coordinate parameter vector.
        Must be pure; it may be evaluated through ``map_fn`` in parallel.
    space : ParamSpace
        Names, hard bounds (draws outside get zero weight) and transforms.
    init : ProposalState
        Initial Gaussian proposal, in unconstrained coordinates.
    N, T : int
        Draws per iteration and number of iterations.
    seed : int
        Master seed; iteration ``t`` uses its own spawned stream.
    adapt : {"local", "all", "none"}
        Adapt from the current iteration only, from every draw so far, or
        keep the initial proposal.
    """
    if N < 2 or T < 1:
        raise ValueError("need N >= 2 and T >= 1")
    if init.D != space.D:
        raise ValueError("proposal dimension does not match the parameter space")
    if adapt not in ("local", "all", "none"):
        raise ValueError(f"unknown adaptation mode {adapt!r}")

    streams = np.random.SeedSequence(seed).spawn(T)
    proposal = init
    zs, thetas, lws, lts, its, ess_trace = [], [], [], [], [], []
    for t in range(T):
        rng = np.random.default_rng(streams[t])
        z = proposal.sample(rng, N)
        log_q = proposal.logpdf(z)
        theta = space.from_unconstrained(z)
        lt = np.full(N, -np.inf)
        ok = space.in_bounds(theta)
        if ok.any():
            lt[ok] = _evaluate(log_target, theta[ok], map_fn)
        lw = lt + space.log_jacobian(z) - log_q
        lw[~np.isfinite(lw)] = -np.inf
        if not np.isfinite(lw).any():
            raise AISError(
                f"iteration {t}: all {N} weights are zero ({int((~ok).sum())} out of bounds); "
                f"proposal mean (unconstrained) = {np.array2string(proposal.mean, precision=4)}")
        w = np.exp(lw - lw.max())
        ess_trace.append(float(w.sum() ** 2 / np.sum(w * w)))
        logger.debug("iteration %d: ESS %.1f / %d", t, ess_trace[-1], N)

        zs.append(z)
        thetas.append(theta)
        lws.append(lw)
        lts.append(lt)
        its.append(np.full(N, t))
        if t < T - 1 and adapt != "none":
            if adapt == "local":
                proposal = adapt_proposal(z, lw, proposal, ridge, min_shrink)
            else:
                proposal = adapt_proposal(np.vstack(zs), np.concatenate(lws), proposal, ridge,
                                          min_shrink)

    return WeightedSampleSet(space.names, np.vstack(thetas), np.concatenate(lws),
                             np.concatenate(lts), np.concatenate(its), tuple(ess_trace))


def ess(samples: WeightedSampleSet) -> float:
    """Effective sample size ``1 / sum(w**2)`` of the normalised weights."""
    w = samples.weights
    return float(1.0 / np.sum(w * w))


def resample(samples: WeightedSampleSet, n: int, seed: int):
    """Multinomial resampling; returns an ``(n, D)`` array of unweighted draws."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(samples), size=n, replace=True, p=samples.weights)
    return samples.samples[idx]


def weighted_quantile(x, w, q):
    """Smallest ``x`` whose cumulative normalised weight reaches ``q``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(q) - 1e-12, side="left")
    return x[order][np.minimum(idx, x.size - 1)]


@dataclasses.dataclass(frozen=True)
class SummaryStats:
    name: str
    mmse_mean: float
    map: float
    cred_lo: float
    cred_hi: float
    std: float
    cred_level: float

    @property
    def width(self):
        return self.cred_hi - self.cred_lo

    def as_dict(self):
        return dataclasses.asdict(self)


def summarize(samples: WeightedSampleSet, dim, cred_level: float = 0.9) -> SummaryStats:
    """Posterior mean (MMSE), MAP draw and equal-tailed credibility interval."""
    j = samples._dim(dim)
    x = samples.samples[:, j]
    w = samples.weights
    mean = float(w @ x)
    std = float(np.sqrt(max(w @ (x - mean) ** 2, 0.0)))
    best = samples.samples[np.argmax(samples.log_target), j]
    lo, hi = weighted_quantile(x, w, [(1 - cred_level) / 2, (1 + cred_level) / 2])
    return SummaryStats(samples.names[j], mean, float(best), float(lo), float(hi), std,
                        float(cred_level))


@dataclasses.dataclass(frozen=True)
class FullBayesCurve:
    grid: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    n_used: int
    n_skipped: int


def full_bayes_gp(samples: WeightedSampleSet, data, grid, decode: Callable,
                  min_weight: float = 0.0) -> FullBayesCurve:
    """Mixture of GP predictions over the weighted hyperparameter draws.

    ``decode`` maps a draw to ``(KernelSpec, sigma_e)``. Draws with normalised
    weight ``<= min_weight`` or that fail to decode/factorise are skipped and
    the remaining weights renormalised.
    """
    grid = np.asarray(grid, dtype=float)
    w = samples.weights
    means, variances, used_w = [], [], []
    skipped = 0
    for theta, wi in zip(samples.samples, w):
        if wi <= min_weight:
            continue
        try:
            spec, sigma_e = decode(theta)
            fit = gpmod.fit_gp(spec, sigma_e, data)
        except (ValueError, gpmod.GPError):
            skipped += 1
            continue
        m, v = gpmod.gp_predict(fit, grid)
        means.append(m)
        variances.append(v)
        used_w.append(wi)
    if not used_w:
        raise AISError("no usable hyperparameter draw for the full Bayesian curve")
    W = np.array(used_w)
    W /= W.sum()
    means = np.array(means)
    mu = W @ means
    var = W @ np.array(variances) + W @ (means - mu) ** 2
    return FullBayesCurve(grid, mu, np.maximum(var, 0.0), len(used_w), skipped)


def _fmt(v):
    return format(float(v), ".17g")


def write_samples(samples: WeightedSampleSet, path):
    header = ["iteration", *samples.names, "log_weight", "log_target"]
    lines = [",".join(header)]
    for it, row, lw, lt in zip(samples.iteration, samples.samples, samples.log_weights,
                               samples.log_target):
        lines.append(",".join([str(int(it)), *map(_fmt, row), _fmt(lw), _fmt(lt)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples(path) -> WeightedSampleSet:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if header[0] != "iteration" or header[-2:] != ["log_weight", "log_target"]:
        raise ValueError(f"{path}: not a weighted-sample file")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    return WeightedSampleSet(tuple(header[1:-2]), data[:, 1:-2], data[:, -2], data[:, -1],
                             data[:, 0].astype(int))


def log_uniform_box(bounds: Sequence) -> float:
    """Log density of independent uniform priors on finite ``bounds``."""
    return -float(sum(math.log(hi - lo) for lo, hi in bounds))
