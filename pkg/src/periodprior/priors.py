"""One-dimensional transferable priors fitted to posterior draws.

A prior fitted to the period marginal of the GP stage is written to disk and
read back by the parametric stage; the file is the only channel between the
two stages.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class PriorError(ValueError):
    """Invalid prior parameters, or a fit to degenerate samples."""


def _positive(name, v):
    v = float(v)
    if not (math.isfinite(v) and v > 0):
        raise PriorError(f"{name} must be finite and > 0, got {v!r}")
    return v


@dataclasses.dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise PriorError(f"uniform prior needs finite lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclasses.dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", _positive("sigma", self.sigma))


@dataclasses.dataclass(frozen=True)
class Laplace:
    mu: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "b", _positive("b", self.b))


@dataclasses.dataclass(frozen=True)
class KDE:
    """Equal-weight Gaussian kernel density estimate."""

    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).ravel()
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise PriorError("KDE centres must be a non-empty finite array")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "bandwidth", _positive("bandwidth", self.bandwidth))


@dataclasses.dataclass(frozen=True)
class Tempered:
    """``base`` raised to the power ``gamma`` (unnormalised)."""

    base: "PriorSpec"
    gamma: float = 1.0

    def __post_init__(self):
        g = float(self.gamma)
        if not (0 < g <= 1):
            raise PriorError(f"gamma must lie in (0, 1], got {g}")
        object.__setattr__(self, "gamma", g)


PriorSpec = Union[Uniform, Gaussian, Laplace, KDE, Tempered]


def log_prior(spec: PriorSpec, x):
    """Log density at ``x`` (scalar or array); ``-inf`` outside the support."""
    x_arr = np.asarray(x, dtype=float)
    if isinstance(spec, Uniform):
        inside = (x_arr >= spec.lo) & (x_arr <= spec.hi)
        out = np.where(inside, -math.log(spec.hi - spec.lo), -np.inf)
    elif isinstance(spec, Gaussian):
        r = (x_arr - spec.mu) / spec.sigma
        out = -0.5 * r * r - math.log(spec.sigma) - LOG_SQRT_2PI
    elif isinstance(spec, Laplace):
        out = -math.log(2 * spec.b) - np.abs(x_arr - spec.mu) / spec.b
    elif isinstance(spec, KDE):
        out = _kde_log_density(spec, x_arr)
    elif isinstance(spec, Tempered):
        out = spec.gamma * log_prior(spec.base, x_arr)
    else:
        raise PriorError(f"not a prior spec: {spec!r}")
    return float(out) if np.ndim(out) == 0 else out


def _kde_log_density(spec, x):
    flat = x.ravel()
    out = np.empty(flat.size)
    step = max(1, 2_000_000 // spec.centers.size)
    for i in range(0, flat.size, step):
        r = (flat[i:i + step, None] - spec.centers) / spec.bandwidth
        out[i:i + step] = logsumexp(-0.5 * r * r, axis=-1)
    out -= math.log(spec.centers.size) + math.log(spec.bandwidth) + LOG_SQRT_2PI
    return out.reshape(x.shape)


def _weights(samples, weights):
    x = np.asarray(samples, dtype=float).ravel()
    if weights is None:
        w = np.full(x.size, 1.0 / max(x.size, 1))
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0) or not w.sum() > 0:
            raise PriorError("weights must be non-negative, match samples and not all vanish")
        w = w / w.sum()
    if not np.all(np.isfinite(x)):
        raise PriorError("samples must be finite")
    return x, w


def normal_reference_bandwidth(samples) -> float:
    """``1.06 * std * n**(-1/5)``."""
    x = np.asarray(samples, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def fit_kde(samples) -> KDE:
    """Gaussian KDE on unweighted draws with the normal-reference bandwidth."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise PriorError(f"KDE needs at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise PriorError("samples must be finite")
    if np.std(x) == 0:
        raise PriorError("degenerate posterior: all samples identical")
    return KDE(x, normal_reference_bandwidth(x))


def fit_laplace(samples, weights=None) -> Laplace:
    """Maximum-likelihood Laplace fit: weighted median and mean absolute deviation."""
    x, w = _weights(samples, weights)
    if x.size < 2:
        raise PriorError("Laplace fit needs at least 2 samples")
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    mu = float(x[order][np.searchsorted(cw, 0.5 - 1e-12)])
    b = float(w @ np.abs(x - mu))
    if not b > 0:
        raise PriorError("degenerate posterior: zero absolute deviation")
    return Laplace(mu, b)


def fit_gaussian(samples, weights=None) -> Gaussian:
    """Weighted mean and (population) standard deviation."""
    x, w = _weights(samples, weights)
    if x.size < 2:
        raise PriorError("Gaussian fit needs at least 2 samples")
    mu = float(w @ x)
    sigma = float(np.sqrt(w @ (x - mu) ** 2))
    if not sigma > 0:
        raise PriorError("degenerate posterior: zero standard deviation")
    return Gaussian(mu, sigma)


def default_gamma(M: int) -> float:
    """Tempering exponent ``1 / (M + 1)`` for ``M`` observations."""
    if M < 1:
        raise PriorError("M must be >= 1")
    return 1.0 / (M + 1)


def temper(spec: PriorSpec, gamma: float) -> PriorSpec:
    return spec if gamma == 1.0 else Tempered(spec, gamma)


def support(spec: PriorSpec, n_scale: float = 12.0):
    """A finite interval holding all but a negligible part of the mass."""
    if isinstance(spec, Uniform):
        return spec.lo, spec.hi
    if isinstance(spec, Gaussian):
        return spec.mu - n_scale * spec.sigma, spec.mu + n_scale * spec.sigma
    if isinstance(spec, Laplace):
        return spec.mu - 3 * n_scale * spec.b, spec.mu + 3 * n_scale * spec.b
    if isinstance(spec, KDE):
        pad = n_scale * spec.bandwidth
        return float(spec.centers.min() - pad), float(spec.centers.max() + pad)
    if isinstance(spec, Tempered):
        lo, hi = support(spec.base, n_scale)
        if isinstance(spec.base, Uniform):
            return lo, hi
        # flattening by gamma widens the tails by about 1/gamma in scale
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) / spec.gamma
        return mid - half, mid + half
    raise PriorError(f"not a prior spec: {spec!r}")


def _grid_density(spec, n=4001):
    lo, hi = support(spec)
    x = np.linspace(lo, hi, n)
    lp = log_prior(spec, x)
    p = np.exp(lp - np.max(lp))
    p /= trapezoid(p, x)
    return x, p


def describe(spec: PriorSpec, cred_level: float = 0.9) -> dict:
    """Mean, standard deviation and equal-tailed interval of the normalised density."""
    x, p = _grid_density(spec)
    dx = np.diff(x)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * dx)])
    cdf /= cdf[-1]
    mean = float(np.sum(0.5 * (x[1:] * p[1:] + x[:-1] * p[:-1]) * dx))
    var = float(np.sum(0.5 * ((x[1:] - mean) ** 2 * p[1:] + (x[:-1] - mean) ** 2 * p[:-1]) * dx))
    lo, hi = np.interp([(1 - cred_level) / 2, (1 + cred_level) / 2], cdf, x)
    return {"mean": mean, "std": math.sqrt(max(var, 0.0)), "cred_lo": float(lo),
            "cred_hi": float(hi), "cred_level": cred_level}


def to_dict(spec: PriorSpec) -> dict:
    if isinstance(spec, Uniform):
        return {"type": "uniform", "lo": spec.lo, "hi": spec.hi}
    if isinstance(spec, Gaussian):
        return {"type": "gaussian", "mu": spec.mu, "sigma": spec.sigma}
    if isinstance(spec, Laplace):
        return {"type": "laplace", "mu": spec.mu, "b": spec.b}
    if isinstance(spec, KDE):
        return {"type": "kde", "bandwidth": spec.bandwidth, "centers": spec.centers.tolist()}
    if isinstance(spec, Tempered):
        return {"type": "tempered", "gamma": spec.gamma, "base": to_dict(spec.base)}
    raise PriorError(f"not a prior spec: {spec!r}")


def from_dict(d: dict) -> PriorSpec:
    kind = d.get("type")
    try:
        if kind == "uniform":
            return Uniform(d["lo"], d["hi"])
        if kind == "gaussian":
            return Gaussian(d["mu"], d["sigma"])
        if kind == "laplace":
            return Laplace(d["mu"], d["b"])
        if kind == "kde":
            return KDE(np.array(d["centers"], dtype=float), d["bandwidth"])
        if kind == "tempered":
            return Tempered(from_dict(d["base"]), d["gamma"])
    except KeyError as exc:
        raise PriorError(f"{kind} prior missing field {exc.args[0]!r}") from None
    raise PriorError(f"unknown prior type {kind!r}")


def save_prior(spec: PriorSpec, path, metadata: Optional[dict] = None):
    """Write the prior as JSON; floats round-trip exactly."""
    doc = {"prior": to_dict(spec)}
    if metadata:
        doc["metadata"] = metadata
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_prior(path):
    """Return ``(spec, metadata)`` from a file written by :func:`save_prior`."""
    doc = json.loads(Path(path).read_text())
    if "prior" not in doc:
        raise PriorError(f"{path}: no 'prior' entry")
    return from_dict(doc["prior"]), doc.get("metadata", {})
