"""Parametric periodic models and their white-noise Gaussian likelihood."""
from __future__ import annotations

import dataclasses
import math
from typing import Union

import numpy as np

from .timeseries import TimeSeries

TWO_PI = 2.0 * math.pi
LOG_2PI = math.log(TWO_PI)
KEPLER_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class SinusoidParams:
    """``A sin(2 pi t / P + phi) + b``."""

    A: float
    P: float
    phi: float
    b: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.A, self.P, self.phi, self.b)):
            raise ValueError("sinusoid parameters must be finite")
        if not self.P > 0:
            raise ValueError("period must be > 0")


@dataclasses.dataclass(frozen=True)
class KeplerParams:
    """Single-companion Keplerian radial-velocity curve.

    ``omega`` is the argument of periastron in radians and ``t_p`` the time
    of periastron passage.
    """

    V0: float
    K: float
    e: float
    omega: float
    P: float
    t_p: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in dataclasses.astuple(self)):
            raise ValueError("Keplerian parameters must be finite")
        if not (self.K > 0 and self.P > 0):
            raise ValueError("K and P must be > 0")
        if not 0 <= self.e < 1:
            raise ValueError("eccentricity must lie in [0, 1)")


@dataclasses.dataclass(frozen=True)
class NoiseModel:
    """White Gaussian noise of standard deviation ``sigma_s``.

    With ``use_point_sigmas`` the per-point uncertainties of the data are
    added in quadrature.
    """

    sigma_s: float
    use_point_sigmas: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.sigma_s) and self.sigma_s > 0):
            raise ValueError("sigma_s must be finite and > 0")


def sinusoid_eval(p: SinusoidParams, t):
    return p.A * np.sin(TWO_PI / p.P * np.asarray(t, dtype=float) + p.phi) + p.b


def solve_kepler(mean_anomaly, e: float, max_iter: int = 50):
    """Eccentric anomaly ``E`` with ``E - e sin E = mean_anomaly (mod 2 pi)``.

    Newton iteration from ``E0 = M`` (``pi`` when ``e > 0.8``); any element
    not converged to ``1e-12`` after ``max_iter`` steps is finished by
    bisection on ``[M - e, M + e]``. The result lies in ``[0, 2 pi)``.
    """
    if not 0 <= e < 1:
        raise ValueError("eccentricity must lie in [0, 1)")
    scalar = np.ndim(mean_anomaly) == 0
    M = np.mod(np.asarray(mean_anomaly, dtype=float), TWO_PI)
    M = np.where(M >= TWO_PI, 0.0, M)
    if e == 0:
        return float(M) if scalar else M

    E = np.full_like(M, math.pi) if e > 0.8 else M.copy()
    for _ in range(max_iter):
        f = E - e * np.sin(E) - M
        if np.all(np.abs(f) < 0.1 * KEPLER_TOL):
            break
        E = E - f / (1.0 - e * np.cos(E))
    resid = np.abs(E - e * np.sin(E) - M)
    bad = ~(resid < KEPLER_TOL)
    if np.any(bad):
        lo, hi = M[bad] - e, M[bad] + e
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            neg = mid - e * np.sin(mid) - M[bad] < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        E[bad] = 0.5 * (lo + hi)
    # Newton can step a hair outside the principal range near M = 0
    E = np.mod(E, TWO_PI)
    E = np.where(E >= TWO_PI, 0.0, E)
    return float(E) if scalar else E


def true_anomaly(E, e: float):
    """True anomaly on the branch continuous with ``E``."""
    half = 0.5 * np.asarray(E, dtype=float)
    u = 2.0 * np.arctan2(math.sqrt(1 + e) * np.sin(half), math.sqrt(1 - e) * np.cos(half))
    return float(u) if np.ndim(u) == 0 else u


def keplerian_rv(p: KeplerParams, t):
    t = np.asarray(t, dtype=float)
    x = (t - p.t_p) / p.P
    M = TWO_PI * (x - np.floor(x))
    u = true_anomaly(solve_kepler(M, p.e), p.e)
    return p.V0 + p.K * (np.cos(u + p.omega) + p.e * math.cos(p.omega))


# stage-2 parameter order used in sample files
PARAM_NAMES = {
    "sinusoid": ("A", "P", "phi", "b"),
    "kepler": ("V0", "K", "e", "omega", "P", "t_p"),
}
_CLASSES = {"sinusoid": SinusoidParams, "kepler": KeplerParams}


def from_vector(model: str, vec) -> Union[SinusoidParams, KeplerParams]:
    if model not in _CLASSES:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(_CLASSES)}")
    return _CLASSES[model](*(float(v) for v in vec))


def predict(params, t):
    if isinstance(params, SinusoidParams):
        return sinusoid_eval(params, t)
    if isinstance(params, KeplerParams):
        return keplerian_rv(params, t)
    raise TypeError(f"not a model parameter set: {params!r}")


def noise_variance(data: TimeSeries, noise: NoiseModel):
    var = np.full(data.M, noise.sigma_s ** 2)
    if noise.use_point_sigmas and data.sigmas is not None:
        var = var + data.sigmas ** 2
    return var


def log_likelihood(params, data: TimeSeries, noise: NoiseModel) -> float:
    """Sum of independent Gaussian log densities of the residuals."""
    var = noise_variance(data, noise)
    r = data.values - predict(params, data.times)
    return float(-0.5 * np.sum(r * r / var + np.log(var) + LOG_2PI))
