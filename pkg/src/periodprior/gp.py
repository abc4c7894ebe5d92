"""Exact zero-mean Gaussian-process regression via Cholesky factorisation."""
from __future__ import annotations

import dataclasses
import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import kernels as kern
from .kernels import KernelSpec
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
JITTER = 1e-10


class GPError(ValueError):
    """Kernel matrix could not be factorised for the given hyperparameters."""


def _factor(K, sigma_e):
    if sigma_e == 0.0:
        K = K.copy()
        K[np.diag_indices_from(K)] += JITTER * float(np.mean(np.diag(K)))
    try:
        return linalg.cholesky(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise GPError(f"kernel matrix not positive definite: {exc}") from None


@dataclasses.dataclass(frozen=True)
class GPFit:
    """A GP conditioned on ``data``.

    ``chol`` is the lower Cholesky factor of ``K + sigma_e**2 I`` (plus a tiny
    jitter when ``sigma_e == 0``) and ``alpha`` solves ``K_tot alpha = y``.
    """

    spec: KernelSpec
    sigma_e: float
    alpha: np.ndarray
    chol: np.ndarray
    data: TimeSeries

    def predict(self, t_star):
        return gp_predict(self, t_star)


def fit_gp(spec: KernelSpec, sigma_e: float, data: TimeSeries) -> GPFit:
    if sigma_e < 0:
        raise GPError("sigma_e must be >= 0")
    K = kern.kernel_matrix(spec, data.times, sigma_e)
    chol = _factor(K, sigma_e)
    alpha = linalg.cho_solve((chol, True), data.values, check_finite=False)
    alpha.setflags(write=False)
    chol.setflags(write=False)
    return GPFit(spec, float(sigma_e), alpha, chol, data)


# running total of clamped predictive variances (diagnostic only)
CLAMP_COUNTER = {"n": 0}


def gp_predict(fit: GPFit, t_star):
    """Predictive mean and variance at ``t_star`` (scalar or array).

    The variance is clamped at zero; it does not depend on the observed
    values.
    """
    scalar = np.ndim(t_star) == 0
    t_star = np.atleast_1d(np.asarray(t_star, dtype=float))
    Ks = kern.cross_matrix(fit.spec, t_star, fit.data.times)  # (G, M)
    mean = Ks @ fit.alpha
    v = linalg.solve_triangular(fit.chol, Ks.T, lower=True, check_finite=False)
    var = kern.prior_variance(fit.spec) - np.einsum("ij,ij->j", v, v)
    n_neg = int(np.count_nonzero(var < 0))
    if n_neg:
        CLAMP_COUNTER["n"] += n_neg
        logger.debug("clamped %d negative predictive variance(s)", n_neg)
        var = np.maximum(var, 0.0)
    if scalar:
        return float(mean[0]), float(var[0])
    return mean, var


def _log_normal_zero(K, y, sigma_e):
    try:
        chol = _factor(K, sigma_e)
    except GPError:
        return -math.inf
    alpha = linalg.cho_solve((chol, True), y, check_finite=False)
    val = (-0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(chol))))
           - 0.5 * y.size * LOG_2PI)
    return val if math.isfinite(val) else -math.inf


def log_marginal_likelihood(spec: KernelSpec, sigma_e: float, data: TimeSeries) -> float:
    """``log N(y | 0, K + sigma_e**2 I)``; ``-inf`` if the matrix cannot be factorised."""
    try:
        K = kern.kernel_matrix(spec, data.times, sigma_e)
    except kern.KernelError:
        return -math.inf
    return _log_normal_zero(K, data.values, sigma_e)


def _periodic(A, P, L):
    return kern.Periodic(A, P, L)


def _quasi_periodic(A, P, L, l):  # noqa: E741
    return kern.Product(kern.Periodic(A, P, L), kern.SquaredExp(1.0, l))


def _quasi_periodic_sum(s1, P, L, s2, l):  # noqa: E741
    return kern.Sum(kern.Periodic(s1, P, L), kern.SquaredExp(s2, l))


# name -> (builder, hyperparameter names in vector order)
FAMILIES = {
    "periodic": (_periodic, ("A", "P", "L")),
    "quasi_periodic": (_quasi_periodic, ("A", "P", "L", "l")),
    "quasi_periodic_sum": (_quasi_periodic_sum, ("s1", "P", "L", "s2", "l")),
}


@dataclasses.dataclass(frozen=True)
class HyperModel:
    """Maps a hyperparameter vector onto a kernel and a noise level.

    With ``sigma_e=None`` the noise level is the last entry of the vector;
    otherwise it is held fixed.
    """

    family: str
    sigma_e: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; "
                             f"choose from {sorted(FAMILIES)}")
        if self.sigma_e is not None and self.sigma_e < 0:
            raise ValueError("fixed sigma_e must be >= 0")

    @property
    def names(self) -> tuple:
        names = FAMILIES[self.family][1]
        return names + ("sigma_e",) if self.sigma_e is None else names

    def build(self, theta: Sequence[float]):
        builder, names = FAMILIES[self.family]
        theta = [float(v) for v in theta]
        spec = builder(*theta[:len(names)])
        sigma_e = theta[len(names)] if self.sigma_e is None else self.sigma_e
        if not (sigma_e >= 0 and math.isfinite(sigma_e)):
            raise GPError(f"invalid sigma_e {sigma_e!r}")
        return spec, sigma_e

    def log_likelihood_fn(self, data: TimeSeries):
        """Return ``theta -> log marginal likelihood`` with lags precomputed."""
        lags = data.times[:, None] - data.times[None, :]
        y = np.array(data.values)
        diag = np.diag_indices(data.M)

        def loglik(theta):
            try:
                spec, sigma_e = self.build(theta)
            except (kern.KernelError, GPError):
                return -math.inf
            with np.errstate(over="ignore", invalid="ignore"):
                K = spec.of_lag(lags)
            if not np.all(np.isfinite(K)):
                return -math.inf
            K[diag] += sigma_e * sigma_e
            return _log_normal_zero(K, y, sigma_e)

        return loglik
