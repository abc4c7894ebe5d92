"""Stationary covariance functions and kernel-matrix assembly.

Every kernel depends on its inputs only through ``|t - z|``, so evaluation is
exactly symmetric. Composite kernels are binary trees of ``Product`` and
``Sum`` nodes over ``Periodic`` and ``SquaredExp`` leaves.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Union

import numpy as np

MAX_DEPTH = 8


class KernelError(ValueError):
    pass


def _check_positive(obj, *names):
    for name in names:
        v = getattr(obj, name)
        try:
            v = float(v)
        except (TypeError, ValueError):
            v = math.nan
        if not (math.isfinite(v) and v > 0):
            raise KernelError(f"{type(obj).__name__}.{name} must be finite and > 0, "
                              f"got {getattr(obj, name)!r}")
        object.__setattr__(obj, name, v)


@dataclasses.dataclass(frozen=True)
class Periodic:
    """Exponential sine squared kernel ``A exp(-2 sin^2(pi |t-z| / P) / L)``.

    ``L`` divides the squared sine directly. Writing it as ``l**2`` (as is
    common for the additive quasi-periodic kernel) is a relabelling of the
    same family.
    """

    A: float
    P: float
    L: float

    def __post_init__(self):
        _check_positive(self, "A", "P", "L")

    def of_lag(self, tau):
        s = np.sin(np.pi * np.abs(tau) / self.P)
        return self.A * np.exp(-2.0 * s * s / self.L)

    @property
    def depth(self):
        return 1


@dataclasses.dataclass(frozen=True)
class SquaredExp:
    """Squared exponential kernel ``s2 exp(-|t-z|^2 / (2 l^2))``."""

    s2: float
    l: float  # noqa: E741

    def __post_init__(self):
        _check_positive(self, "s2", "l")

    def of_lag(self, tau):
        tau = np.abs(tau)
        return self.s2 * np.exp(-(tau * tau) / (2.0 * self.l * self.l))

    @property
    def depth(self):
        return 1


@dataclasses.dataclass(frozen=True)
class Product:
    left: "KernelSpec"
    right: "KernelSpec"

    def __post_init__(self):
        if self.depth > MAX_DEPTH:
            raise KernelError(f"kernel tree deeper than {MAX_DEPTH}")

    def of_lag(self, tau):
        return self.left.of_lag(tau) * self.right.of_lag(tau)

    @property
    def depth(self):
        return 1 + max(self.left.depth, self.right.depth)


@dataclasses.dataclass(frozen=True)
class Sum:
    left: "KernelSpec"
    right: "KernelSpec"

    def __post_init__(self):
        if self.depth > MAX_DEPTH:
            raise KernelError(f"kernel tree deeper than {MAX_DEPTH}")

    def of_lag(self, tau):
        return self.left.of_lag(tau) + self.right.of_lag(tau)

    @property
    def depth(self):
        return 1 + max(self.left.depth, self.right.depth)


KernelSpec = Union[Periodic, SquaredExp, Product, Sum]


def eval_kernel(spec: KernelSpec, t, z):
    """Covariance between inputs ``t`` and ``z`` (broadcasting)."""
    return spec.of_lag(np.subtract(t, z))


def prior_variance(spec: KernelSpec) -> float:
    """``k(t, t)``, identical for every ``t`` since all kernels are stationary."""
    return float(spec.of_lag(0.0))


def cross_matrix(spec: KernelSpec, t_a, t_b):
    """``K[i, j] = k(t_a[i], t_b[j])``."""
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    return spec.of_lag(t_a[:, None] - t_b[None, :])


def kernel_matrix(spec: KernelSpec, times, sigma_e: float = 0.0):
    """Kernel matrix with ``sigma_e**2`` added on the diagonal.

    Raises
    ------
    KernelError
        If any entry is not finite.
    """
    if sigma_e < 0:
        raise KernelError("sigma_e must be >= 0")
    times = np.asarray(times, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        K = cross_matrix(spec, times, times)
    if sigma_e:
        K[np.diag_indices_from(K)] += sigma_e * sigma_e
    if not np.all(np.isfinite(K)):
        raise KernelError("kernel matrix has non-finite entries")
    return K


_LEAVES = {"periodic": (Periodic, ("A", "P", "L")),
           "squared_exp": (SquaredExp, ("s2", "l"))}
_NODES = {"product": Product, "sum": Sum}


def to_dict(spec: KernelSpec) -> dict:
    """Nested plain-dict form with a ``type`` discriminator."""
    for name, (cls, fields) in _LEAVES.items():
        if isinstance(spec, cls):
            return {"type": name, **{f: getattr(spec, f) for f in fields}}
    for name, cls in _NODES.items():
        if isinstance(spec, cls):
            return {"type": name, "left": to_dict(spec.left), "right": to_dict(spec.right)}
    raise KernelError(f"not a kernel spec: {spec!r}")


def from_dict(d: dict) -> KernelSpec:
    kind = d.get("type")
    if kind in _LEAVES:
        cls, fields = _LEAVES[kind]
        extra = set(d) - set(fields) - {"type"}
        if extra:
            raise KernelError(f"unknown field(s) {sorted(extra)} for {kind} kernel")
        try:
            return cls(**{f: d[f] for f in fields})
        except KeyError as exc:
            raise KernelError(f"{kind} kernel missing field {exc.args[0]!r}") from None
    if kind in _NODES:
        return _NODES[kind](from_dict(d["left"]), from_dict(d["right"]))
    raise KernelError(f"unknown kernel type {kind!r}")
