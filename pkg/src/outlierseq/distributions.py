"""Univariate continuous distributions used as the typical and outlier laws.

Three families are supported: Gaussian, Gaussian truncated to a finite
interval, and Uniform.  Every family exposes the same vectorised surface
(``pdf``, ``logpdf``, ``cdf``, ``sf``, ``quantile``) and is sampled only by
the inverse-cdf transform, so one uniform stream drives every family.

Interval endpoints use ``math.inf`` / ``-math.inf`` for unbounded ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigInvalid, UnboundedRatio

__all__ = [
    "Gaussian",
    "TruncatedGaussian",
    "Uniform",
    "DistributionSpec",
    "DensityRatioBounds",
    "pdf",
    "interval_prob",
    "cell_masses",
    "sample",
    "density_ratio_bounds",
    "parse_distribution",
    "distribution_to_dict",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class UniformSource(Protocol):
    def random(self, size): ...


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ConfigInvalid("variance", "must be > 0")
        if not math.isfinite(self.mean):
            raise ConfigInvalid("mean", "must be finite")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    @property
    def median(self) -> float:
        return self.mean

    def _z(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def logpdf(self, y):
        z = self._z(y)
        return -0.5 * z * z - _LOG_SQRT_2PI - math.log(self.std)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        return ndtr(self._z(y))

    def sf(self, y):
        return ndtr(-self._z(y))

    def quantile(self, u):
        return self.mean + self.std * ndtri(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian ``N(mean, variance)`` conditioned on ``[lower, upper]``."""

    mean: float
    variance: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ConfigInvalid("variance", "must be > 0")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ConfigInvalid("lower", "truncation bounds must be finite")
        if not self.lower < self.upper:
            raise ConfigInvalid("lower", "must be < upper")
        if self._mass <= 0:
            raise ConfigInvalid("lower", "truncation interval carries no Gaussian mass")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def support(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def _alpha(self) -> float:
        return (self.lower - self.mean) / self.std

    @property
    def _beta(self) -> float:
        return (self.upper - self.mean) / self.std

    @property
    def _upper_tail(self) -> bool:
        # Work with survival functions when the interval sits right of the mean.
        return self._alpha > 0

    @property
    def _mass(self) -> float:
        if self._upper_tail:
            return float(ndtr(-self._alpha) - ndtr(-self._beta))
        return float(ndtr(self._beta) - ndtr(self._alpha))

    @property
    def median(self) -> float:
        return float(self.quantile(0.5))

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        z = (y - self.mean) / self.std
        inside = (y >= self.lower) & (y <= self.upper)
        val = -0.5 * z * z - _LOG_SQRT_2PI - math.log(self.std) - math.log(self._mass)
        return np.where(inside, val, -np.inf)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        y = np.clip(np.asarray(y, dtype=float), self.lower, self.upper)
        z = (y - self.mean) / self.std
        if self._upper_tail:
            val = (ndtr(-self._alpha) - ndtr(-z)) / self._mass
        else:
            val = (ndtr(z) - ndtr(self._alpha)) / self._mass
        return np.clip(val, 0.0, 1.0)

    def sf(self, y):
        y = np.clip(np.asarray(y, dtype=float), self.lower, self.upper)
        z = (y - self.mean) / self.std
        if self._upper_tail:
            val = (ndtr(-z) - ndtr(-self._beta)) / self._mass
        else:
            val = (ndtr(self._beta) - ndtr(z)) / self._mass
        return np.clip(val, 0.0, 1.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self._upper_tail:
            z = -ndtri(ndtr(-self._alpha) - u * self._mass)
        else:
            z = ndtri(ndtr(self._alpha) + u * self._mass)
        return np.clip(self.mean + self.std * z, self.lower, self.upper)


@dataclass(frozen=True)
class Uniform:
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ConfigInvalid("lower", "bounds must be finite")
        if not self.lower < self.upper:
            raise ConfigInvalid("lower", "must be < upper")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def support(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def median(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= self.lower) & (y <= self.upper)
        return np.where(inside, -math.log(self.width), -np.inf)

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= self.lower) & (y <= self.upper)
        return np.where(inside, 1.0 / self.width, 0.0)

    def cdf(self, y):
        return np.clip((np.asarray(y, dtype=float) - self.lower) / self.width, 0.0, 1.0)

    def sf(self, y):
        return np.clip((self.upper - np.asarray(y, dtype=float)) / self.width, 0.0, 1.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return np.clip(self.lower + u * self.width, self.lower, self.upper)


DistributionSpec = Union[Gaussian, TruncatedGaussian, Uniform]


@dataclass(frozen=True)
class DensityRatioBounds:
    """Constants with ``k1 <= dmu/dpi <= k2`` on the common support."""

    k1: float
    k2: float
    approximate: bool = False


def pdf(d: DistributionSpec, y):
    """Density of ``d`` at ``y``; zero outside the support."""
    out = d.pdf(y)
    return float(out) if np.ndim(out) == 0 else out


def interval_prob(d: DistributionSpec, a: float, b: float) -> float:
    """Probability that ``d`` assigns to the interval from ``a`` to ``b``.

    Either end may be infinite.  The whole line has probability exactly 1.
    """
    if a > b:
        raise ValueError(f"interval endpoints out of order: {a} > {b}")
    if a == -math.inf and b == math.inf:
        return 1.0
    return float(cell_masses(d, np.array([a, b]))[1])


def cell_masses(d: DistributionSpec, boundaries) -> np.ndarray:
    """Masses of the cells ``(-inf, b1], (b1, b2], ..., (b_last, inf)``.

    ``boundaries`` has shape ``(..., k)`` and must be sorted along the last
    axis; the result has shape ``(..., k + 1)``.  Cells right of the median
    are differenced through the survival function so tail masses keep their
    relative precision.
    """
    b = np.asarray(boundaries, dtype=float)
    cdf_b = d.cdf(b)
    sf_b = d.sf(b)
    pad = [(0, 0)] * (b.ndim - 1)
    lower_edge = np.pad(b, pad + [(1, 0)], constant_values=-np.inf)
    cdf_lo = np.pad(cdf_b, pad + [(1, 0)], constant_values=0.0)
    cdf_hi = np.pad(cdf_b, pad + [(0, 1)], constant_values=1.0)
    sf_lo = np.pad(sf_b, pad + [(1, 0)], constant_values=1.0)
    sf_hi = np.pad(sf_b, pad + [(0, 1)], constant_values=0.0)
    mass = np.where(lower_edge >= d.median, sf_lo - sf_hi, cdf_hi - cdf_lo)
    return np.maximum(mass, 0.0)


def sample(d: DistributionSpec, n: int, rng: UniformSource) -> np.ndarray:
    """Draw ``n`` i.i.d. values from ``d`` by inverting ``rng.random(n)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return d.quantile(rng.random(n))


def _quadratic_log_coeffs(d: DistributionSpec) -> tuple[float, float]:
    # log pdf = -prec * (y - mean)**2 / 2 + const on the support
    if isinstance(d, Uniform):
        return 0.0, 0.0
    return 1.0 / d.variance, d.mean


def density_ratio_bounds(mu: DistributionSpec, pi: DistributionSpec) -> DensityRatioBounds:
    """Infimum and supremum of ``dmu/dpi`` over the common support.

    Both laws must live on the same bounded interval (or be identical).
    On such an interval the log-ratio of any two supported families is a
    quadratic, so its extremes sit at the endpoints or the vertex and the
    result is exact.
    """
    if mu == pi:
        return DensityRatioBounds(1.0, 1.0)
    if mu.support != pi.support:
        raise UnboundedRatio(f"supports differ: {mu.support} vs {pi.support}")
    lo, hi = mu.support
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UnboundedRatio("ratio of distinct Gaussians is unbounded on the real line")
    points = [lo, hi]
    p_mu, m_mu = _quadratic_log_coeffs(mu)
    p_pi, m_pi = _quadratic_log_coeffs(pi)
    if p_mu != p_pi:
        vertex = (p_mu * m_mu - p_pi * m_pi) / (p_mu - p_pi)
        if lo < vertex < hi:
            points.append(vertex)
    log_ratio = mu.logpdf(np.array(points)) - pi.logpdf(np.array(points))
    return DensityRatioBounds(float(np.exp(log_ratio.min())), float(np.exp(log_ratio.max())))


_KINDS = {
    "gaussian": (Gaussian, ("mean", "variance")),
    "truncated_gaussian": (TruncatedGaussian, ("mean", "variance", "lower", "upper")),
    "uniform": (Uniform, ("lower", "upper")),
}


def parse_distribution(obj: dict, field: str = "distribution") -> DistributionSpec:
    """Build a distribution from a mapping such as
    ``{"kind": "gaussian", "mean": 0, "variance": 1}``.

    Unknown or missing keys raise :class:`ConfigInvalid` naming ``field``.
    """
    if not isinstance(obj, dict):
        raise ConfigInvalid(field, "must be a table with a 'kind' key")
    kind = obj.get("kind")
    if kind not in _KINDS:
        raise ConfigInvalid(f"{field}.kind", f"must be one of {sorted(_KINDS)}, got {kind!r}")
    cls, keys = _KINDS[kind]
    extra = set(obj) - set(keys) - {"kind"}
    if extra:
        raise ConfigInvalid(f"{field}.{sorted(extra)[0]}", "unknown key")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ConfigInvalid(f"{field}.{missing[0]}", "missing")
    values = {}
    for k in keys:
        v = obj[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigInvalid(f"{field}.{k}", "must be a number")
        values[k] = float(v)
    try:
        return cls(**values)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{field}.{exc.field}", exc.reason) from None


def distribution_to_dict(d: DistributionSpec) -> dict:
    for kind, (cls, keys) in _KINDS.items():
        if type(d) is cls:
            return {"kind": kind, **{k: getattr(d, k) for k in keys}}
    raise TypeError(f"not a distribution: {d!r}")
