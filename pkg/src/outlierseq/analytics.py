"""Closed-form divergences and error-exponent expressions.

These are the reference values the simulations are checked against:
KL divergence, Bhattacharyya and Chernoff distances, the exact squared MMD,
and the lower bounds on the error exponents of the three detectors.
Gaussian pairs use closed forms; everything else falls back to adaptive
quadrature on the (finite or infinite) support.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy import integrate

from .distributions import DistributionSpec, Gaussian, Uniform, density_ratio_bounds
from .errors import DivergenceInfinite, UnboundedRatio
from .mmd_estimator import GaussianKernel

__all__ = [
    "ExponentReport",
    "kl_divergence",
    "bhattacharyya",
    "chernoff_distance",
    "mmd_squared_exact",
    "exponent_ml",
    "bound_kl_estimator",
    "bound_kl_test",
    "bound_mmd_test",
    "exponent_report",
]

_QUAD = dict(epsabs=1e-12, epsrel=1e-12, limit=400)


def _common_window(p: DistributionSpec, q: DistributionSpec) -> tuple[float, float]:
    lo = min(p.support[0], q.support[0])
    hi = max(p.support[1], q.support[1])
    return lo, hi


def _quad(f, lo: float, hi: float, points=None) -> float:
    if math.isfinite(lo) and math.isfinite(hi):
        return integrate.quad(f, lo, hi, points=points, **_QUAD)[0]
    return integrate.quad(f, lo, hi, **_QUAD)[0]


def _support_inside(p: DistributionSpec, q: DistributionSpec) -> bool:
    return q.support[0] <= p.support[0] and p.support[1] <= q.support[1]


def kl_divergence(mu: DistributionSpec, pi: DistributionSpec) -> float:
    """``D(mu || pi)``; raises :class:`DivergenceInfinite` unless supp(mu) is inside supp(pi)."""
    if not _support_inside(mu, pi):
        raise DivergenceInfinite(f"support {mu.support} not contained in {pi.support}")
    if mu == pi:
        return 0.0
    if isinstance(mu, Gaussian) and isinstance(pi, Gaussian):
        r = mu.variance / pi.variance
        return 0.5 * (r - 1.0 - math.log(r) + (mu.mean - pi.mean) ** 2 / pi.variance)
    if isinstance(mu, Uniform) and isinstance(pi, Uniform):
        return math.log(pi.width / mu.width)
    lo, hi = mu.support

    def integrand(y):
        lp = float(mu.logpdf(y))
        return 0.0 if lp == -math.inf else math.exp(lp) * (lp - float(pi.logpdf(y)))

    return max(_quad(integrand, lo, hi), 0.0)


def chernoff_distance(p: DistributionSpec, q: DistributionSpec, lam: float) -> float:
    """``-log int p**lam * q**(1 - lam)`` for ``lam`` in (0, 1)."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if p == q:
        return 0.0
    lo, hi = _common_window(p, q)
    cuts = sorted({v for v in (*p.support, *q.support) if math.isfinite(v) and lo < v < hi}) or None

    def integrand(y):
        return math.exp(lam * float(p.logpdf(y)) + (1.0 - lam) * float(q.logpdf(y)))

    overlap = _quad(integrand, lo, hi, points=cuts)
    return math.inf if overlap <= 0 else -math.log(overlap)


def bhattacharyya(pi: DistributionSpec, mu: DistributionSpec) -> float:
    """``-log int sqrt(mu * pi)``; symmetric in its arguments."""
    if pi == mu:
        return 0.0
    if isinstance(pi, Gaussian) and isinstance(mu, Gaussian):
        v = pi.variance + mu.variance
        return (mu.mean - pi.mean) ** 2 / (4.0 * v) + 0.5 * math.log(
            v / (2.0 * math.sqrt(pi.variance * mu.variance)))
    return chernoff_distance(pi, mu, 0.5)


def _cross_mean(kernel: GaussianKernel, p: DistributionSpec, q: DistributionSpec) -> float:
    # E k(X, Y), X ~ p, Y ~ q
    if isinstance(p, Gaussian) and isinstance(q, Gaussian):
        s2 = kernel.gamma**2 + p.variance + q.variance
        return kernel.gamma / math.sqrt(s2) * math.exp(-((p.mean - q.mean) ** 2) / (2.0 * s2))
    lo, hi = p.support
    return _quad(lambda x: float(kernel.mean_against(x, q) * p.pdf(x)), lo, hi)


def mmd_squared_exact(mu: DistributionSpec, pi: DistributionSpec, gamma: float = 1.0) -> float:
    """Population ``MMD^2[mu, pi]`` under the Gaussian kernel of bandwidth ``gamma``."""
    if mu == pi:
        return 0.0
    kernel = GaussianKernel(gamma)
    value = kernel.double_mean(mu) + kernel.double_mean(pi) - 2.0 * _cross_mean(kernel, mu, pi)
    return max(value, 0.0)


def exponent_ml(pi: DistributionSpec, mu: DistributionSpec) -> float:
    """Error exponent of the likelihood test with both laws known: ``2 B(pi, mu)``."""
    return 2.0 * bhattacharyya(pi, mu)


def bound_kl_estimator(k1: float, k2: float, eps: float) -> float:
    """Floor on the decay rate of ``P{|D_hat - D| > eps}``: ``(k1/k2)**2 eps**2 / 32``."""
    return (k1 / k2) ** 2 * eps**2 / 32.0


def bound_kl_test(pi: DistributionSpec, mu: DistributionSpec, k1: float, k2: float) -> float:
    """Floor on the KL test exponent: ``(k1 / (k1 + k2))**2 D(mu||pi)**2 / 32``."""
    d = kl_divergence(mu, pi)
    return (k1 / (k1 + k2)) ** 2 * d * d / 32.0


def bound_mmd_test(pi: DistributionSpec, mu: DistributionSpec, gamma: float = 1.0,
                   kernel_bound: float = 1.0) -> float:
    """Floor on the MMD test exponent: ``MMD[mu, pi]**4 / (9 K**2)``."""
    m2 = mmd_squared_exact(mu, pi, gamma)
    return m2 * m2 / (9.0 * kernel_bound**2)


@dataclass(frozen=True)
class ExponentReport:
    """Theoretical quantities for one ``(pi, mu)`` pair.

    ``kl_test_lower_bound`` and the ratio bounds are ``None`` when the
    density ratio is unbounded, where the KL test bound does not apply.
    """

    kl_divergence: float
    bhattacharyya: float
    ml_exponent: float
    mmd_squared: float
    mmd_test_lower_bound: float
    kl_test_lower_bound: float | None
    k1: float | None
    k2: float | None
    gamma: float

    def to_dict(self) -> dict:
        return asdict(self)


def exponent_report(pi: DistributionSpec, mu: DistributionSpec, gamma: float = 1.0) -> ExponentReport:
    try:
        bounds = density_ratio_bounds(mu, pi)
        k1, k2 = bounds.k1, bounds.k2
        kl_bound = bound_kl_test(pi, mu, k1, k2)
    except UnboundedRatio:
        k1 = k2 = kl_bound = None
    return ExponentReport(
        kl_divergence=kl_divergence(mu, pi),
        bhattacharyya=bhattacharyya(pi, mu),
        ml_exponent=exponent_ml(pi, mu),
        mmd_squared=mmd_squared_exact(mu, pi, gamma),
        mmd_test_lower_bound=bound_mmd_test(pi, mu, gamma),
        kl_test_lower_bound=kl_bound,
        k1=k1,
        k2=k2,
        gamma=gamma,
    )
