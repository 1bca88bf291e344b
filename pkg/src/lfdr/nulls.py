"""Null distribution estimates: theoretical N(0, 1), central matching, MLE fitting.

All three return a :class:`NullModel` holding the null mean and standard
deviation and the null proportion ``p0``. The raw ``p0`` may exceed 1 (an
impossible value that is still diagnostic); ``capped_p0`` is what the fdr
calculations use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import special, stats

from .density import MixtureDensityFit
from .errors import (
    DegenerateNullError,
    InvalidConfigError,
    InvalidInputError,
    NoNullPeakError,
    NonConvergenceError,
)
from .ingest import ZSample

THEORETICAL = "theoretical"
CENTRAL_MATCHING = "central-matching"
MLE = "mle"

DEFAULT_CENTRAL_FRACTION = 0.25
DEFAULT_X0 = 2.0
MIN_CENTRAL_BINS = 5
MIN_N0 = 25
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class ImpossibleP0Warning(UserWarning):
    """Estimated null proportion above 1."""


@dataclass(frozen=True)
class NullModel:
    delta0: float
    sigma0: float
    p0: float
    method: str
    meta: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidInputError("null standard deviation must be positive")
        if not self.p0 > 0:
            raise InvalidInputError("null proportion must be positive")
        if self.method == THEORETICAL and (self.delta0 != 0 or self.sigma0 != 1):
            raise InvalidInputError("theoretical null is N(0, 1)")

    @property
    def capped_p0(self) -> float:
        return min(self.p0, 1.0)

    def log_subdensity(self, z, capped: bool = True):
        """log of p0 * phi((z - delta0) / sigma0) / sigma0."""
        p0 = self.capped_p0 if capped else self.p0
        return math.log(p0) + stats.norm.logpdf(z, self.delta0, self.sigma0)

    def cdf(self, z):
        return stats.norm.cdf(z, self.delta0, self.sigma0)

    def sf(self, z):
        return stats.norm.sf(z, self.delta0, self.sigma0)


def _check_p0(p0, label):
    if p0 > 1:
        msg = f"{label}: estimated null proportion {p0:.3f} exceeds 1; capped at 1 downstream"
        warnings.warn(msg, ImpossibleP0Warning, stacklevel=3)
        return (msg,)
    return ()


def central_bins(fit: MixtureDensityFit, central_fraction: float = DEFAULT_CENTRAL_FRACTION) -> np.ndarray:
    """Indices of the bins whose centers lie strictly between the
    ``central_fraction`` and ``1 - central_fraction`` quantiles of the counts."""
    if not 0 < central_fraction < 0.5:
        raise InvalidConfigError(f"central_fraction must be in (0, 0.5), got {central_fraction}")
    x = fit.centers
    y = np.asarray(fit.counts.counts, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(y)]) / y.sum()
    lo, hi = np.interp([central_fraction, 1 - central_fraction], cum, fit.counts.edges)
    i0 = np.flatnonzero((x > lo) & (x < hi))
    if i0.size < MIN_CENTRAL_BINS:
        raise InvalidConfigError(
            f"only {i0.size} central bins between {lo:.3g} and {hi:.3g}; need {MIN_CENTRAL_BINS}"
        )
    return i0


def quadratic_to_null(beta0, beta1, beta2):
    """Map ``log p0 phi_{delta,sigma}(z) = beta0 + beta1 z + beta2 z^2`` to (p0, delta0, sigma0)."""
    if not beta2 < 0:
        raise NoNullPeakError(f"log density is not concave at the center (curvature {beta2:.3g})")
    sigma0 = (-2.0 * beta2) ** -0.5
    delta0 = beta1 * sigma0**2
    log_p0 = beta0 + 0.5 * (delta0**2 / sigma0**2 + math.log(2 * math.pi * sigma0**2))
    return math.exp(log_p0), delta0, sigma0


def central_matching(fit: MixtureDensityFit, central_fraction: float = DEFAULT_CENTRAL_FRACTION,
                     i0=None) -> NullModel:
    """Empirical null from a least-squares quadratic fit to log f over the central bins."""
    if i0 is None:
        i0 = central_bins(fit, central_fraction)
    i0 = np.asarray(i0)
    x = fit.centers[i0]
    x0 = np.column_stack([np.ones_like(x), x, x * x])
    coef, *_ = np.linalg.lstsq(x0, fit.log_density[i0], rcond=None)
    p0, delta0, sigma0 = quadratic_to_null(*coef)
    warn = _check_p0(p0, "central matching")
    meta = {"i0": i0, "coef": tuple(float(c) for c in coef), "central_fraction": central_fraction}
    return NullModel(float(delta0), float(sigma0), float(p0), CENTRAL_MATCHING, meta, warn)


def theoretical_null(fit: MixtureDensityFit, central_fraction: float = DEFAULT_CENTRAL_FRACTION,
                     i0=None) -> NullModel:
    """N(0, 1) null; ``p0`` from the central-bin regression with only the intercept free."""
    if i0 is None:
        i0 = central_bins(fit, central_fraction)
    i0 = np.asarray(i0)
    x = fit.centers[i0]
    resid = fit.log_density[i0] + 0.5 * x * x + LOG_SQRT_2PI
    p0 = math.exp(float(np.mean(resid)))
    warn = _check_p0(p0, "theoretical null")
    meta = {"i0": i0, "central_fraction": central_fraction}
    return NullModel(0.0, 1.0, p0, THEORETICAL, meta, warn)


@dataclass(frozen=True)
class TruncatedMoments:
    """Moments of N(delta0, sigma0^2) restricted to [-x0, x0].

    ``H[p]`` is the integral of ``z^p phi(z)`` over the standardized interval
    ``[a, b]`` for p = 0..4; ``E[p-1]`` is the conditional expectation of
    ``Z^p`` on the original scale for p = 1..4.
    """

    a: float
    b: float
    H: np.ndarray
    E: np.ndarray


def _std_mass(a, b):
    # Phi(b) - Phi(a) without cancellation in either tail
    if a > 0:
        return special.ndtr(-a) - special.ndtr(-b)
    return special.ndtr(b) - special.ndtr(a)


def truncated_moments(delta0: float, sigma0: float, x0: float) -> TruncatedMoments:
    if not sigma0 > 0 or not x0 > 0:
        raise InvalidInputError("need sigma0 > 0 and x0 > 0")
    a = (-x0 - delta0) / sigma0
    b = (x0 - delta0) / sigma0
    phi_a = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    phi_b = math.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    h = np.empty(5)
    h[0] = _std_mass(a, b)
    h[1] = phi_a - phi_b
    for p in range(2, 5):
        h[p] = -(b ** (p - 1) * phi_b - a ** (p - 1) * phi_a) + (p - 1) * h[p - 2]
    e = np.empty(4)
    for p in range(1, 5):
        e[p - 1] = sum(comb(p, j) * sigma0**j * delta0 ** (p - j) * h[j] for j in range(p + 1)) / h[0]
    return TruncatedMoments(a, b, h, e)


def _natural_to_null(eta1, eta2):
    sigma0 = (-2.0 * eta2) ** -0.5
    return eta1 * sigma0**2, sigma0


def _truncated_loglik(eta, y1, y2, x0):
    delta0, sigma0 = _natural_to_null(*eta)
    tm = truncated_moments(delta0, sigma0, x0)
    log_norm = delta0**2 / (2 * sigma0**2) + math.log(sigma0) + LOG_SQRT_2PI + math.log(tm.H[0])
    return eta[0] * y1 + eta[1] * y2 - log_norm, tm


def mle_from_stats(n: float, n0: float, s1: float, s2: float, x0: float = DEFAULT_X0,
                   init=None, tol: float = 1e-10, max_iter: int = 200) -> NullModel:
    """MLE fitting from sufficient statistics.

    ``n`` is the total number of cases, ``n0`` the number inside
    ``[-x0, x0]``, and ``s1``, ``s2`` the sum and sum of squares of those
    inside. Counts may be fractional.
    """
    if n0 < MIN_N0:
        raise InvalidInputError(f"only {n0:g} z-values inside [-{x0}, {x0}]; need {MIN_N0}")
    y1, y2 = s1 / n0, s2 / n0
    if init is None:
        init = (y1, math.sqrt(max(y2 - y1 * y1, 1e-12)))
    d, s = init
    eta = np.array([d / s**2, -0.5 / s**2])
    ll, tm = _truncated_loglik(eta, y1, y2, x0)
    trace = [(d, s, ll)]
    for _ in range(max_iter):
        e1, e2, e3, e4 = tm.E
        score = np.array([y1 - e1, y2 - e2])
        cov = np.array([[e2 - e1 * e1, e3 - e1 * e2], [e3 - e1 * e2, e4 - e2 * e2]])
        try:
            step = np.linalg.solve(cov, score)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError("singular truncated-normal covariance", (d, s), trace) from exc
        t = 1.0
        for _ in range(60):
            cand = eta + t * step
            if cand[1] < 0:
                ll_new, tm_new = _truncated_loglik(cand, y1, y2, x0)
                if ll_new >= ll - 1e-13 * abs(ll):
                    break
            t /= 2
        else:
            raise NonConvergenceError("step halving failed in MLE fitting", (d, s), trace)
        d_new, s_new = _natural_to_null(*cand)
        if s_new < 1e-3:
            raise DegenerateNullError(f"null standard deviation collapsed to {s_new:.3g}")
        change = max(abs(d_new - d), abs(s_new - s))
        eta, ll, tm, d, s = cand, ll_new, tm_new, d_new, s_new
        trace.append((d, s, ll))
        if change < tol:
            break
    else:
        raise NonConvergenceError(f"MLE fitting did not converge in {max_iter} iterations", (d, s), trace)
    theta = n0 / n
    p0 = theta / tm.H[0]
    warn = _check_p0(p0, "MLE fitting")
    meta = {
        "x0": x0,
        "n": n,
        "n0": n0,
        "y1": y1,
        "y2": y2,
        "theta": theta,
        "iterations": len(trace) - 1,
        "trace": trace,
    }
    return NullModel(float(d), float(s), float(p0), MLE, meta, warn)


def sufficient_stats(z, x0: float = DEFAULT_X0):
    values = z.values if isinstance(z, ZSample) else np.asarray(z, dtype=float)
    inside = values[np.abs(values) <= x0]
    return float(values.size), float(inside.size), float(inside.sum()), float(np.sum(inside**2))


def mle_fit(z, x0: float = DEFAULT_X0, **kwargs) -> NullModel:
    """Truncated-normal maximum likelihood null from the z-values in ``[-x0, x0]``."""
    return mle_from_stats(*sufficient_stats(z, x0), x0=x0, **kwargs)


def mle_from_counts(counts, x0: float = DEFAULT_X0, **kwargs) -> NullModel:
    """MLE fitting with each bin's cases placed at its center.

    This is the version whose count derivatives the accuracy formulas
    describe exactly.
    """
    x = counts.centers
    y = np.asarray(counts.counts, dtype=float)
    inside = np.abs(x) <= x0
    yi, xi = y[inside], x[inside]
    return mle_from_stats(float(y.sum()), float(yi.sum()), float(yi @ xi), float(yi @ (xi * xi)),
                          x0=x0, **kwargs)
