"""Mixture density estimation by Poisson regression on histogram counts.

The log of the expected bin count is modelled as a linear combination of
basis functions of z (polynomial or natural cubic spline), and the
coefficients are fit by iteratively reweighted least squares. The intercept
soaks up the normalising constant, so the fitted counts divided by ``N * width``
are a density on the binning grid.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConditioningError, InvalidInputError, NonConvergenceError
from .ingest import BinnedCounts

logger = logging.getLogger(__name__)

MAX_ITER = 200
SCORE_TOL = 1e-8
DEVIANCE_RTOL = 1e-10

_KIND_ALIASES = {
    "polynomial": "polynomial",
    "poly": "polynomial",
    "natural-spline": "natural-spline",
    "nspline": "natural-spline",
    "ns": "natural-spline",
}

# 10-point Gauss-Legendre rule on [0, 1], used for all continuous integrals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL_X = (_GL_X + 1) / 2
_GL_W = _GL_W / 2


class ExtrapolationWarning(UserWarning):
    """Density evaluated outside the binning grid."""


@dataclass(frozen=True)
class BasisSpec:
    """Exponential-family basis: ``kind`` and number of non-constant columns.

    ``knots`` applies to natural splines only: ``"quantile"`` puts the
    interior knots at equally spaced count-weighted quantiles, ``"uniform"``
    spaces them evenly across the grid.
    """

    kind: str = "natural-spline"
    df: int = 7
    knots: str = "uniform"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise InvalidInputError(f"unknown basis kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if int(self.df) != self.df or self.df < 2:
            raise InvalidInputError(f"basis needs at least 2 degrees of freedom, got {self.df}")
        object.__setattr__(self, "df", int(self.df))
        if self.knots not in ("quantile", "uniform"):
            raise InvalidInputError(f"unknown knot placement {self.knots!r}")

    @property
    def m(self) -> int:
        return self.df + 1


@dataclass(frozen=True)
class Basis:
    """A basis fixed to a particular grid: callable on any z."""

    spec: BasisSpec
    center: float
    scale: float
    knots: np.ndarray | None = None
    col_scale: np.ndarray | None = None

    def __call__(self, z) -> np.ndarray:
        u = (np.atleast_1d(np.asarray(z, dtype=float)) - self.center) / self.scale
        if self.spec.kind == "polynomial":
            cols = np.vander(u, self.spec.df + 1, increasing=True)
        else:
            cols = _natural_spline_columns(u, self.knots)
        if self.col_scale is not None:
            cols = cols / self.col_scale
        return cols


def _natural_spline_columns(u, knots):
    # truncated-power form of the natural cubic spline: 1, u, d_j - d_{K-1}
    kk = len(knots)
    last = knots[-1]

    def d(j):
        return (np.maximum(u - knots[j], 0) ** 3 - np.maximum(u - last, 0) ** 3) / (last - knots[j])

    d_pen = d(kk - 2)
    cols = [np.ones_like(u), u] + [d(j) - d_pen for j in range(kk - 2)]
    return np.column_stack(cols)


def _weighted_quantiles(x, w, probs):
    # treat each bin's count as spread uniformly over the bin
    width = x[1] - x[0]
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum = cum / cum[-1]
    edges = np.append(x - width / 2, x[-1] + width / 2)
    return np.interp(probs, cum, edges)


def build_basis(spec: BasisSpec, centers, weights=None) -> tuple[Basis, np.ndarray]:
    """Construct the basis for ``centers`` and return it with its design matrix.

    ``weights`` (bin counts) position the quantile knots of a natural spline;
    without them the knots fall at quantiles of the grid itself.
    """
    centers = np.asarray(centers, dtype=float)
    if np.any(np.diff(centers) <= 0):
        raise InvalidInputError("centers must be sorted and distinct")
    center = float(centers.mean())
    scale = float(centers.std())
    knots = None
    if spec.kind == "natural-spline":
        u = (centers - center) / scale
        probs = np.arange(1, spec.df) / spec.df
        if spec.knots == "quantile" and weights is not None and np.sum(weights) > 0:
            inner = _weighted_quantiles(u, np.asarray(weights, dtype=float), probs)
        else:
            inner = u[0] + probs * (u[-1] - u[0])
        knots = np.concatenate([[u[0]], inner, [u[-1]]])
        if np.any(np.diff(knots) <= 0):
            raise ConditioningError("spline knots are not distinct; too few occupied bins")
    raw = Basis(spec, center, scale, knots)(centers)
    col_scale = np.max(np.abs(raw), axis=0)
    col_scale[col_scale == 0] = 1.0
    basis = Basis(spec, center, scale, knots, col_scale)
    design = raw / col_scale
    _check_rank(design)
    return basis, design


def _check_rank(design, tol=1e-10):
    q = np.zeros((design.shape[0], 0))
    for j in range(design.shape[1]):
        col = design[:, j]
        resid = col - q @ (q.T @ col)
        norm = np.linalg.norm(resid)
        if norm <= tol * max(np.linalg.norm(col), 1e-300):
            raise ConditioningError(f"design column {j} is linearly dependent on columns 0..{j - 1}")
        q = np.column_stack([q, resid / norm])


@dataclass(frozen=True)
class MixtureDensityFit:
    counts: BinnedCounts
    basis: Basis
    coefficients: np.ndarray
    design: np.ndarray
    fitted_density: np.ndarray
    expected_counts: np.ndarray
    information: np.ndarray
    converged: bool
    deviance: float
    n_iter: int = 0
    deviance_trace: tuple = ()
    warnings: tuple = field(default=())

    @property
    def centers(self) -> np.ndarray:
        return self.counts.centers

    @property
    def width(self) -> float:
        return self.counts.width

    @property
    def n(self) -> float:
        """Number of cases inside the grid (the N in ``nu = N * width * f``)."""
        return self.counts.n_binned

    @property
    def log_density(self) -> np.ndarray:
        return np.log(self.fitted_density)

    @cached_property
    def _cum_at_edges(self) -> np.ndarray:
        edges = self.counts.edges
        nodes = edges[:-1, None] + self.width * _GL_X[None, :]
        per_bin = self.width * (eval_density(self, nodes.ravel(), warn=False).reshape(nodes.shape) @ _GL_W)
        return np.concatenate([[0.0], np.cumsum(per_bin)])


def _deviance(y, nu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / nu), 0.0)
    return float(2 * np.sum(term - (y - nu)))


def fit_mixture_density(counts: BinnedCounts, spec: BasisSpec | None = None, *,
                        basis: Basis | None = None, max_iter: int = MAX_ITER,
                        verbose: bool = False) -> MixtureDensityFit:
    """Maximum likelihood Poisson regression of bin counts on the basis.

    Newton-Raphson (IRLS) with step halving whenever the deviance goes up.
    Raises :class:`NonConvergenceError` if the score equations are not
    solved to ``1e-8`` within ``max_iter`` iterations.

    Passing ``basis`` reuses an existing basis (knots included) instead of
    building one from ``spec`` and the counts.
    """
    y = np.asarray(counts.counts, dtype=float)
    if basis is None:
        basis, x = build_basis(spec or BasisSpec(), counts.centers, y)
    else:
        x = basis(counts.centers)
        _check_rank(x)
    if np.count_nonzero(y) < x.shape[1]:
        raise InvalidInputError(
            f"need at least {x.shape[1]} nonempty bins for a {x.shape[1]}-parameter fit"
        )
    beta = _start(x, y)
    eta = np.clip(x @ beta, -700, 700)
    nu = np.exp(eta)
    dev = _deviance(y, nu)
    trace = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = x.T @ (y - nu)
        gram = x.T @ (nu[:, None] * x)
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("weighted Gram matrix is singular") from exc
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, score))
        t = 1.0
        for _ in range(60):
            beta_new = beta + t * step
            nu_new = np.exp(np.clip(x @ beta_new, -700, 700))
            dev_new = _deviance(y, nu_new)
            if np.isfinite(dev_new) and dev_new <= dev * (1 + 1e-12) + 1e-12:
                break
            t /= 2
        else:
            raise NonConvergenceError("step halving failed to reduce the deviance", beta, trace)
        rel_change = abs(dev - dev_new) / (abs(dev_new) + 0.1)
        beta, nu, dev = beta_new, nu_new, dev_new
        trace.append(dev)
        if verbose:
            logger.info("IRLS iter %d deviance %.12g step %.3g", it, dev, t)
        max_score = np.max(np.abs(x.T @ (y - nu)))
        if rel_change < DEVIANCE_RTOL and max_score < SCORE_TOL:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"IRLS did not converge in {max_iter} iterations", beta, trace
        )
    gram = x.T @ (nu[:, None] * x)
    n = counts.n_binned
    fitted = nu / (n * counts.width)
    return MixtureDensityFit(
        counts=counts,
        basis=basis,
        coefficients=beta,
        design=x,
        fitted_density=fitted,
        expected_counts=nu,
        information=gram,
        converged=True,
        deviance=dev,
        n_iter=it,
        deviance_trace=tuple(trace),
    )


def _start(x, y):
    w = y + 0.5
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(x * sw[:, None], np.log(w) * sw, rcond=None)
    return beta


def eval_log_density(fit: MixtureDensityFit, z, warn: bool = True):
    """log f(z) from the fitted coefficients, continuous in z."""
    z_arr = np.asarray(z, dtype=float)
    if warn:
        lo = fit.centers[0] - fit.width
        hi = fit.centers[-1] + fit.width
        if np.any((z_arr < lo) | (z_arr > hi)):
            warnings.warn(
                f"density evaluated outside [{lo:.4g}, {hi:.4g}]", ExtrapolationWarning, stacklevel=2
            )
    out = fit.basis(z_arr.ravel()) @ fit.coefficients - np.log(fit.n * fit.width)
    return float(out[0]) if z_arr.ndim == 0 else out.reshape(z_arr.shape)


def eval_density(fit: MixtureDensityFit, z, warn: bool = True):
    return np.exp(eval_log_density(fit, z, warn=warn))


def integrate_on_grid(fit: MixtureDensityFit, func, z):
    """Integral of ``func`` from the bottom grid edge up to each ``z``.

    ``func`` takes an array of points and returns values; mass outside the grid
    counts as zero. Composite 10-point Gauss-Legendre per bin.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    edges = fit.counts.edges
    width = fit.width
    nodes = edges[:-1, None] + width * _GL_X[None, :]
    per_bin = width * (np.asarray(func(nodes.ravel())).reshape(nodes.shape) @ _GL_W)
    cum = np.concatenate([[0.0], np.cumsum(per_bin)])
    return _partial_cumulative(edges, cum, func, z_arr)


def _partial_cumulative(edges, cum, func, z_arr):
    width = edges[1] - edges[0]
    zc = np.clip(z_arr, edges[0], edges[-1])
    j = np.clip(np.floor((zc - edges[0]) / width).astype(int), 0, len(edges) - 2)
    frac = zc - edges[j]
    nodes = edges[j][:, None] + frac[:, None] * _GL_X[None, :]
    part = frac * (np.asarray(func(nodes.ravel())).reshape(nodes.shape) @ _GL_W)
    return cum[j] + part


def mixture_cdf(fit: MixtureDensityFit, z):
    """F(z): integral of the fitted density from the bottom of the grid to z."""
    z_arr = np.asarray(z, dtype=float)
    out = _partial_cumulative(
        fit.counts.edges,
        fit._cum_at_edges,
        lambda t: eval_density(fit, t, warn=False),
        np.atleast_1d(z_arr),
    )
    return float(out[0]) if z_arr.ndim == 0 else out.reshape(z_arr.shape)


def mixture_sf(fit: MixtureDensityFit, z):
    """Upper-tail counterpart of :func:`mixture_cdf`, ending at the top of the grid."""
    return fit._cum_at_edges[-1] - mixture_cdf(fit, z)


def refit_on(fit: MixtureDensityFit, counts) -> MixtureDensityFit:
    """Refit new counts on the same grid, holding the basis (and its knots) fixed."""
    return fit_mixture_density(fit.counts.with_counts(counts), basis=fit.basis)
