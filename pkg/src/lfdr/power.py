"""Power diagnostics: nonnull counts, Efdr1, the nonnull cdf of fdr and
sample-size projections."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .density import MixtureDensityFit, fit_mixture_density
from .errors import InvalidInputError, NoNonnullMassError
from .fdr import local_fdr
from .ingest import BinnedCounts
from .nulls import NullModel

CRUDE = "crude"
ADJUSTED = "adjusted"
DEFAULT_T_GRID = np.round(np.arange(1, 101) / 100, 2)


@dataclass(frozen=True)
class PowerReport:
    nonnull_counts: np.ndarray
    null_counts: np.ndarray
    efdr1: float
    g1_curve: np.ndarray
    p1_hat: float
    projections: dict = field(default_factory=dict)
    warnings: tuple = ()


def _per_bin(fdr_or_report):
    vals = getattr(fdr_or_report, "per_bin_fdr", fdr_or_report)
    vals = np.asarray(vals, dtype=float)
    if np.any(vals < 0) or np.any(vals > 1):
        raise InvalidInputError("per-bin fdr values must lie in [0, 1]")
    return vals


def nonnull_counts(fit: MixtureDensityFit, fdr, smoothed: bool = True) -> np.ndarray:
    """``(1 - fdr_k) * y_k``, or with the fitted counts ``nu_k`` when ``smoothed``."""
    base = fit.expected_counts if smoothed else fit.counts.counts
    return (1.0 - _per_bin(fdr)) * base


def efdr1(fit: MixtureDensityFit, fdr) -> float:
    """Expected fdr under the nonnull density, summed over the bins."""
    f = _per_bin(fdr)
    w = (1.0 - f) * fit.fitted_density
    total = w.sum()
    if not total > 0:
        raise NoNonnullMassError("fdr is 1 in every bin: no nonnull mass")
    return float(np.sum(f * w) / total)


def nonnull_cdf(fit: MixtureDensityFit, fdr, t_grid=None) -> np.ndarray:
    """``G1(t)``: the share of smoothed nonnull counts in bins with fdr <= t.

    Returns an array of ``(t, G1(t))`` rows.
    """
    t = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    f = _per_bin(fdr)
    y1 = nonnull_counts(fit, f, smoothed=True)
    total = y1.sum()
    if not total > 0:
        raise NoNonnullMassError("fdr is 1 in every bin: no nonnull mass")
    order = np.argsort(f, kind="stable")
    cum = np.cumsum(y1[order]) / total
    idx = np.searchsorted(f[order], t, side="right")
    g = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    g = np.where(t >= 1.0, 1.0, g)
    return np.column_stack([t, g])


def _spread(edges_mapped, mass, new_edges):
    """Mass of each new bin when bin k's mass is spread evenly over
    ``[edges_mapped[k], edges_mapped[k + 1]]``."""
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    at = np.interp(new_edges, edges_mapped, cum, left=0.0, right=cum[-1])
    return np.diff(at)


def _side_map(x, y1, c, mode, sigma0, side_mask):
    """Affine map ``z -> a + b z`` moving one side's nonnull counts."""
    if mode == CRUDE:
        return 0.0, math.sqrt(c)
    if mode != ADJUSTED:
        raise InvalidInputError(f"mode must be 'crude' or 'adjusted', got {mode!r}")
    w = y1[side_mask]
    xs = x[side_mask]
    mu = float(np.sum(w * xs) / w.sum())
    var = float(np.sum(w * (xs - mu) ** 2) / w.sum())
    # var estimates Delta^2 + sigma^2; the spread of the means is what is left over
    delta_sq = max(var - sigma0**2, 0.0)
    total_var = delta_sq + sigma0**2
    d = math.sqrt(c - (c - 1) * sigma0**2 / total_var)
    return math.sqrt(c) * mu - d * mu, d


def projected_counts(fit: MixtureDensityFit, null: NullModel, c: float, mode: str = CRUDE):
    """The histogram expected if each case had ``c`` times the data.

    Null counts stay where they are. Nonnull counts on each side of zero
    move outward, each bin's mass spread evenly over the image of the bin,
    onto a grid with the same bin width extended as far as needed.
    Returns the new counts, the number of bins added below and above, and
    any warnings.
    """
    if not c >= 1:
        raise InvalidInputError(f"expansion factor must be >= 1, got {c}")
    per_bin, _ = local_fdr(fit, null)
    x = fit.centers
    width = fit.width
    nu = fit.expected_counts
    y1 = nonnull_counts(fit, per_bin, smoothed=True)
    y0 = nu - y1
    notes = []
    moves = []
    for name, mask in (("negative", x < 0), ("positive", x >= 0)):
        if not np.any(mask):
            continue
        if not y1[mask].sum() > 1e-9 * nu.sum():
            msg = f"no nonnull mass for z {name}; that side is not projected"
            warnings.warn(msg, stacklevel=3)
            notes.append(msg)
            a, b = 0.0, 1.0
        else:
            a, b = _side_map(x, y1, c, mode, null.sigma0, mask)
        xs = x[mask]
        edges = np.append(xs - width / 2, xs[-1] + width / 2)
        moves.append((a + b * edges, y1[mask]))
    low = min(e[0] for e, _ in moves)
    high = max(e[-1] for e, _ in moves)
    n_lo = max(0, math.ceil((fit.counts.lo - low) / width - 1e-9))
    n_hi = max(0, math.ceil((high - fit.counts.hi) / width - 1e-9))
    k = x.size + n_lo + n_hi
    centers = x[0] - n_lo * width + width * np.arange(k)
    new_edges = np.append(centers - width / 2, centers[-1] + width / 2)
    counts = np.zeros(k)
    for e, m in moves:
        counts += _spread(e, m, new_edges)
    counts[n_lo:n_lo + x.size] += y0
    binned = BinnedCounts(centers, counts, width, fit.counts.n_total, fit.counts.n_excluded)
    return binned, (n_lo, n_hi), tuple(notes)


def sample_size_projection(fit: MixtureDensityFit, null: NullModel, c: float,
                           mode: str = CRUDE, refit: bool = False) -> float:
    """Efdr1 for the projected histogram, with the null counts held fixed.

    By default the projected fdr in each bin is null / (null + nonnull) of
    the synthetic counts, which are already smooth. With ``refit`` the
    density is refitted to the synthetic histogram instead; the basis is
    reused when the grid does not grow, and otherwise its df is scaled with
    the grid length so the knot spacing stays the same. Either way ``c = 1``
    reproduces the current Efdr1.
    """
    binned, (n_lo, n_hi), _ = projected_counts(fit, null, c, mode)
    if not refit:
        per_bin, _ = local_fdr(fit, null)
        y0 = np.zeros(binned.k)
        y0[n_lo:n_lo + fit.centers.size] = fit.expected_counts * per_bin
        y1 = np.clip(binned.counts - y0, 0.0, None)
        total = binned.counts
        fdr_new = np.divide(y0, total, out=np.ones_like(total), where=total > 0)
        if not y1.sum() > 0:
            raise NoNonnullMassError("projected histogram has no nonnull mass")
        return float(np.sum(fdr_new * y1) / y1.sum())
    if n_lo == 0 and n_hi == 0:
        new_fit = fit_mixture_density(binned, basis=fit.basis)
    else:
        spec = fit.basis.spec
        df = max(spec.df, round(spec.df * binned.k / fit.centers.size))
        new_fit = fit_mixture_density(binned, replace(spec, df=df))
    per_bin, _ = local_fdr(new_fit, null)
    return efdr1(new_fit, per_bin)


def power_report(fit: MixtureDensityFit, null: NullModel, t_grid=None,
                 factors=(), mode: str = CRUDE, smoothed: bool = True,
                 refit: bool = False) -> PowerReport:
    per_bin, _ = local_fdr(fit, null)
    y1 = nonnull_counts(fit, per_bin, smoothed)
    y0 = (fit.expected_counts if smoothed else fit.counts.counts) - y1
    notes = []
    proj = {}
    for c in factors:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            proj[float(c)] = sample_size_projection(fit, null, float(c), mode, refit)
        notes.extend(str(w.message) for w in caught)
    return PowerReport(
        nonnull_counts=y1,
        null_counts=y0,
        efdr1=efdr1(fit, per_bin),
        g1_curve=nonnull_cdf(fit, per_bin, t_grid),
        p1_hat=1.0 - null.capped_p0,
        projections=proj,
        warnings=tuple(dict.fromkeys(notes)),
    )
