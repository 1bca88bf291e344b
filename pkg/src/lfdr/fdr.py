"""Local and tail-area false discovery rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import MixtureDensityFit, eval_log_density, mixture_cdf, mixture_sf
from .errors import InvalidInputError
from .nulls import NullModel

LEFT = "left"
RIGHT = "right"
PARAMETRIC = "parametric"
EMPIRICAL = "empirical-cdf"
DEFAULT_THRESHOLD = 0.2
DEFAULT_PRIOR_ODDS = 1 / 9


def log_local_fdr_bins(fit: MixtureDensityFit, null: NullModel, capped: bool = False) -> np.ndarray:
    """log fdr at the bin centers, before any capping at 1 (``capped`` caps p0 only)."""
    return null.log_subdensity(fit.centers, capped=capped) - fit.log_density


def local_fdr(fit: MixtureDensityFit, null: NullModel, z=None):
    """fdr(z) = p0 f0(z) / f(z), capped at 1.

    Returns the per-bin values and, when ``z`` is given, the values at each z
    by continuous evaluation of the fitted density (``None`` otherwise).
    """
    per_bin = np.minimum(1.0, np.exp(log_local_fdr_bins(fit, null, capped=True)))
    per_case = None
    if z is not None:
        z = np.asarray(z, dtype=float)
        log_f = eval_log_density(fit, z, warn=False)
        per_case = np.minimum(1.0, np.exp(null.log_subdensity(z) - log_f))
    return per_bin, per_case


def local_fdr_at(fit: MixtureDensityFit, null: NullModel, z, capped: bool = True):
    z_arr = np.asarray(z, dtype=float)
    log_fdr = null.log_subdensity(z_arr, capped=capped) - eval_log_density(fit, z_arr, warn=False)
    out = np.exp(log_fdr)
    if capped:
        out = np.minimum(out, 1.0)
    return out


def binned_tail_fdr(log_f: np.ndarray, log_f0plus: np.ndarray, side: str) -> np.ndarray:
    """Tail Fdr on the grid from running sums of the null and mixture densities.

    Entry k of the left side covers bins 0..k, i.e. the event ``Z <= x_k + width/2``;
    the right side covers bins k..K-1.
    """
    f = np.exp(log_f)
    f0 = np.exp(log_f0plus)
    if side == LEFT:
        return np.cumsum(f0) / np.cumsum(f)
    if side == RIGHT:
        return np.cumsum(f0[::-1])[::-1] / np.cumsum(f[::-1])[::-1]
    raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")


def tail_fdr(fit: MixtureDensityFit, null: NullModel, side: str = LEFT, mode: str = PARAMETRIC,
             sample=None) -> np.ndarray:
    """Tail-area Fdr at each bin, capped at 1.

    ``parametric`` uses running sums of the fitted densities. ``empirical-cdf``
    divides the null tail probability by the observed fraction of ``sample``
    in the tail; bins with an empty tail come back as NaN.
    """
    if mode == PARAMETRIC:
        vals = binned_tail_fdr(fit.log_density, null.log_subdensity(fit.centers), side)
        return np.minimum(vals, 1.0)
    if mode == EMPIRICAL:
        if sample is None:
            raise InvalidInputError("empirical-cdf mode needs the z-values")
        edges = fit.counts.edges
        if side == LEFT:
            points = edges[1:]
        elif side == RIGHT:
            points = edges[:-1]
        else:
            raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")
        return tail_fdr_at(fit, null, points, side, EMPIRICAL, sample)
    raise InvalidInputError(f"unknown tail mode {mode!r}")


def tail_fdr_at(fit: MixtureDensityFit, null: NullModel, z, side: str = LEFT,
                mode: str = PARAMETRIC, sample=None, capped: bool = True):
    """Tail-area Fdr at arbitrary points.

    In parametric mode both the null and the mixture tail probabilities are
    taken over the binning grid only, so that the null tail is the integral of
    ``fdr * f`` exactly. The empirical mode uses the full null tail and
    ``#{z_i <= z} / N`` (or its upper-tail mirror).
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    p0 = null.capped_p0 if capped else null.p0
    if mode == PARAMETRIC:
        lo, hi = fit.counts.lo, fit.counts.hi
        zc = np.clip(z_arr, lo, hi)
        if side == LEFT:
            num = p0 * (null.cdf(zc) - null.cdf(lo))
            den = mixture_cdf(fit, zc)
        elif side == RIGHT:
            num = p0 * (null.sf(zc) - null.sf(hi))
            den = mixture_sf(fit, zc)
        else:
            raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")
    elif mode == EMPIRICAL:
        if sample is None:
            raise InvalidInputError("empirical-cdf mode needs the z-values")
        s = np.sort(np.asarray(sample, dtype=float))
        n = s.size
        if side == LEFT:
            num = p0 * null.cdf(z_arr)
            den = np.searchsorted(s, z_arr, side="right") / n
        elif side == RIGHT:
            num = p0 * null.sf(z_arr)
            den = (n - np.searchsorted(s, z_arr, side="left")) / n
        else:
            raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")
    else:
        raise InvalidInputError(f"unknown tail mode {mode!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / den, np.nan)
    if capped:
        out = np.minimum(out, 1.0)
    return out if np.ndim(z) else float(out[0])


def lehmann_relation(Fdr: float, alpha: float) -> float:
    """fdr implied by tail Fdr when F1 = F0^alpha:
    logit(fdr) = logit(Fdr) + log(1 / alpha)."""
    if not 0 < Fdr < 1:
        raise InvalidInputError(f"Fdr must lie strictly between 0 and 1, got {Fdr}")
    if not 0 < alpha <= 1:
        raise InvalidInputError(f"alpha must lie in (0, 1], got {alpha}")
    odds = Fdr / (1 - Fdr) / alpha
    return odds / (1 + odds)


def lehmann_alpha(fdr: float, Fdr: float) -> float:
    """Inverse of :func:`lehmann_relation`: the alpha linking a (fdr, Fdr) pair."""
    if not (0 < fdr < 1 and 0 < Fdr < 1):
        raise InvalidInputError("fdr and Fdr must lie strictly between 0 and 1")
    return (Fdr / (1 - Fdr)) / (fdr / (1 - fdr))


@dataclass(frozen=True)
class FdrReport:
    centers: np.ndarray
    per_bin_fdr: np.ndarray
    fdr_left: np.ndarray
    fdr_right: np.ndarray
    z: np.ndarray | None = None
    per_case_fdr: np.ndarray | None = None
    qvalues: np.ndarray | None = None
    fdr_left_empirical: np.ndarray | None = None
    fdr_right_empirical: np.ndarray | None = None
    threshold: float = DEFAULT_THRESHOLD
    flagged_left: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    flagged_right: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    lehmann_alpha_left: float | None = None
    lehmann_alpha_right: float | None = None


@dataclass(frozen=True)
class ThresholdSummary:
    threshold: float
    flagged_left: np.ndarray
    flagged_right: np.ndarray
    posterior_odds: float
    bayes_factor_bound: float
    prior_odds: float

    @property
    def n_flagged(self) -> int:
        return int(self.flagged_left.size + self.flagged_right.size)


def threshold_report(report: FdrReport, threshold: float = DEFAULT_THRESHOLD,
                     prior_odds: float = DEFAULT_PRIOR_ODDS) -> ThresholdSummary:
    """Cases with fdr <= threshold, split by the sign of z.

    A case at the threshold has posterior nonnull odds of at least
    ``(1 - t) / t``; with prior odds ``p1/p0 <= prior_odds`` that means a
    Bayes factor of at least ``(1 - t) / (t * prior_odds)``.
    """
    if not 0 < threshold < 1:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")
    if report.per_case_fdr is None:
        left = right = np.array([], dtype=int)
    else:
        hit = report.per_case_fdr <= threshold
        left = np.flatnonzero(hit & (report.z < 0))
        right = np.flatnonzero(hit & (report.z >= 0))
    odds = (1 - threshold) / threshold
    return ThresholdSummary(threshold, left, right, odds, odds / prior_odds, prior_odds)


def _boundary_alpha(z, fdr_case, q, idx):
    # Lehmann alpha at the flagged case closest to the threshold boundary
    if idx.size == 0:
        return None
    j = idx[np.argmax(fdr_case[idx])]
    f, big_f = fdr_case[j], q[j]
    if not (0 < f < 1 and 0 < big_f < 1):
        return None
    return lehmann_alpha(f, big_f)


def fdr_report(fit: MixtureDensityFit, null: NullModel, z=None,
               threshold: float = DEFAULT_THRESHOLD, empirical: bool = True) -> FdrReport:
    """Everything fdr-related for one fit and null: per-bin and per-case fdr,
    tail Fdr, q-values and the cases flagged at ``threshold``."""
    per_bin, per_case = local_fdr(fit, null, z)
    left = tail_fdr(fit, null, LEFT)
    right = tail_fdr(fit, null, RIGHT)
    q = left_e = right_e = None
    if z is not None:
        z = np.asarray(z, dtype=float)
        q = np.where(
            z < 0,
            tail_fdr_at(fit, null, z, LEFT),
            tail_fdr_at(fit, null, z, RIGHT),
        )
        if empirical:
            left_e = tail_fdr(fit, null, LEFT, EMPIRICAL, z)
            right_e = tail_fdr(fit, null, RIGHT, EMPIRICAL, z)
    report = FdrReport(
        centers=fit.centers,
        per_bin_fdr=per_bin,
        fdr_left=left,
        fdr_right=right,
        z=z,
        per_case_fdr=per_case,
        qvalues=q,
        fdr_left_empirical=left_e,
        fdr_right_empirical=right_e,
        threshold=threshold,
    )
    summary = threshold_report(report, threshold)
    alpha_l = alpha_r = None
    if z is not None:
        alpha_l = _boundary_alpha(z, per_case, q, summary.flagged_left)
        alpha_r = _boundary_alpha(z, per_case, q, summary.flagged_right)
    return FdrReport(
        **{**report.__dict__, "flagged_left": summary.flagged_left,
           "flagged_right": summary.flagged_right,
           "lehmann_alpha_left": alpha_l, "lehmann_alpha_right": alpha_r}
    )
