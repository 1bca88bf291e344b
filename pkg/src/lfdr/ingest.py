"""Test statistics to z-values, and z-values to a histogram."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import DegenerateHistogramError, InvalidInputError

logger = logging.getLogger(__name__)

MIN_CASES = 200
MIN_BINS = 10
DEFAULT_BINS = 120


@dataclass(frozen=True)
class ZSample:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("z-values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if 0 < v.size < MIN_CASES:
            warnings.warn(
                f"only {v.size} cases; empirical-null analysis wants at least {MIN_CASES}",
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class BinnedCounts:
    """Equal-width histogram of z-values.

    ``centers`` are the bin midpoints, ``counts`` the (possibly fractional)
    bin counts, ``n_total`` the size of the sample that was binned, including
    any values that fell outside the grid and were dropped (``n_excluded``).
    """

    centers: np.ndarray
    counts: np.ndarray
    width: float
    n_total: int
    n_excluded: int = 0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        y = np.asarray(self.counts, dtype=float)
        if c.ndim != 1 or c.shape != y.shape:
            raise InvalidInputError("centers and counts must be 1-d of equal length")
        if c.size < MIN_BINS:
            raise InvalidInputError(f"need at least {MIN_BINS} bins, got {c.size}")
        if not self.width > 0:
            raise InvalidInputError("bin width must be positive")
        if np.any(y < 0):
            raise InvalidInputError("counts must be nonnegative")
        if not np.allclose(np.diff(c), self.width, rtol=1e-9, atol=1e-12):
            raise InvalidInputError("bin centers must be equally spaced by the bin width")
        c.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "counts", y)

    @property
    def k(self) -> int:
        return int(self.centers.size)

    @property
    def n_binned(self) -> float:
        return float(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.centers - self.width / 2, self.centers[-1] + self.width / 2)

    @property
    def lo(self) -> float:
        return float(self.centers[0] - self.width / 2)

    @property
    def hi(self) -> float:
        return float(self.centers[-1] + self.width / 2)

    def with_counts(self, counts) -> "BinnedCounts":
        return BinnedCounts(self.centers, counts, self.width, self.n_total, self.n_excluded)


def t_to_z(t, df):
    """Map Student-t statistics to the normal scale, ``z = Phi^-1(F_df(t))``.

    Works on scalars or arrays. Positive ``t`` goes through the lower tail of
    the mirrored statistic so that large values keep full precision.
    """
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise InvalidInputError("t statistics must be finite")
    if not (np.isscalar(df) or np.ndim(df) == 0) or not df >= 1:
        raise InvalidInputError(f"degrees of freedom must be >= 1, got {df!r}")
    neg_abs = -np.abs(t_arr)
    z = np.abs(special.ndtri(special.stdtr(float(df), neg_abs)))
    z = np.where(np.isinf(z), np.abs(t_arr), z)
    z = np.copysign(z, t_arr)
    return float(z) if z.ndim == 0 else z


def bin_z_values(z, k_bins: int = DEFAULT_BINS, range=None, clip: bool = False) -> BinnedCounts:
    """Bin z-values into ``k_bins`` equal-width bins.

    ``range=(low, high)`` gives the first and last bin centers, so
    ``range=(-4, 4)`` with 41 bins yields centers -4.0, -3.8, ..., 4.0. Without
    a range the centers run from min(z) to max(z), i.e. the data range padded
    by half a bin on each side.

    Values outside the outer bin edges are dropped (and counted in
    ``n_excluded``) unless ``clip`` is set, in which case they go to the end
    bins.
    """
    values = z.values if isinstance(z, ZSample) else np.asarray(z, dtype=float).ravel()
    if values.size == 0:
        raise InvalidInputError("cannot bin an empty sample")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("z-values must be finite")
    if k_bins < MIN_BINS:
        raise InvalidInputError(f"need at least {MIN_BINS} bins, got {k_bins}")
    if range is None:
        low, high = float(values.min()), float(values.max())
        if not high - low > 1e-9 * max(1.0, abs(low), abs(high)):
            raise DegenerateHistogramError("z-values are all (nearly) identical")
    else:
        low, high = map(float, range)
        if not low < high:
            raise InvalidInputError(f"range low must be below high, got {range}")
    width = (high - low) / (k_bins - 1)
    centers = low + width * np.arange(k_bins)
    lo_edge = low - width / 2
    hi_edge = high + width / 2

    idx = np.floor((values - lo_edge) / width).astype(np.int64)
    # a value sitting exactly on the top edge belongs to the last bin
    idx[(idx == k_bins) & (values <= hi_edge)] = k_bins - 1
    outside = (idx < 0) | (idx >= k_bins)
    n_out = int(outside.sum())
    if clip:
        idx = np.clip(idx, 0, k_bins - 1)
        n_out_dropped = 0
    else:
        idx = idx[~outside]
        n_out_dropped = n_out
        if n_out:
            logger.info("%d z-values outside [%.4g, %.4g] excluded", n_out, lo_edge, hi_edge)
    counts = np.bincount(idx, minlength=k_bins).astype(float)
    return BinnedCounts(centers, counts, width, int(values.size), n_out_dropped)


@dataclass
class ReadResult:
    values: np.ndarray
    bad_rows: list = field(default_factory=list)
    n_rows: int = 0


def read_statistics(path, column: str | None = None) -> ReadResult:
    """Read one statistic per line, or a named column of a CSV file.

    Unparseable or nonfinite entries are collected in ``bad_rows`` as
    ``(line_number, text)`` pairs rather than raising.
    """
    path = Path(path)
    values, bad = [], []
    n_rows = 0
    with path.open(newline="") as fh:
        if column is not None:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise InvalidInputError(f"column {column!r} not found in {path}")
            rows = ((i + 2, row[column]) for i, row in enumerate(reader))
        else:
            rows = ((i + 1, line.strip()) for i, line in enumerate(fh))
        for lineno, text in rows:
            if text is None or text.strip() == "":
                if column is not None:
                    n_rows += 1
                    bad.append((lineno, ""))
                continue
            n_rows += 1
            try:
                x = float(text)
            except ValueError:
                bad.append((lineno, text))
                continue
            if not math.isfinite(x):
                bad.append((lineno, text))
                continue
            values.append(x)
    return ReadResult(np.asarray(values, dtype=float), bad, n_rows)
