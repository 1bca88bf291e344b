"""Simulation models with known fdr, and the replication studies built on them.

Two models are provided. In the exact-null model the null z-values are
N(0, 1). In the jittered-null model each null case's mean is itself drawn
from N(0, 0.5^2). In both, 10% of the cases are nonnull with means spread
like N(3, 1), so that f1 = N(3, 2).

:func:`run_study` repeats the full pipeline on independent draws and
summarizes three things: the Efdr1 estimates, the null parameter
estimates with their formula standard deviations, and the variability of
log fdr at fixed z.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from . import accuracy, power
from .density import BasisSpec, fit_mixture_density
from .errors import InvalidConfigError, LfdrError
from .fdr import RIGHT, local_fdr, log_local_fdr_bins, tail_fdr_at
from .ingest import ZSample, bin_z_values
from .nulls import central_matching, mle_fit, theoretical_null

logger = logging.getLogger(__name__)

EXACT_NULL = "exact-null"
JITTERED_NULL = "jittered-null"
STUDY_RANGE = (-4.0, 7.4)
STUDY_BINS = 120
TABLE4_Z = (1.5, 2.0, 2.5, 3.0, 3.5, 4.0)


@dataclass(frozen=True)
class SimModel:
    kind: str = EXACT_NULL
    n: int = 1500
    p0: float = 0.9
    nonnull_mean: float = 3.0
    nonnull_spread: float = 1.0
    null_jitter: float | None = None
    grid_means: bool = True

    def __post_init__(self):
        if self.kind not in (EXACT_NULL, JITTERED_NULL):
            raise InvalidConfigError(f"unknown model kind {self.kind!r}")
        if not 0 < self.p0 < 1:
            raise InvalidConfigError("p0 must lie in (0, 1)")
        if self.null_jitter is None:
            object.__setattr__(self, "null_jitter", 0.0 if self.kind == EXACT_NULL else 0.5)

    @property
    def n_null(self) -> int:
        return int(round(self.n * self.p0))

    @property
    def n_nonnull(self) -> int:
        return self.n - self.n_null

    @property
    def null_sd(self) -> float:
        return math.sqrt(1.0 + self.null_jitter**2)

    @property
    def nonnull_sd(self) -> float:
        return math.sqrt(1.0 + self.nonnull_spread**2)

    def nonnull_means(self) -> np.ndarray:
        """Evenly spaced normal quantiles, ``mean + spread * Phi^-1((i - 0.5) / n1)``."""
        m = self.n_nonnull
        return self.nonnull_mean + self.nonnull_spread * special.ndtri((np.arange(1, m + 1) - 0.5) / m)


def generate(model: SimModel, seed) -> ZSample:
    """One draw of ``model``; nulls first, then nonnulls."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n0, n1 = model.n_null, model.n_nonnull
    null_means = rng.normal(0.0, model.null_jitter, n0) if model.null_jitter > 0 else np.zeros(n0)
    if model.grid_means:
        nonnull_means = model.nonnull_means()
    else:
        nonnull_means = rng.normal(model.nonnull_mean, model.nonnull_spread, n1)
    means = np.concatenate([null_means, nonnull_means])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ZSample(means + rng.standard_normal(model.n))


def component_densities(model: SimModel, z):
    """(p0 f0(z), p1 f1(z)) with the normal approximations for both components."""
    z = np.asarray(z, dtype=float)
    f0 = stats.norm.pdf(z, 0.0, model.null_sd)
    f1 = stats.norm.pdf(z, model.nonnull_mean, model.nonnull_sd)
    return model.p0 * f0, (1 - model.p0) * f1


def true_fdr(model: SimModel, z):
    a, b = component_densities(model, z)
    out = a / (a + b)
    return float(out) if np.ndim(out) == 0 else out


def true_efdr1(model: SimModel) -> float:
    """Expected fdr under f1, by adaptive quadrature."""
    sd = model.nonnull_sd
    mu = model.nonnull_mean

    def integrand(z):
        return true_fdr(model, z) * stats.norm.pdf(z, mu, sd)

    val, _ = integrate.quad(integrand, mu - 12 * sd, mu + 12 * sd, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


@dataclass
class StudyResult:
    table: str
    reps: int
    seed: int
    columns: list
    rows: list
    n_dropped: int = 0
    drop_reasons: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, str):
        return v
    if v is None or not np.isfinite(v):
        return "NA"
    return f"{v:.6g}"


def _summ(x):
    x = np.asarray(x, dtype=float)
    mean = float(np.mean(x))
    sd = float(np.std(x, ddof=1)) if x.size > 1 else float("nan")
    return mean, sd, sd / mean if mean != 0 else float("nan")


def _fit(z, spec):
    counts = bin_z_values(z, STUDY_BINS, STUDY_RANGE)
    return fit_mixture_density(counts, spec)


def _rep_t1(z, spec):
    fit = _fit(z, spec)
    out = []
    for null in (theoretical_null(fit), central_matching(fit)):
        per_bin, _ = local_fdr(fit, null)
        out += [power.efdr1(fit, per_bin), 1 - null.capped_p0]
    return out


def _rep_t3(z, spec):
    fit = _fit(z, spec)
    out = []
    cm = central_matching(fit)
    ml = mle_fit(z, 2.0)
    for null in (cm, ml):
        _, sd, _ = accuracy.cov_params(fit, null)
        # parameter order in the output: delta0, sigma0, p0
        out += [null.delta0, null.sigma0, null.p0, sd[1], sd[2], sd[0]]
    return out


def _rep_t4(z, spec):
    fit = _fit(z, spec)
    zs = np.asarray(TABLE4_Z)
    out = []
    for null in (theoretical_null(fit), central_matching(fit)):
        lf = np.interp(zs, fit.centers, log_local_fdr_bins(fit, null, capped=False))
        sd = np.sqrt(np.clip(np.diag(accuracy.cov_log_fdr_cm(fit, null)), 0, None))
        sd_z = np.interp(zs, fit.centers, sd)
        tail = np.log(tail_fdr_at(fit, null, zs, RIGHT, capped=False))
        out += [lf, sd_z, tail]
    return np.concatenate(out)


_REPS = {"1": _rep_t1, "3": _rep_t3, "4": _rep_t4}
_DEFAULT_REPS = {"1": 100, "3": 100, "4": 250}


def run_study(table, reps: int | None = None, seed: int = 1, model: SimModel | None = None,
              spec: BasisSpec | None = None) -> StudyResult:
    """Replicate the pipeline ``reps`` times and summarize one table.

    ``table`` is 1 (Efdr1 and p1 under the theoretical and central-matching
    nulls), 3 (central matching versus MLE null estimates with formula sds)
    or 4 (sd of log fdr and log right-tail Fdr at z = 1.5, ..., 4.0).
    Replications whose pipeline raises are dropped and counted.
    """
    key = str(table).upper().lstrip("T")
    if key not in _REPS:
        raise InvalidConfigError(f"table must be 1, 3 or 4, got {table!r}")
    reps = _DEFAULT_REPS[key] if reps is None else int(reps)
    if reps < 2:
        raise InvalidConfigError("need at least 2 replications")
    model = model or SimModel()
    spec = spec or BasisSpec("natural-spline", 7)
    children = np.random.SeedSequence(seed).spawn(reps)
    results, reasons = [], []
    for i, child in enumerate(children):
        z = generate(model, np.random.default_rng(child)).values
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                results.append(np.asarray(_REPS[key](z, spec), dtype=float))
        except (LfdrError, ArithmeticError, ValueError) as exc:
            reasons.append((i, type(exc).__name__, str(exc)))
            logger.warning("replication %d dropped: %s", i, exc)
    if len(results) < 2:
        raise LfdrError(f"only {len(results)} replications succeeded")
    data = np.vstack(results)
    builder = {"1": _table1, "3": _table3, "4": _table4}[key]
    result = builder(data, model)
    result.table, result.reps, result.seed = key, reps, seed
    result.n_dropped = len(reasons)
    result.drop_reasons = reasons
    result.raw = {"values": data}
    return result


def _table1(data, model):
    cols = ["", "theoretical_efdr1", "theoretical_p1", "empirical_efdr1", "empirical_p1"]
    stats_ = [_summ(data[:, j]) for j in range(4)]
    rows = [[name] + [s[i] for s in stats_] for i, name in enumerate(["Mean", "Stdev", "Coefvar"])]
    return StudyResult("1", 0, 0, cols, rows, extra={"true_efdr1": true_efdr1(model),
                                                     "true_p1": 1 - model.p0})


def _table3(data, model):
    cols = ["", "cm_mean", "cm_stdev", "cm_formula", "mle_mean", "mle_stdev", "mle_formula"]
    rows = []
    for j, name in enumerate(["delta0", "sigma0", "p0"]):
        row = [name]
        for off in (0, 6):
            mean, sd, _ = _summ(data[:, off + j])
            row += [mean, sd, float(np.mean(data[:, off + 3 + j]))]
        rows.append(row)
    return StudyResult("3", 0, 0, cols, rows)


def _table4(data, model):
    m = len(TABLE4_Z)
    cols = ["z", "fdr", "theo_local", "theo_formula", "theo_tail",
            "emp_local", "emp_formula", "emp_tail"]
    blocks = [data[:, i * m:(i + 1) * m] for i in range(6)]
    rows = []
    for j, z in enumerate(TABLE4_Z):
        row = [f"{z:g}", true_fdr(model, z)]
        for b in (0, 3):
            row += [float(np.std(blocks[b][:, j], ddof=1)),
                    float(np.mean(blocks[b + 1][:, j])),
                    float(np.std(blocks[b + 2][:, j], ddof=1))]
        rows.append(row)
    return StudyResult("4", 0, 0, cols, rows)
