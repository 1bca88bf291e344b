"""Influence functions and delta-method covariances.

Every estimate here is a smooth function of the histogram counts ``y``. The
influence matrix of a vector estimate is its Jacobian with respect to ``y``;
combined with ``cov(y) = diag(nu)`` it gives delta-method covariances. The
expressions are closed form for central matching (and the theoretical null,
a one-column special case) and for MLE fitting.

:func:`finite_difference_influence` recomputes the same Jacobians by rerunning
the fitting pipeline on perturbed counts; the test suite uses it as the
independent check on the closed forms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .density import MixtureDensityFit, refit_on
from .errors import ConditioningError, InvalidInputError
from .fdr import LEFT, RIGHT, binned_tail_fdr, log_local_fdr_bins
from .nulls import (
    CENTRAL_MATCHING,
    MLE,
    THEORETICAL,
    NullModel,
    central_matching,
    mle_from_stats,
    theoretical_null,
    truncated_moments,
)


@dataclass(frozen=True)
class InfluenceMatrix:
    """``matrix[k, l]`` is d(log estimate at bin k) / d y_l."""

    matrix: np.ndarray
    method: str
    grid: np.ndarray
    quantity: str = "log-fdr"


@dataclass(frozen=True)
class CovarianceReport:
    method: str
    cov_lfdr: np.ndarray
    sd_lfdr: np.ndarray
    cov_lFdr_left: np.ndarray
    cov_lFdr_right: np.ndarray
    cov_params: np.ndarray
    sd_params: np.ndarray
    warnings: tuple = field(default=())

    @property
    def sd_lFdr_left(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_lFdr_left), 0, None))

    @property
    def sd_lFdr_right(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_lFdr_right), 0, None))


def _chol_inverse(mat, label):
    try:
        c = linalg.cho_factor(mat)
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"{label} is not positive definite") from exc
    return linalg.cho_solve(c, np.eye(mat.shape[0]))


def _sym(a):
    return (a + a.T) / 2


def _g_inv(fit):
    return _chol_inverse(fit.information, "information matrix G")


def _central_design(fit: MixtureDensityFit, null: NullModel):
    """X0 on the full grid and the central-bin projection X0 G0~^-1 X0~' X~."""
    if null.method not in (CENTRAL_MATCHING, THEORETICAL):
        raise InvalidInputError(f"central-matching formulas do not apply to a {null.method} null")
    i0 = np.asarray(null.meta["i0"])
    x = fit.centers
    if null.method == CENTRAL_MATCHING:
        x0 = np.column_stack([np.ones_like(x), x, x * x])
    else:
        x0 = np.ones((x.size, 1))
    x0t = x0[i0]
    g0 = x0t.T @ x0t
    g0_inv = _chol_inverse(g0, "central Gram matrix G0")
    coef_map = g0_inv @ x0t.T @ fit.design[i0]
    return x0, coef_map


def influence_cm(fit: MixtureDensityFit, null: NullModel) -> InfluenceMatrix:
    """Influence of log fdr for central matching (or the theoretical null):
    ``A G^-1 X'`` with ``A = X0 G0~^-1 X0~' X~ - X``."""
    x0, coef_map = _central_design(fit, null)
    a = x0 @ coef_map - fit.design
    mat = a @ _g_inv(fit) @ fit.design.T
    return InfluenceMatrix(mat, null.method, fit.centers)


def cov_log_fdr_cm(fit: MixtureDensityFit, null: NullModel) -> np.ndarray:
    x0, coef_map = _central_design(fit, null)
    a = x0 @ coef_map - fit.design
    return _sym(a @ _g_inv(fit) @ a.T)


def _tail_weights(f, side):
    # S[k, l] = f_l / F_k over the tail that bin k closes
    k = f.size
    if side == LEFT:
        mask = np.tril(np.ones((k, k)))
        tail = np.cumsum(f)
    elif side == RIGHT:
        mask = np.triu(np.ones((k, k)))
        tail = np.cumsum(f[::-1])[::-1]
    else:
        raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")
    if np.any(tail <= 0):
        raise ConditioningError("empty tail: cumulative density is zero")
    return mask * f[None, :] / tail[:, None]


def tail_matrices(fit: MixtureDensityFit, null: NullModel, side: str = LEFT):
    """The weight matrices S (mixture) and S0 (null subdensity) for one tail."""
    f = fit.fitted_density
    f0 = np.exp(null.log_subdensity(fit.centers, capped=False))
    return _tail_weights(f, side), _tail_weights(f0, side)


def cov_log_Fdr(fit: MixtureDensityFit, null: NullModel, side: str = LEFT) -> np.ndarray:
    """``B G^-1 B'`` with ``B = S0 X0 G0~^-1 X0~' X~ - S X`` for binned tail Fdr."""
    x0, coef_map = _central_design(fit, null)
    s, s0 = tail_matrices(fit, null, side)
    b = s0 @ x0 @ coef_map - s @ fit.design
    return _sym(b @ _g_inv(fit) @ b.T)


def _mle_pieces(fit: MixtureDensityFit, null: NullModel):
    if null.method != MLE:
        raise InvalidInputError("MLE formulas need a null from MLE fitting")
    d, s = null.delta0, null.sigma0
    x0 = null.meta["x0"]
    n0 = null.meta["n0"]
    y1, y2 = null.meta["y1"], null.meta["y2"]
    tm = truncated_moments(d, s, x0)
    h = tm.H
    e1, e2, e3, e4 = tm.E
    # per-observation covariance of (z, z^2) under the fitted truncated normal
    cov1 = np.array([[e2 - e1 * e1, e3 - e1 * e2], [e3 - e1 * e2, e4 - e2 * e2]])
    # Jacobian of (delta0, sigma0) with respect to the natural parameters
    jac = s**2 * np.array([[1.0, 2 * d], [0.0, s]])
    x = fit.centers
    u = np.column_stack([
        (x - d) / s - h[1] / h[0],
        ((x - d) ** 2 - s**2) / s**2 - (h[2] - h[0]) / h[0],
    ])
    inside = np.abs(x) <= x0
    m = np.zeros((3, x.size))
    m[0, inside] = 1.0
    m[1, inside] = x[inside] - y1
    m[2, inside] = x[inside] ** 2 - y2
    return dict(tm=tm, cov1=cov1, jac=jac, u=u, m=m, n0=n0, inside=inside)


def influence_null_mle(fit: MixtureDensityFit, null: NullModel) -> np.ndarray:
    """d log f0+(x_k) / d y_l for MLE fitting, columns zero outside [-x0, x0].

    The common ``-1/N`` from normalizing by the total count is left out; it
    cancels against the same term in d log f.
    """
    p = _mle_pieces(fit, null)
    try:
        v_inv = np.linalg.inv(p["cov1"])
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("truncated-normal covariance V is singular") from exc
    k = fit.centers.size
    left = np.column_stack([np.ones(k), p["u"] @ p["jac"] @ v_inv / null.sigma0])
    return left @ p["m"] / p["n0"]


def influence_mle(fit: MixtureDensityFit, null: NullModel) -> InfluenceMatrix:
    """Influence of log fdr for MLE fitting."""
    x = fit.design
    mat = influence_null_mle(fit, null) - x @ _g_inv(fit) @ x.T
    return InfluenceMatrix(mat, MLE, fit.centers)


def influence_log_fdr(fit: MixtureDensityFit, null: NullModel) -> InfluenceMatrix:
    if null.method == MLE:
        return influence_mle(fit, null)
    return influence_cm(fit, null)


def influence_log_Fdr(fit: MixtureDensityFit, null: NullModel, side: str = LEFT) -> InfluenceMatrix:
    """Influence of binned log tail Fdr, any null method."""
    s, s0 = tail_matrices(fit, null, side)
    x = fit.design
    dl = x @ _g_inv(fit) @ x.T
    if null.method == MLE:
        dl0 = influence_null_mle(fit, null)
    else:
        x0, coef_map = _central_design(fit, null)
        dl0 = x0 @ coef_map @ _g_inv(fit) @ x.T
    return InfluenceMatrix(s0 @ dl0 - s @ dl, null.method, fit.centers, f"log-Fdr-{side}")


def delta_cov(influence, fit: MixtureDensityFit) -> np.ndarray:
    """``I diag(nu) I'``, the delta-method covariance with Poisson-style counts."""
    mat = influence.matrix if isinstance(influence, InfluenceMatrix) else np.asarray(influence)
    return _sym((mat * fit.expected_counts[None, :]) @ mat.T)


def nearest_bin(fit: MixtureDensityFit, z: float) -> int:
    return int(np.argmin(np.abs(fit.centers - z)))


def variance_spectrum(influence, fit: MixtureDensityFit, z: float):
    """Per-bin variance contributions ``S_k(z) = (d log fdr(z)/d y_k)^2 nu_k``
    for the bin nearest ``z``, and the implied standard deviation."""
    mat = influence.matrix if isinstance(influence, InfluenceMatrix) else np.asarray(influence)
    row = mat[nearest_bin(fit, z)]
    spec = row**2 * fit.expected_counts
    return spec, float(math.sqrt(spec.sum()))


def _clip_diag(cov, label):
    notes = ()
    d = np.diag(cov).copy()
    if np.any(d < 0):
        msg = f"{label}: negative variance {d.min():.3g} clipped to 0"
        warnings.warn(msg, stacklevel=3)
        notes = (msg,)
        d = np.clip(d, 0, None)
    return np.sqrt(d), notes


def null_param_jacobian(delta0: float, sigma0: float) -> np.ndarray:
    """d(log p0, delta0, sigma0) / d(beta0, beta1, beta2) for the central quadratic."""
    d, s = delta0, sigma0
    return np.array([
        [1.0, d, s * s + d * d],
        [0.0, s * s, 2 * d * s * s],
        [0.0, 0.0, s**3],
    ])


def cov_params_cm(fit: MixtureDensityFit, null: NullModel):
    """Covariance and sds of (p0, delta0, sigma0) for central matching.

    ``D G^-1 D' - E`` is the covariance of (log p0, delta0, sigma0); the first
    row and column are then rescaled by p0. For the theoretical null only p0
    varies.
    """
    x0, coef_map = _central_design(fit, null)
    g_inv = _g_inv(fit)
    n = fit.n
    if null.method == THEORETICAL:
        var_log = (coef_map @ g_inv @ coef_map.T).item() - 1.0 / n
        cov = np.zeros((3, 3))
        cov[0, 0] = null.p0**2 * var_log
    else:
        dmat = null_param_jacobian(null.delta0, null.sigma0) @ coef_map
        cov_log = dmat @ g_inv @ dmat.T
        cov_log[0, 0] -= 1.0 / n
        scale = np.diag([null.p0, 1.0, 1.0])
        cov = scale @ cov_log @ scale
    cov = _sym(cov)
    sd, notes = _clip_diag(cov, "central matching parameter covariance")
    return cov, sd, notes


def cov_params_mle(fit: MixtureDensityFit, null: NullModel):
    """Covariance and sds of (p0, delta0, sigma0) for MLE fitting, ``a b a'``."""
    p = _mle_pieces(fit, null)
    h = p["tm"].H
    s = null.sigma0
    theta = null.meta["theta"]
    n = null.meta["n"]
    a = np.eye(3)
    a[0, 0] = 1.0 / h[0]
    a[0, 1:] = -(null.p0 / s) * np.array([h[1] / h[0], (h[2] - h[0]) / h[0]])
    try:
        v_inv = np.linalg.inv(p["cov1"])
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("truncated-normal covariance V is singular") from exc
    b = np.zeros((3, 3))
    b[0, 0] = theta * (1 - theta) / n
    b[1:, 1:] = p["jac"] @ v_inv @ p["jac"].T / p["n0"]
    cov = _sym(a @ b @ a.T)
    sd, notes = _clip_diag(cov, "MLE parameter covariance")
    return cov, sd, notes


def influence_params(fit: MixtureDensityFit, null: NullModel) -> np.ndarray:
    """d(p0, delta0, sigma0) / d y_l, a 3 x K matrix.

    ``delta_cov`` of this matrix is the count-based counterpart of
    :func:`cov_params`, which for MLE fitting uses the model information
    instead of the observed counts.
    """
    n = fit.n
    if null.method == MLE:
        p = _mle_pieces(fit, null)
        h = p["tm"].H
        v_inv = np.linalg.inv(p["cov1"])
        ds = p["jac"] @ v_inv @ p["m"][1:] / p["n0"]
        grad_h = -(null.p0 / null.sigma0) * np.array([h[1] / h[0], (h[2] - h[0]) / h[0]])
        dp0 = null.p0 * (p["m"][0] / p["n0"] - 1.0 / null.meta["n"]) + grad_h @ ds
        return np.vstack([dp0, ds])
    x0, coef_map = _central_design(fit, null)
    dcoef = coef_map @ _g_inv(fit) @ fit.design.T
    # normalizing by the total count shifts every log f value, hence beta0, by -1/N
    dcoef[0] -= 1.0 / n
    if null.method == THEORETICAL:
        return np.vstack([null.p0 * dcoef[0], np.zeros((2, dcoef.shape[1]))])
    out = null_param_jacobian(null.delta0, null.sigma0) @ dcoef
    out[0] *= null.p0
    return out


def cov_params(fit: MixtureDensityFit, null: NullModel):
    if null.method == MLE:
        return cov_params_mle(fit, null)
    return cov_params_cm(fit, null)


def accuracy_report(fit: MixtureDensityFit, null: NullModel) -> CovarianceReport:
    """All delta-method covariances for one fit and null."""
    if null.method == MLE:
        infl = influence_mle(fit, null)
        cov_l = delta_cov(infl, fit)
        cov_left = delta_cov(influence_log_Fdr(fit, null, LEFT), fit)
        cov_right = delta_cov(influence_log_Fdr(fit, null, RIGHT), fit)
    else:
        cov_l = cov_log_fdr_cm(fit, null)
        cov_left = cov_log_Fdr(fit, null, LEFT)
        cov_right = cov_log_Fdr(fit, null, RIGHT)
    cov_p, sd_p, notes = cov_params(fit, null)
    sd_l = np.sqrt(np.clip(np.diag(cov_l), 0, None))
    return CovarianceReport(null.method, cov_l, sd_l, cov_left, cov_right, cov_p, sd_p, notes)


# --- numerical verification -------------------------------------------------


def _refit_null(fit_new: MixtureDensityFit, null: NullModel, dy: np.ndarray, x: np.ndarray):
    if null.method == CENTRAL_MATCHING:
        return central_matching(fit_new, i0=null.meta["i0"])
    if null.method == THEORETICAL:
        return theoretical_null(fit_new, i0=null.meta["i0"])
    meta = null.meta
    inside = np.abs(x) <= meta["x0"]
    di = dy[inside]
    xi = x[inside]
    n0 = meta["n0"] + di.sum()
    s1 = meta["n0"] * meta["y1"] + di @ xi
    s2 = meta["n0"] * meta["y2"] + di @ (xi * xi)
    return mle_from_stats(meta["n"] + dy.sum(), n0, s1, s2, meta["x0"],
                          init=(null.delta0, null.sigma0))


def pipeline_estimates(fit: MixtureDensityFit, null: NullModel, dy) -> dict:
    """Rerun density fit and null estimation on ``y + dy`` with the basis and
    central bins held fixed; return uncapped log fdr, binned log tail Fdr and
    (log p0, p0, delta0, sigma0)."""
    dy = np.asarray(dy, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit_new = refit_on(fit, fit.counts.counts + dy)
        null_new = _refit_null(fit_new, null, dy, fit.centers)
    lf0 = null_new.log_subdensity(fit.centers, capped=False)
    return {
        "log-fdr": log_local_fdr_bins(fit_new, null_new, capped=False),
        "log-Fdr-left": np.log(binned_tail_fdr(fit_new.log_density, lf0, LEFT)),
        "log-Fdr-right": np.log(binned_tail_fdr(fit_new.log_density, lf0, RIGHT)),
        "params": np.array([math.log(null_new.p0), null_new.p0, null_new.delta0, null_new.sigma0]),
    }


def finite_difference_influence(fit: MixtureDensityFit, null: NullModel, quantity="log-fdr",
                                h: float = 0.25, columns=None, adaptive: bool = True):
    """Central differences of ``quantity`` with respect to each count.

    ``quantity`` is one of the keys returned by :func:`pipeline_estimates`,
    or a list of keys, in which case a dict of matrices comes back.
    Columns not requested are left as NaN. With ``adaptive`` the step for bin
    l is ``min(h, nu_l / 20)``: in sparse tail bins a quarter count is many
    times the expected count and the response is far from linear. Bins with
    fewer counts than the step use a one-sided difference of the same order.
    """
    keys = [quantity] if isinstance(quantity, str) else list(quantity)
    k = fit.centers.size
    y = fit.counts.counts
    cols = range(k) if columns is None else columns
    base = pipeline_estimates(fit, null, np.zeros(k))
    out = {q: np.full((base[q].size, k), np.nan) for q in keys}

    def at(col, step):
        dy = np.zeros(k)
        dy[col] = step
        return pipeline_estimates(fit, null, dy)

    for col in cols:
        step = min(h, fit.expected_counts[col] / 20) if adaptive else h
        if y[col] >= step:
            up, down = at(col, step), at(col, -step)
            for q in keys:
                out[q][:, col] = (up[q] - down[q]) / (2 * step)
        else:
            # counts cannot go negative: second-order one-sided difference
            one, two = at(col, step), at(col, 2 * step)
            for q in keys:
                out[q][:, col] = (4 * one[q] - two[q] - 3 * base[q]) / (2 * step)
    return out[quantity] if isinstance(quantity, str) else out
