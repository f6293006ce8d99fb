"""Regression diagnostics on the Gauss-Newton linearization at the fitted theta.

Leverages, studentized residuals with Bonferroni outlier p-values, Cook's
distance, the Cook-Weisberg score test for non-constant variance, lowess and
marginal-model-plot data, the pooled within-year variance ratio, and a check
of the background estimate against reference (e.g. park) samples.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimator import SCHEMA_VERSION, FitResult
from .model import Dataset

# 95% of replicate measurements within a factor of 2.7 => log-scale SD about 0.5
MEASUREMENT_SD_LOG = 0.5


class DiagnosticsError(ValueError):
    pass


def _free_jacobian(fit: FitResult) -> np.ndarray:
    cols = [k for k in range(3) if k not in fit.pinned and k not in fit.fixed]
    return fit.jacobian[:, cols]


def leverage(J: np.ndarray) -> np.ndarray:
    """Diagonal of J (J^T J)^-1 J^T."""
    d = np.sqrt(np.einsum("ij,ij->j", J, J))
    Q, _ = np.linalg.qr(J / d)
    return np.einsum("ij,ij->i", Q, Q)


@dataclass
class Studentized:
    leverage: np.ndarray
    student_t: np.ndarray  # externally studentized; NaN where h == 1
    bonferroni_p: np.ndarray
    perfect_leverage: np.ndarray  # bool mask


def studentize(residuals, J, tol: float = 1e-10) -> Studentized:
    e = np.asarray(residuals, dtype=float)
    n, p = J.shape
    if n - p - 1 < 1:
        raise DiagnosticsError("need n > p + 1 for external studentization")
    h = leverage(J)
    perfect = h >= 1.0 - tol
    one_minus = np.where(perfect, np.nan, 1.0 - h)
    rss = float(e @ e)
    s2_del = (rss - e * e / one_minus) / (n - p - 1)
    s2_del = np.clip(s2_del, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = e / np.sqrt(s2_del * one_minus)
    t = np.where(np.isfinite(t) | perfect, t, np.where(e == 0, 0.0, np.inf))
    pvals = np.minimum(1.0, n * 2.0 * stats.t.sf(np.abs(t), n - p - 1))
    return Studentized(h, t, pvals, perfect)


def hat_and_student(fit: FitResult, data: Dataset | None = None) -> Studentized:
    return studentize(fit.residuals, _free_jacobian(fit))


def cooks_distance_from(residuals, J) -> np.ndarray:
    """D_i = r_i^2 h_i / (p (1 - h_i)) with internally studentized r_i."""
    e = np.asarray(residuals, dtype=float)
    n, p = J.shape
    h = leverage(J)
    s2 = float(e @ e) / (n - p)
    if s2 == 0:
        return np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = e * e / (s2 * (1.0 - h))
        D = r2 * h / (p * (1.0 - h))
    return np.where(h >= 1.0 - 1e-10, np.where(e == 0, 0.0, np.inf), D)


def cooks_distance(fit: FitResult, data: Dataset | None = None) -> np.ndarray:
    return cooks_distance_from(fit.residuals, _free_jacobian(fit))


@dataclass(frozen=True)
class ScoreTest:
    statistic: float
    df: int
    p_value: float


def score_test_hetero(fit: FitResult, data: Dataset, predictors=None) -> ScoreTest:
    """Cook-Weisberg score test; default variance predictor is the fitted log mean."""
    e = fit.residuals
    n = e.size
    if predictors is None:
        Z = fit.fitted_log(data)[:, None]
    else:
        Z = np.asarray(predictors, dtype=float).reshape(n, -1)
    if np.any(np.ptp(Z, axis=0) == 0):
        raise DiagnosticsError("variance predictor is constant")
    sigma2 = float(e @ e) / n
    if sigma2 == 0:
        raise DiagnosticsError("zero residual variance")
    u = e * e / sigma2
    X = np.column_stack([np.ones(n), Z])
    coef, *_ = np.linalg.lstsq(X, u, rcond=None)
    uhat = X @ coef
    ssreg = float(np.sum((uhat - u.mean()) ** 2))
    stat = ssreg / 2.0
    df = Z.shape[1]
    return ScoreTest(stat, df, float(stats.chi2.sf(stat, df)))


# -- lowess -------------------------------------------------------------------

def _neighbour_weights(x, fraction):
    n = x.size
    k = min(n, max(2, int(math.floor(fraction * n + 1e-10))))
    dist = np.abs(x[:, None] - x[None, :])
    h = np.partition(dist, k - 1, axis=1)[:, k - 1]
    W = np.zeros_like(dist)
    pos = h > 0
    u = dist[pos] / h[pos, None]
    W[pos] = np.where(u < 1.0, (1.0 - np.clip(u, 0, 1) ** 3) ** 3, 0.0)
    # all k nearest neighbours tie with x_i: weight the tied points equally
    W[~pos] = (dist[~pos] == 0).astype(float)
    return W


def _local_linear(x, y, W):
    """Row-wise weighted linear fits evaluated at each x_i."""
    sw = W.sum(axis=1)
    xbar = (W @ x) / sw
    ybar = (W @ y) / sw
    dx = x[None, :] - xbar[:, None]
    sxx = np.einsum("ij,ij->i", W, dx * dx)
    sxy = np.einsum("ij,ij->i", W, dx * (y[None, :] - ybar[:, None]))
    scale = np.einsum("ij,ij->i", W, np.abs(dx)) ** 2 / sw
    ok = sxx > 1e-12 * np.maximum(scale, 1e-300)
    slope = np.where(ok, sxy / np.where(ok, sxx, 1.0), 0.0)
    return ybar + slope * (x - xbar)


def lowess(x, y, fraction: float = 0.7, robust_iterations: int = 3) -> np.ndarray:
    """Locally weighted linear smoother (tricube kernel, bisquare robustness).

    Each point is fitted from its ``floor(fraction * n)`` nearest neighbours.
    Returns smoothed values in the order of ``x``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    if x.size < 3:
        raise ValueError("lowess needs at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("x and y must be finite")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    W = _neighbour_weights(x, fraction)
    fitted = _local_linear(x, y, W)
    for _ in range(robust_iterations):
        res = y - fitted
        s = float(np.median(np.abs(res)))
        if s == 0:
            break
        b = np.clip(res / (6.0 * s), -1.0, 1.0)
        rw = (1.0 - b * b) ** 2
        Wr = W * rw[None, :]
        empty = Wr.sum(axis=1) == 0
        Wr[empty] = W[empty]
        fitted = _local_linear(x, y, Wr)
    return fitted


def smoother_matrix(x, fraction: float = 0.7) -> np.ndarray:
    """Linear operator L of the non-robust smoother: lowess(x, y, f, 0) == L @ y."""
    x = np.asarray(x, dtype=float)
    W = _neighbour_weights(x, fraction)
    sw = W.sum(axis=1)
    xbar = (W @ x) / sw
    dx = x[None, :] - xbar[:, None]
    sxx = np.einsum("ij,ij->i", W, dx * dx)
    scale = np.einsum("ij,ij->i", W, np.abs(dx)) ** 2 / sw
    ok = sxx > 1e-12 * np.maximum(scale, 1e-300)
    slope_coef = np.where(ok, (x - xbar) / np.where(ok, sxx, 1.0), 0.0)
    return W / sw[:, None] + slope_coef[:, None] * W * dx


# -- marginal model plots -----------------------------------------------------

@dataclass
class MarginalPlot:
    predictor: str
    x: np.ndarray
    data_smooth: np.ndarray
    model_smooth: np.ndarray
    band: np.ndarray  # approx. SD of the data smooth, sigma * ||row of L||

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "data_smooth", "model_smooth", "band"])
            for row in zip(self.x, self.data_smooth, self.model_smooth, self.band):
                w.writerow([repr(float(v)) for v in row])


def marginal_plot_data(
    fit: FitResult,
    data: Dataset,
    predictors=("paint_exposure", "gas_exposure", "fitted"),
    fraction: float = 0.7,
    robust_iterations: int = 0,
) -> list[MarginalPlot]:
    """Smooths of observed and fitted log concentration against each predictor.

    The two smooths share the sorted predictor values as grid; if the model is
    right they should track each other within a couple of ``band`` widths.
    """
    mu = fit.fitted_log(data)
    columns = {
        "paint_exposure": data.T,
        "gas_exposure": data.G,
        "year_built": data.year.astype(float),
        "fitted": mu,
    }
    out = []
    for name in predictors:
        x = np.asarray(columns[name], dtype=float)
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ds = lowess(xs, data.z[order], fraction, robust_iterations)
        ms = lowess(xs, mu[order], fraction, robust_iterations)
        L = smoother_matrix(xs, fraction)
        band = math.sqrt(fit.sigma2) * np.sqrt(np.einsum("ij,ij->i", L, L))
        out.append(MarginalPlot(name, xs, ds, ms, band))
    return out


# -- variance ratio -------------------------------------------------------------

def pooled_within_year_variance(z, year) -> float:
    """Within-year sample variances of z pooled with df weights (groups with >= 2 samples)."""
    z = np.asarray(z, dtype=float)
    year = np.asarray(year)
    ss = 0.0
    df = 0
    for y in np.unique(year):
        g = z[year == y]
        if g.size >= 2:
            ss += float(np.sum((g - g.mean()) ** 2))
            df += g.size - 1
    if df == 0:
        raise DiagnosticsError("no year built has two or more samples")
    return ss / df


@dataclass(frozen=True)
class VarianceRatio:
    ratio: float
    se: float | None
    pooled_variance: float


def variance_ratio(fit: FitResult, data: Dataset, bootstrap=None) -> VarianceRatio:
    """sigma_hat^2 / pooled within-year variance, with bootstrap SE if replicates given."""
    from .inference import bootstrap_responses

    V = pooled_within_year_variance(data.z, data.year)
    ratio = fit.sigma2 / V
    se = None
    if bootstrap is not None and bootstrap.theta.shape[0] > 1:
        Z = bootstrap_responses(fit, data, bootstrap)
        reps = np.array([s2 / pooled_within_year_variance(zb, data.year) for s2, zb in zip(bootstrap.sigma2, Z)])
        se = float(reps.std(ddof=1))
    return VarianceRatio(ratio, se, V)


# -- background consistency -------------------------------------------------------

@dataclass(frozen=True)
class BackgroundCheck:
    reference_mean: float
    reference_se: float
    background: float
    background_se: float
    z: float
    consistent: bool


def consistency_z(ref_mean, ref_se, theta0, theta0_se, critical: float = 1.96) -> BackgroundCheck:
    z = (ref_mean - theta0) / math.hypot(ref_se, theta0_se)
    return BackgroundCheck(ref_mean, ref_se, theta0, theta0_se, z, abs(z) < critical)


def background_consistency(reference_samples, fit: FitResult, critical: float = 1.96) -> BackgroundCheck:
    """Compare mean reference concentration (ppm) with the fitted background."""
    ref = np.asarray(reference_samples, dtype=float)
    if ref.size == 0:
        raise DiagnosticsError("no reference samples")
    se_ref = float(ref.std(ddof=1) / math.sqrt(ref.size)) if ref.size > 1 else 0.0
    se0 = math.sqrt(fit.cov_theta[0, 0])
    return consistency_z(float(ref.mean()), se_ref, fit.theta.background, se0, critical)


# -- report -------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    ids: tuple
    residuals: np.ndarray
    studentized: Studentized
    cooks_d: np.ndarray
    score_test: ScoreTest | None
    variance_ratio: VarianceRatio | None
    background: BackgroundCheck | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        st = self.studentized
        worst = int(np.nanargmin(st.bonferroni_p))
        top = int(np.argmax(self.cooks_d))
        out = {
            "schema_version": SCHEMA_VERSION,
            "n": int(self.residuals.size),
            "leverage_sum": float(st.leverage.sum()),
            "min_bonferroni_p": float(st.bonferroni_p[worst]),
            "min_bonferroni_id": self.ids[worst],
            "outliers_at_0.05": [self.ids[i] for i in np.flatnonzero(st.bonferroni_p < 0.05)],
            "max_cooks_d": float(self.cooks_d[top]),
            "max_cooks_id": self.ids[top],
            "perfect_leverage": [self.ids[i] for i in np.flatnonzero(st.perfect_leverage)],
            "measurement_sd_log_benchmark": MEASUREMENT_SD_LOG,
            "notes": list(self.notes),
        }
        if self.score_test is not None:
            out["score_test"] = {"statistic": self.score_test.statistic, "df": self.score_test.df,
                                 "p_value": self.score_test.p_value}
        if self.variance_ratio is not None:
            out["variance_ratio"] = {"ratio": self.variance_ratio.ratio, "se": self.variance_ratio.se,
                                     "pooled_within_year_variance": self.variance_ratio.pooled_variance}
        if self.background is not None:
            b = self.background
            out["background_check"] = {"reference_mean": b.reference_mean, "reference_se": b.reference_se,
                                       "background": b.background, "background_se": b.background_se,
                                       "z": b.z, "consistent": b.consistent}
        return out

    def write_csv(self, path) -> None:
        st = self.studentized
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "residual", "student_t", "bonferroni_p", "leverage", "cooks_d"])
            for i, sid in enumerate(self.ids):
                w.writerow([sid] + [repr(float(v)) for v in (
                    self.residuals[i], st.student_t[i], st.bonferroni_p[i], st.leverage[i], self.cooks_d[i])])


def diagnose(fit: FitResult, data: Dataset, bootstrap=None, reference_samples=None) -> DiagnosticsReport:
    notes = []
    try:
        score = score_test_hetero(fit, data)
    except DiagnosticsError as exc:
        score = None
        notes.append(f"score test skipped: {exc}")
    try:
        vr = variance_ratio(fit, data, bootstrap)
    except DiagnosticsError as exc:
        vr = None
        notes.append(f"variance ratio skipped: {exc}")
    bg = None
    if reference_samples is not None and len(reference_samples):
        bg = background_consistency(reference_samples, fit)
    return DiagnosticsReport(data.ids, fit.residuals, hat_and_student(fit), cooks_distance(fit), score, vr, bg, notes)
