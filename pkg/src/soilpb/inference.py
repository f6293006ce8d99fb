"""Standard errors, residual bootstrap and profile-likelihood intervals."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, stats

from .estimator import SCHEMA_VERSION, FitError, FitOptions, FitResult, fit as fit_model
from .model import PARAM_NAMES, Dataset, ModelDomainError, Theta


class BootstrapError(RuntimeError):
    pass


class AsymptoticSE(NamedTuple):
    se: np.ndarray
    at_bound: tuple[bool, bool, bool]


def asymptotic_se(fit: FitResult, df_corrected: bool = False) -> AsymptoticSE:
    """sqrt(diag(sigma^2 (J^T J)^-1)); ``at_bound`` marks estimates sitting at 0.

    Standard errors of parameters on the boundary are not reliable. With
    ``df_corrected`` the variance uses RSS / (n - p) instead of RSS / n.
    """
    cov = np.asarray(fit.cov_theta, dtype=float)
    if not np.all(np.isfinite(np.diag(cov)[[k for k in range(3) if k not in fit.pinned]])):
        raise FitError("covariance is not finite (singular J^T J?)")
    if df_corrected and fit.sigma2 > 0:
        cov = cov * (fit.sigma2_df / fit.sigma2)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    flags = tuple(k in fit.active_bounds for k in range(3))
    return AsymptoticSE(se, flags)


# -- residual bootstrap -------------------------------------------------------

@dataclass
class BootstrapResult:
    theta: np.ndarray  # (B_ok, 3)
    sigma2: np.ndarray  # (B_ok,)
    replicate_ids: np.ndarray  # which replicate indices succeeded
    indices: np.ndarray  # (B_ok, n) resampled residual positions
    seed: int
    B: int
    failures: int = 0
    studentized: bool = False

    @property
    def se_theta(self) -> np.ndarray:
        if self.theta.shape[0] < 2:
            return np.zeros(3)
        return self.theta.std(axis=0, ddof=1)

    def thetas(self):
        return [Theta.from_array(t) for t in self.theta]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "B": self.B,
            "failures": self.failures,
            "studentized": self.studentized,
            "se_theta": dict(zip(PARAM_NAMES, map(float, self.se_theta))),
            "replicates": [
                {"id": int(i), **dict(zip(PARAM_NAMES, map(float, t))), "sigma2": float(s)}
                for i, t, s in zip(self.replicate_ids, self.theta, self.sigma2)
            ],
        }


def _residual_pool(fit: FitResult, studentized: bool) -> np.ndarray:
    e = fit.residuals
    if not studentized:
        return e
    J = fit.jacobian[:, [k for k in range(3) if k not in fit.pinned]]
    h = np.einsum("ij,ij->i", J @ np.linalg.pinv(J.T @ J), J)
    return e / np.sqrt(np.clip(1.0 - h, 1e-12, None))


def _one_replicate(args):
    b, seed, mu, pool, data, start, options = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    idx = rng.integers(0, pool.size, pool.size)
    try:
        f = fit_model(data.with_response(mu + pool[idx]), options, start=start, compute_cov=False)
    except (FitError, ModelDomainError):
        return b, None, None, idx
    return b, f.theta.as_array(), f.sigma2, idx


def residual_bootstrap(
    fit: FitResult,
    data: Dataset,
    B: int = 100,
    seed: int = 0,
    studentized: bool = False,
    workers: int = 1,
    options: FitOptions | None = None,
    max_failure_rate: float = 0.2,
) -> BootstrapResult:
    """Resample residuals with replacement, add them to the fitted values, refit.

    Residuals are not mean-centred. Replicate ``b`` draws from
    ``SeedSequence(seed, spawn_key=(b,))`` so results do not depend on
    ``workers``. Refits start from the original estimate.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    mu = fit.fitted_log(data)
    pool = _residual_pool(fit, studentized)
    tasks = [(b, seed, mu, pool, data, fit.theta, options) for b in range(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_one_replicate, tasks, chunksize=max(1, B // (4 * workers))))
    else:
        out = [_one_replicate(t) for t in tasks]
    out.sort(key=lambda t: t[0])
    ok = [o for o in out if o[1] is not None]
    failures = B - len(ok)
    if failures > max_failure_rate * B:
        raise BootstrapError(f"{failures} of {B} bootstrap refits failed")
    n = data.n
    return BootstrapResult(
        theta=np.array([o[1] for o in ok]).reshape(-1, 3),
        sigma2=np.array([o[2] for o in ok]),
        replicate_ids=np.array([o[0] for o in ok], dtype=int),
        indices=np.array([o[3] for o in ok], dtype=int).reshape(-1, n),
        seed=seed,
        B=B,
        failures=failures,
        studentized=studentized,
    )


def bootstrap_responses(fit: FitResult, data: Dataset, boot: BootstrapResult) -> np.ndarray:
    """(B_ok, n) replicate log-responses, rebuilt from the stored resampling indices."""
    pool = _residual_pool(fit, boot.studentized)
    return fit.fitted_log(data)[None, :] + pool[boot.indices]


# -- profile likelihood ---------------------------------------------------------

@dataclass
class ProfileInterval:
    parameter: str
    level: float
    estimate: float
    lower: float
    upper: float | None  # None: not bracketed below the cap
    lower_at_bound: bool
    trace: list = field(default_factory=list)  # (value, profile loglik)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "parameter": self.parameter,
            "level": self.level,
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
            "upper_open": self.upper is None,
            "lower_at_bound": self.lower_at_bound,
        }

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "profile_loglik"])
            for v, ll in self.trace:
                w.writerow([repr(float(v)), repr(float(ll))])


def likelihood_interval(
    deviance: Callable[[float], float],
    estimate: float,
    cutoff: float,
    step: float,
    cap: float,
    rtol: float = 1e-6,
    lower_bound: float | None = 0.0,
) -> tuple[float, float | None, bool]:
    """Endpoints where ``deviance(v) = cutoff`` on each side of ``estimate``.

    ``deviance`` must be 0 at the estimate and increase away from it. The
    lower endpoint is clamped at ``lower_bound`` when the deviance stays below
    the cutoff all the way down; the upper one is searched by doubling
    ``step`` and reported as ``None`` if ``cap`` is passed first.
    Returns (lower, upper, lower_clamped).
    """

    def root(a, b):
        xtol = rtol * max(abs(a), abs(b), 1e-300)
        return optimize.brentq(lambda v: deviance(v) - cutoff, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)

    # lower side
    clamped = False
    if lower_bound is not None and estimate <= lower_bound:
        lower = lower_bound
        clamped = True
    else:
        h = step
        lo = estimate - h
        while True:
            if lower_bound is not None and lo <= lower_bound:
                lo = lower_bound
                if deviance(lo) <= cutoff:
                    lower, clamped = lo, True
                    break
                lower = root(lo, estimate)
                break
            if deviance(lo) > cutoff:
                lower = root(lo, estimate)
                break
            h *= 2.0
            lo = estimate - h
    # upper side
    h = step
    hi = estimate + h
    prev = estimate
    upper = None
    while hi <= cap:
        if deviance(hi) > cutoff:
            upper = root(prev, hi)
            break
        prev = hi
        h *= 2.0
        hi = estimate + h
    else:
        if cap > prev and deviance(cap) > cutoff:
            upper = root(prev, cap)
    return lower, upper, clamped


class _Profiler:
    """Profile RSS of one parameter with the others (and sigma^2) maximised out."""

    def __init__(self, fit: FitResult, data: Dataset, k: int, sigma2: float | None, options):
        self.fit, self.data, self.k = fit, data, k
        self.sigma2 = sigma2
        self.options = options
        self.cache: dict[float, float] = {}

    def rss(self, v: float) -> float:
        v = float(v)
        if v not in self.cache:
            if v == self.fit.theta.as_array()[self.k]:
                self.cache[v] = self.fit.rss
            else:
                start = self.fit.theta.as_array().copy()
                start[self.k] = v
                try:
                    f = fit_model(self.data, self.options, start=start, fixed={self.k: v}, compute_cov=False)
                    self.cache[v] = f.rss
                except ModelDomainError:
                    self.cache[v] = math.inf
                except FitError as exc:
                    best = getattr(exc, "best", None)
                    self.cache[v] = best.rss if best is not None else math.inf
        return self.cache[v]

    def loglik(self, v: float) -> float:
        n = self.data.n
        r = self.rss(v)
        if not math.isfinite(r):
            return -math.inf
        if self.sigma2 is None:
            return -0.5 * n * (math.log(2 * math.pi * r / n) + 1.0)
        return -0.5 * n * math.log(2 * math.pi * self.sigma2) - r / (2 * self.sigma2)

    def deviance(self, v: float) -> float:
        rmin = self.fit.rss
        r = self.rss(v)
        if not math.isfinite(r):
            return math.inf
        # the fixed-k fit cannot beat the global optimum; clip rounding noise
        r = max(r, rmin)
        if self.sigma2 is None:
            return self.data.n * math.log(r / rmin) if rmin > 0 else (0.0 if r == 0 else math.inf)
        return (r - rmin) / self.sigma2


def profile_interval(
    fit: FitResult,
    data: Dataset,
    k: int,
    level: float = 0.95,
    cap_factor: float = 100.0,
    rtol: float = 1e-6,
    sigma2: float | None = None,
    options: FitOptions | None = None,
) -> ProfileInterval:
    """Likelihood-ratio interval for parameter ``k``.

    By default sigma^2 is profiled out along with the other two thetas; pass
    ``sigma2`` to treat the variance as known.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    if k in fit.pinned:
        raise FitError(f"{PARAM_NAMES[k]} is not identifiable in this dataset")
    prof = _Profiler(fit, data, k, sigma2, options)
    est = float(fit.theta.as_array()[k])
    cutoff = float(stats.chi2.ppf(level, 1))
    se = math.sqrt(fit.cov_theta[k, k]) if math.isfinite(fit.cov_theta[k, k]) else 0.0
    scale = se if se > 0 else max(abs(est), 1.0)
    step = 0.5 * scale
    cap = cap_factor * max(est, scale)
    lower, upper, clamped = likelihood_interval(prof.deviance, est, cutoff, step, cap, rtol=rtol)
    trace = sorted((v, prof.loglik(v)) for v, r in prof.cache.items() if math.isfinite(r))
    return ProfileInterval(PARAM_NAMES[k], level, est, lower, upper, clamped, trace)


@dataclass
class ConfidenceCurve:
    parameter: str
    values: np.ndarray
    loglik: np.ndarray
    signed_root: np.ndarray  # sign(v - est) * sqrt(deviance)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "profile_loglik", "signed_root_deviance"])
            for row in zip(self.values, self.loglik, self.signed_root):
                w.writerow([repr(float(x)) for x in row])


def confidence_curve_trace(
    fit: FitResult,
    data: Dataset,
    k: int,
    grid,
    sigma2: float | None = None,
    options: FitOptions | None = None,
) -> ConfidenceCurve:
    prof = _Profiler(fit, data, k, sigma2, options)
    est = float(fit.theta.as_array()[k])
    grid = np.asarray(sorted(float(v) for v in grid))
    ll = np.array([prof.loglik(v) for v in grid])
    dev = np.array([prof.deviance(v) for v in grid])
    root = np.sign(grid - est) * np.sqrt(dev)
    return ConfidenceCurve(PARAM_NAMES[k], grid, ll, root)


def default_grid(interval: ProfileInterval, points: int = 41) -> np.ndarray:
    """Evenly spaced grid spanning the interval (plus 25% margin on open/closed ends)."""
    lo = interval.lower
    hi = interval.upper if interval.upper is not None else interval.estimate + 4 * (interval.estimate - lo + 1e-12)
    pad = 0.25 * (hi - lo)
    grid = np.linspace(max(0.0, lo - pad), hi + pad, points)
    return np.union1d(grid, [interval.estimate])
