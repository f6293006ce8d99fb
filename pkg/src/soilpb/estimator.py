"""Maximum-likelihood fit of the log-sum model by projected Levenberg-Marquardt.

The likelihood is maximised over theta >= 0 by minimising the log-scale
residual sum of squares; sigma^2 is profiled out as RSS / n.

Bounds are handled with an active set: a coordinate sitting at 0 whose
gradient pushes it further down is frozen for the iteration, the damped
Gauss-Newton step is taken in the remaining coordinates and the trial point is
projected back onto theta >= 0. All linear algebra is done on the Jacobian
with unit-norm columns, which makes the iterates equivariant under rescaling
of the exposures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PARAM_NAMES, Dataset, ModelDomainError, Theta, eta_vec, jacobian, profile_loglik

SCHEMA_VERSION = 1


class FitError(RuntimeError):
    pass


class CollinearityError(FitError):
    pass


class ConvergenceError(FitError):
    """Optimizer hit ``max_iter``; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    ftol: float = 1e-10
    xtol: float = 1e-8
    lambda0: float = 1e-3
    restarts: bool = True
    kkt_tol: float = 1e-6


@dataclass
class FitResult:
    theta: Theta
    sigma2: float
    residuals: np.ndarray
    jacobian: np.ndarray
    cov_theta: np.ndarray
    converged: bool
    iterations: int
    active_bounds: frozenset = frozenset()
    pinned: frozenset = frozenset()
    fixed: dict = field(default_factory=dict)
    kkt_ok: bool = True
    history: list = field(default_factory=list)  # objective after each accepted step

    @property
    def n(self) -> int:
        return self.residuals.size

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def n_params(self) -> int:
        return 3 - len(self.pinned) - len(self.fixed)

    @property
    def sigma2_df(self) -> float:
        """RSS / (n - p), the degrees-of-freedom corrected variance."""
        return self.rss / (self.n - self.n_params)

    @property
    def residual_mean(self) -> float:
        return float(np.mean(self.residuals))

    @property
    def loglik(self) -> float:
        return profile_loglik(self.rss, self.n)

    def fitted_log(self, data: Dataset) -> np.ndarray:
        return data.z - self.residuals

    def to_dict(self) -> dict:
        cov = [[None if not math.isfinite(v) else float(v) for v in row] for row in self.cov_theta]
        return {
            "schema_version": SCHEMA_VERSION,
            "theta": self.theta.to_dict(),
            "sigma": self.sigma,
            "sigma2_df": self.sigma2_df,
            "cov": cov,
            "residual_mean": self.residual_mean,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n": self.n,
            "loglik": self.loglik,
            "active_bounds": sorted(PARAM_NAMES[k] for k in self.active_bounds),
            "pinned": sorted(PARAM_NAMES[k] for k in self.pinned),
        }


def _col_norms(X):
    return np.sqrt(np.einsum("ij,ij->j", X, X))


def _check_design(data: Dataset, free: np.ndarray) -> None:
    X = data.design()[:, free]
    d = _col_norms(X)
    s = np.linalg.svd(X / d, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        names = [("intercept", "paint exposure", "gas exposure")[k] for k in np.flatnonzero(free)]
        raise CollinearityError(
            "design is rank deficient: " + ", ".join(names) + " are collinear"
            " (e.g. an exposure that is constant across samples)"
        )


def _pinned_columns(data: Dataset) -> set[int]:
    """Parameters whose exposure column is identically zero (not identifiable)."""
    out = set()
    if not np.any(data.T):
        out.add(1)
    if not np.any(data.G):
        out.add(2)
    return out


def initial_theta(data: Dataset) -> Theta:
    """OLS of raw concentrations on (1, T, G), clipped to the feasible region."""
    L = np.exp(data.z)
    pinned = _pinned_columns(data)
    cols = [k for k in range(3) if k not in pinned]
    X = data.design()[:, cols]
    d = _col_norms(X)
    coef, *_ = np.linalg.lstsq(X / d, L, rcond=None)
    theta = np.zeros(3)
    theta[cols] = np.clip(coef / d, 0.0, None)
    gm = float(np.exp(np.mean(data.z)))
    if not np.any(theta > 0):
        theta = np.array([gm, 0.0, 0.0])
    elif not np.all(eta_vec(theta, data.T, data.G) > 0):
        theta[0] += 0.01 * gm
    return Theta.from_array(theta)


def _balanced_point(data: Dataset, pinned) -> np.ndarray:
    """Each active term contributes an equal share of the mean concentration."""
    Lbar = float(np.mean(np.exp(data.z)))
    means = [1.0, float(np.mean(data.T)), float(np.mean(data.G))]
    active = [k for k in range(3) if k not in pinned and means[k] > 0]
    b = np.zeros(3)
    for k in active:
        b[k] = Lbar / (len(active) * means[k])
    return b


def _objective(theta, data):
    try:
        eta = eta_vec(theta, data.T, data.G)
        if not np.all(eta > 0):
            return math.inf, None
        r = data.z - np.log(eta)
    except (FloatingPointError, ModelDomainError):
        return math.inf, None
    return float(r @ r), r


def _lm(data: Dataset, start: np.ndarray, free: np.ndarray, opts: FitOptions):
    theta = np.array(start, dtype=float)
    S, r = _objective(theta, data)
    if not math.isfinite(S):
        raise ModelDomainError("starting point has nonpositive linear predictor")
    lam = opts.lambda0
    converged = False
    it = 0
    history = [S]
    while it < opts.max_iter:
        it += 1
        J = jacobian(theta, data.T, data.G)
        g = J.T @ r  # descent direction for S is +g
        move = free & ((theta > 0) | (g > 0))
        d = _col_norms(J)
        move &= d > 0
        if not np.any(move):
            converged = True
            break
        Jn = J[:, move] / d[move]
        A = Jn.T @ Jn
        b = Jn.T @ r
        eye = np.eye(A.shape[0])
        accepted = False
        while lam < 1e16:
            try:
                s = np.linalg.solve(A + lam * eye, b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta.copy()
            cand[move] += s / d[move]
            np.maximum(cand, 0.0, out=cand)
            S_new, r_new = _objective(cand, data)
            if S_new < S:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent even for tiny steps: stationary to working precision
            converged = True
            break
        step = cand - theta
        rel_step = np.linalg.norm(d * step) / (np.linalg.norm(d * theta) + 1e-300)
        rel_dec = (S - S_new) / max(S, 1e-300)
        theta, S, r = cand, S_new, r_new
        history.append(S)
        lam = max(lam * 0.1, 1e-12)
        if rel_dec < opts.ftol and rel_step < opts.xtol:
            converged = True
            break
    return theta, S, r, converged, it, history


def covariance_from_jacobian(J: np.ndarray, sigma2: float, free=None) -> np.ndarray:
    """3x3 sigma2 (J^T J)^-1 over the ``free`` columns; NaN rows/cols elsewhere."""
    free = np.ones(J.shape[1], dtype=bool) if free is None else np.asarray(free, dtype=bool)
    k = J.shape[1]
    cov = np.full((k, k), np.nan)
    Jf = J[:, free]
    d = _col_norms(Jf)
    Jn = Jf / d
    A = Jn.T @ Jn
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-14 * s[0]:
        raise CollinearityError("J^T J is singular at the optimum; exposures are collinear")
    inv = np.linalg.inv(A) / np.outer(d, d)
    inv = 0.5 * (inv + inv.T)
    idx = np.flatnonzero(free)
    cov[np.ix_(idx, idx)] = sigma2 * inv
    return cov


def fit(
    data: Dataset,
    options: FitOptions | None = None,
    start: Theta | np.ndarray | None = None,
    fixed: dict[int, float] | None = None,
    compute_cov: bool = True,
) -> FitResult:
    """Fit theta >= 0 by maximum likelihood.

    ``start`` adds a user starting point ahead of the default ones. ``fixed``
    maps parameter index to a value held constant (used for profiling).
    Raises ``CollinearityError`` for a rank-deficient design and
    ``ConvergenceError`` (with ``.best``) if no start converged.
    """
    opts = options or FitOptions()
    fixed = dict(fixed or {})
    if data.n < 4:
        raise FitError(f"need at least 4 samples, got {data.n}")
    pinned = _pinned_columns(data) - set(fixed)
    free = np.ones(3, dtype=bool)
    free[list(pinned | set(fixed))] = False
    _check_design(data, np.array([k not in pinned for k in range(3)]))

    init = initial_theta(data).as_array()
    starts = []
    if start is not None:
        starts.append(start.as_array() if isinstance(start, Theta) else np.asarray(start, float))
    starts.append(init)
    if opts.restarts:
        bal = _balanced_point(data, pinned)
        starts += [0.5 * (init + bal), bal]

    best = None
    for s0 in starts:
        s0 = np.array(s0, dtype=float)
        s0[list(pinned)] = 0.0
        for k, v in fixed.items():
            s0[k] = v
        S0, _ = _objective(s0, data)
        if not math.isfinite(S0):
            continue
        theta, S, r, conv, it, hist = _lm(data, s0, free, opts)
        if best is None or S < best[1] or (conv and not best[3] and S <= best[1]):
            best = (theta, S, r, conv, it, hist)
    if best is None:
        raise ModelDomainError("no feasible starting point")

    theta, S, r, conv, it, hist = best
    n = data.n
    sigma2 = S / n
    J = jacobian(theta, data.T, data.G)
    g = J.T @ r
    d = _col_norms(J)
    gn = np.where(d > 0, g / np.where(d > 0, d, 1.0), 0.0) / math.sqrt(max(S, 1e-300) / n)
    at_bound = free & (theta == 0.0)
    kkt_ok = S <= 1e-24 * n or bool(  # an exact fit is trivially stationary
        np.all(np.abs(gn[free & ~at_bound]) <= opts.kkt_tol * math.sqrt(n))
        and np.all(gn[at_bound] <= opts.kkt_tol * math.sqrt(n))
    )
    if compute_cov:
        cov = covariance_from_jacobian(J, sigma2, free)
    else:
        cov = np.full((3, 3), np.nan)
    result = FitResult(
        theta=Theta.from_array(theta),
        sigma2=sigma2,
        residuals=r,
        jacobian=J,
        cov_theta=cov,
        converged=conv,
        iterations=it,
        active_bounds=frozenset(int(k) for k in np.flatnonzero(at_bound)),
        pinned=frozenset(pinned),
        fixed=fixed,
        kkt_ok=kkt_ok,
        history=hist,
    )
    if not conv:
        raise ConvergenceError(f"no convergence after {opts.max_iter} iterations", best=result)
    return result


def objective(theta, data: Dataset) -> float:
    """Residual sum of squares on the log scale (inf outside the domain)."""
    return _objective(np.asarray(theta, float), data)[0]
