"""Transform-both-sides log-sum model.

    log L = log(theta0 + theta1 * T + theta2 * G) + eps,   eps ~ N(0, sigma^2)

``T`` is the cumulative paint exposure and ``G`` the cumulative gasoline
exposure (Mt). All thetas are in ppm (per Mt for the two rates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("background", "paint_rate", "gas_rate")


class ModelDomainError(ValueError):
    """The linear predictor is not strictly positive where a log is needed."""


@dataclass(frozen=True)
class Theta:
    background: float
    paint_rate: float
    gas_rate: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def from_array(cls, a) -> "Theta":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.background, self.paint_rate, self.gas_rate])

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in PARAM_NAMES}


@dataclass(frozen=True)
class DesignPoint:
    paint_exposure: float
    gas_exposure: float
    log_concentration: float = 0.0
    year_built: int = 0


@dataclass(frozen=True)
class Dataset:
    """Column-oriented sample data joined to exposures.

    ``T`` and ``G`` are exposures, ``z`` the observed log concentrations.
    """

    T: np.ndarray
    G: np.ndarray
    z: np.ndarray
    year: np.ndarray
    ids: tuple[str, ...] = ()
    site: tuple[str, ...] = ()

    def __post_init__(self):
        cols = {}
        for name in ("T", "G", "z"):
            cols[name] = np.array(getattr(self, name), dtype=float).reshape(-1)
        n = cols["z"].size
        year = np.array(self.year, dtype=int).reshape(-1)
        if year.size == 0 and n:
            year = np.zeros(n, dtype=int)
        cols["year"] = year
        for name, v in cols.items():
            if v.size != n:
                raise ValueError(f"column {name} has length {v.size}, expected {n}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if np.any(cols["T"] < 0) or np.any(cols["G"] < 0):
            raise ValueError("exposures must be nonnegative")
        if not np.all(np.isfinite(cols["z"])):
            raise ValueError("log concentrations must be finite")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(n))
        site = tuple(self.site) if self.site else ("other",) * n
        if len(ids) != n or len(site) != n:
            raise ValueError("ids/site length mismatch")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "site", site)

    @classmethod
    def from_points(cls, points) -> "Dataset":
        points = list(points)
        return cls(
            T=[p.paint_exposure for p in points],
            G=[p.gas_exposure for p in points],
            z=[p.log_concentration for p in points],
            year=[p.year_built for p in points],
        )

    @property
    def n(self) -> int:
        return self.z.size

    def design(self) -> np.ndarray:
        """``n x 3`` matrix with columns (1, T, G)."""
        return np.column_stack([np.ones(self.n), self.T, self.G])

    def with_response(self, z) -> "Dataset":
        return Dataset(self.T, self.G, z, self.year, self.ids, self.site)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            self.T[index], self.G[index], self.z[index], self.year[index],
            tuple(self.ids[i] for i in index), tuple(self.site[i] for i in index),
        )


@dataclass(frozen=True)
class ModelEval:
    eta: float
    mu_log: float
    gradient: np.ndarray


def linear_predictor(theta: Theta, point: DesignPoint) -> float:
    return theta.background + theta.paint_rate * point.paint_exposure + theta.gas_rate * point.gas_exposure


def log_mean(theta: Theta, point: DesignPoint) -> ModelEval:
    eta = linear_predictor(theta, point)
    if not eta > 0:
        raise ModelDomainError(f"linear predictor {eta} <= 0")
    grad = np.array([1.0, point.paint_exposure, point.gas_exposure]) / eta
    return ModelEval(eta, math.log(eta), grad)


def fitted_mean(theta: Theta, sigma2: float, point: DesignPoint) -> float:
    """Mean concentration on the ppm scale, with the lognormal factor exp(sigma2/2)."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    return linear_predictor(theta, point) * math.exp(sigma2 / 2.0)


def log_likelihood(theta: Theta, sigma2: float, points) -> float:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    total = 0.0
    for p in points:
        r = p.log_concentration - log_mean(theta, p).mu_log
        total += -0.5 * math.log(2 * math.pi * sigma2) - r * r / (2 * sigma2)
    return total


# Vectorised forms used by the estimator and everything downstream.

def eta_vec(theta, T, G) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    return th[0] + th[1] * np.asarray(T) + th[2] * np.asarray(G)


def mu_log_vec(theta, T, G) -> np.ndarray:
    eta = eta_vec(theta, T, G)
    if not np.all(eta > 0):
        raise ModelDomainError("linear predictor <= 0 for some samples")
    return np.log(eta)


def jacobian(theta, T, G) -> np.ndarray:
    """``n x 3`` matrix of d mu_log / d theta = (1, T, G) / eta."""
    eta = eta_vec(theta, T, G)
    if not np.all(eta > 0):
        raise ModelDomainError("linear predictor <= 0 for some samples")
    return np.column_stack([np.ones_like(eta), np.asarray(T, float), np.asarray(G, float)]) / eta[:, None]


def profile_loglik(rss: float, n: int) -> float:
    """Log-likelihood with sigma^2 replaced by its MLE ``rss / n``."""
    return -0.5 * n * (math.log(2 * math.pi * rss / n) + 1.0)
