"""Synthetic soil-lead datasets under the base model and its error extensions.

Base model: log L = log(theta0 + theta1 T_y + theta2 G_y) + eps.

Extended model: the exposures are multiplied by weighted averages of positive
multiplicative errors,

    D_y = sum_{i>=y} s_i e_i d_ij / sum_{i>=y} s_i,

where ``e_i`` are yearly measurement errors in the consumption series (shared
by all structures when ``shared`` is set) and ``d_ij`` are per-structure
yearly loss multipliers. Both are lognormal with the configured mean and SD.

Randomness: every sample draws from its own stream
``SeedSequence(seed, spawn_key=(1, i))`` and the shared yearly errors from
``spawn_key=(0,)``, so output does not depend on generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, Theta, eta_vec
from .series import CumulativeExposure, YearlySeries


@dataclass(frozen=True)
class ErrorConfig:
    epsilon_mean: float = 1.0
    epsilon_sd: float = 0.0
    shared: bool = True
    delta_sd: float = 0.0

    def __post_init__(self):
        if not self.epsilon_mean > 0:
            raise ValueError("epsilon_mean must be > 0")
        if self.epsilon_sd < 0 or self.delta_sd < 0:
            raise ValueError("standard deviations must be >= 0")

    @property
    def product_variance(self) -> float:
        """Var(e * d) with E(d) = 1 and e, d independent."""
        m, s, sd = self.epsilon_mean, self.epsilon_sd, self.delta_sd
        return (s * s + m * m) * (sd * sd + 1.0) - m * m


@dataclass(frozen=True)
class SimConfig:
    theta: Theta
    sigma: float
    paint: CumulativeExposure
    gas: CumulativeExposure
    year_weights: dict = field(default_factory=dict)
    n: int = 300
    seed: int = 0
    site: str = "foundation"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if (self.paint.y_min, self.paint.measurement_year) != (self.gas.y_min, self.gas.measurement_year):
            raise ValueError("paint and gas exposures must share a domain")


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of the underlying normal for a lognormal with given mean/SD."""
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


def _positive_draws(rng, mean, sd, size):
    if sd == 0:
        return np.full(size, float(mean))
    mu, s = lognormal_params(mean, sd)
    return rng.lognormal(mu, s, size)


def yearly_amounts(exposure: CumulativeExposure) -> np.ndarray:
    """Recover s_y from tail sums: s_y = C_y - C_{y+1}, s_Y = C_Y."""
    v = exposure.values
    return np.clip(np.append(v[:-1] - v[1:], v[-1]), 0.0, None)


def year_weight_preset(name: str, y_min: int = 1902, y_max: int = 1986) -> dict[int, float]:
    """Year-built distributions: 'mn_like', 'us_like' or 'uniform'."""
    years = np.arange(y_min, y_max + 1)
    if name == "uniform":
        w = np.ones(years.size)
    elif name == "mn_like":
        # inner-city stock: most structures before 1930, thin tail afterwards
        w = np.exp(-(years - y_min) / 14.0) + 0.02
    elif name == "us_like":
        # mostly post-1930, nothing after 1979
        w = np.exp(-0.5 * ((years - 1952) / 14.0) ** 2) + 0.05
        w[years > 1979] = 0.0
    else:
        raise ValueError(f"unknown preset {name!r}")
    return {int(y): float(x) for y, x in zip(years, w / w.sum())}


def _year_table(cfg: SimConfig):
    if cfg.year_weights:
        years = np.array(sorted(cfg.year_weights), dtype=int)
        w = np.array([cfg.year_weights[y] for y in years], dtype=float)
    else:
        years = cfg.paint.years
        w = np.ones(years.size)
    if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValueError("year weights must be nonnegative with positive total")
    if years.min() < cfg.paint.y_min or years.max() > cfg.paint.measurement_year:
        raise ValueError("year weights outside the exposure domain")
    keep = w > 0
    return years[keep], np.cumsum(w[keep]) / w[keep].sum()


def _delta(amounts, start, eps, rng, delta_sd):
    """Weighted average of e_i * d_i over the tail window starting at index ``start``."""
    w = amounts[start:]
    tot = w.sum()
    if tot == 0:
        return 1.0
    e = eps[start:]
    if delta_sd > 0:
        e = e * _positive_draws(rng, 1.0, delta_sd, w.size)
    return float(w @ e) / tot


def simulate(sim: SimConfig, err: ErrorConfig | None = None) -> Dataset:
    years_tab, cdf = _year_table(sim)
    th = sim.theta.as_array()
    y0 = sim.paint.y_min
    w_amt = yearly_amounts(sim.paint)
    g_amt = yearly_amounts(sim.gas)
    if err is not None and err.shared:
        shared = np.random.default_rng(np.random.SeedSequence(sim.seed, spawn_key=(0,)))
        eps_w = _positive_draws(shared, err.epsilon_mean, err.epsilon_sd, w_amt.size)
        eps_g = _positive_draws(shared, err.epsilon_mean, err.epsilon_sd, g_amt.size)

    year = np.empty(sim.n, dtype=int)
    z = np.empty(sim.n)
    for i in range(sim.n):
        rng = np.random.default_rng(np.random.SeedSequence(sim.seed, spawn_key=(1, i)))
        u = rng.random()
        y = int(years_tab[min(np.searchsorted(cdf, u, side="right"), years_tab.size - 1)])
        e = rng.standard_normal()
        T = float(sim.paint.at(y))
        G = float(sim.gas.at(y))
        if err is not None:
            if not err.shared:
                eps_w = _positive_draws(rng, err.epsilon_mean, err.epsilon_sd, w_amt.size)
                eps_g = _positive_draws(rng, err.epsilon_mean, err.epsilon_sd, g_amt.size)
            T *= _delta(w_amt, y - y0, eps_w, rng, err.delta_sd)
            G *= _delta(g_amt, y - y0, eps_g, rng, err.delta_sd)
        eta = th[0] + th[1] * T + th[2] * G
        if not eta > 0:
            raise ValueError(f"linear predictor {eta} <= 0 for year {y}")
        year[i] = y
        z[i] = math.log(eta) + sim.sigma * e

    return Dataset(
        T=sim.paint.at(year),
        G=sim.gas.at(year),
        z=z,
        year=year,
        ids=tuple(f"s{i:05d}" for i in range(sim.n)),
        site=(sim.site,) * sim.n,
    )


def model_means(theta: Theta, data: Dataset) -> np.ndarray:
    return np.log(eta_vec(theta.as_array(), data.T, data.G))


# -- moments of the error-weighted averages ---------------------------------

def _window(series, y, Y):
    if isinstance(series, YearlySeries):
        w = np.asarray(series.window(y, Y), dtype=float)
    else:
        w = np.asarray(series, dtype=float)
    if w.size == 0:
        raise ValueError("empty window")
    if np.any(np.isnan(w)):
        raise ValueError("window contains missing values")
    if w.sum() <= 0:
        raise ValueError("window amounts sum to zero")
    return w


def coefficient_of_variation(w) -> float:
    """Population (ddof=0) CV; 0 for a single value."""
    w = np.asarray(w, dtype=float)
    return float(np.std(w) / np.mean(w))


def delta_moments(series, y: int, Y: int, err: ErrorConfig) -> tuple[float, float]:
    """Mean and variance of D_y over the window y..Y.

    Var = (c^2 + 1) v / A with A = Y - y + 1, c the ddof=0 coefficient of
    variation of the window and v = Var(e * d) (= sigma_e^2 without
    per-structure multipliers). ddof=0 is what makes this identity exact.
    """
    w = _window(series, y, Y)
    A = w.size
    c = coefficient_of_variation(w)
    return err.epsilon_mean, (c * c + 1.0) * err.product_variance / A


def delta_covariance(series, y_prime: int, y: int, Y: int, err: ErrorConfig) -> float:
    """Cov(D_{y'}, D_y) for y' <= y between two structures sharing yearly errors.

    Only the shared yearly errors correlate the two averages, so the
    variance factor uses sigma_e^2 even when per-structure multipliers are on.
    """
    if not err.shared:
        raise ValueError("covariance formula requires shared errors")
    if y_prime > y:
        raise ValueError("need y_prime <= y")
    w_late = _window(series, y, Y)
    w_early = _window(series, y_prime, Y)
    c = coefficient_of_variation(w_late)
    var_shared = (c * c + 1.0) * err.epsilon_sd ** 2 / w_late.size
    if y_prime == y and err.delta_sd == 0:
        return var_shared
    return var_shared * w_late.sum() / w_early.sum()


def sample_delta(w, err: ErrorConfig, size: int, rng) -> np.ndarray:
    """Monte Carlo draws of D for one window (independent errors per draw)."""
    w = np.asarray(w, dtype=float)
    e = _positive_draws(rng, err.epsilon_mean, err.epsilon_sd, size * w.size).reshape(size, w.size)
    if err.delta_sd > 0:
        e = e * _positive_draws(rng, 1.0, err.delta_sd, size * w.size).reshape(size, w.size)
    return e @ w / w.sum()


def sample_delta_pair(w_early, offset: int, err: ErrorConfig, size: int, rng):
    """Paired draws (D_{y'}, D_y) for two structures sharing yearly errors.

    ``w_early`` is the window y'..Y and ``offset = y - y'``.
    """
    w = np.asarray(w_early, dtype=float)
    e = _positive_draws(rng, err.epsilon_mean, err.epsilon_sd, size * w.size).reshape(size, w.size)
    e1, e2 = e, e
    if err.delta_sd > 0:
        e1 = e * _positive_draws(rng, 1.0, err.delta_sd, e.size).reshape(e.shape)
        e2 = e * _positive_draws(rng, 1.0, err.delta_sd, e.size).reshape(e.shape)
    d_early = e1 @ w / w.sum()
    wl = w[offset:]
    d_late = e2[:, offset:] @ wl / wl.sum()
    return d_early, d_late
