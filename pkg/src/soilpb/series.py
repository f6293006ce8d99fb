"""Yearly lead-consumption series and the cumulative exposure predictors.

A :class:`YearlySeries` holds one amount per calendar year (millions of metric
tons of lead). Missing values are stored as ``NaN`` and are never confused with
zeros: a policy may *set* amounts to zero, imputation may *fill* missing ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class SeriesError(ValueError):
    """Raised for invalid series operations (missing data, empty windows...)."""


@dataclass(frozen=True)
class YearlySeries:
    """Contiguous yearly amounts; ``amounts[k]`` belongs to ``first_year + k``."""

    first_year: int
    amounts: np.ndarray

    def __post_init__(self):
        a = np.array(self.amounts, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise SeriesError("series must hold at least one year")
        present = a[~np.isnan(a)]
        if np.any(present < 0) or np.any(np.isinf(present)):
            raise SeriesError("amounts must be finite and nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "amounts", a)
        object.__setattr__(self, "first_year", int(self.first_year))

    @classmethod
    def from_mapping(cls, mapping: dict[int, float | None]) -> "YearlySeries":
        """Build from ``{year: amount}``; ``None``/NaN means missing.

        Years absent from the mapping but inside ``[min, max]`` are missing too.
        """
        if not mapping:
            raise SeriesError("empty series")
        years = sorted(int(y) for y in mapping)
        a = np.full(years[-1] - years[0] + 1, np.nan)
        for y, v in mapping.items():
            a[int(y) - years[0]] = np.nan if v is None else float(v)
        return cls(years[0], a)

    @property
    def last_year(self) -> int:
        return self.first_year + self.amounts.size - 1

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.last_year + 1)

    @property
    def missing_years(self) -> list[int]:
        return [int(y) for y in self.years[np.isnan(self.amounts)]]

    def __contains__(self, year) -> bool:
        return self.first_year <= year <= self.last_year

    def __getitem__(self, year: int) -> float:
        if year not in self:
            raise KeyError(year)
        return float(self.amounts[year - self.first_year])

    def window(self, start: int, stop: int) -> np.ndarray:
        """Amounts for years ``start..stop`` inclusive."""
        if start > stop or start not in self or stop not in self:
            raise SeriesError(f"window {start}-{stop} outside {self.first_year}-{self.last_year}")
        return self.amounts[start - self.first_year : stop - self.first_year + 1]

    def to_dict(self) -> dict[int, float | None]:
        return {int(y): (None if math.isnan(v) else float(v)) for y, v in zip(self.years, self.amounts)}


@dataclass(frozen=True)
class SeriesPolicy:
    """Zeroing bounds and a multiplicative scale.

    Years ``<= zero_before`` and ``>= zero_after`` are set to 0; everything is
    then multiplied by ``scale`` (e.g. 50 puts a state series on a national scale).
    """

    zero_before: int | None = None
    zero_after: int | None = None
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise SeriesError("scale must be positive")
        if (
            self.zero_before is not None
            and self.zero_after is not None
            and self.zero_before > self.zero_after
        ):
            raise SeriesError("zero_before must not exceed zero_after")


@dataclass(frozen=True)
class CumulativeExposure:
    """Tail sums ``C_y = sum_{i=y}^{Y} s_i`` for ``y`` in ``[y_min, Y]``."""

    measurement_year: int
    y_min: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.measurement_year - self.y_min + 1:
            raise SeriesError("values do not cover [y_min, measurement_year]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.y_min, self.measurement_year + 1)

    def __contains__(self, year) -> bool:
        return self.y_min <= year <= self.measurement_year

    def at(self, years) -> np.ndarray:
        """Vectorised lookup; raises for any year outside the domain."""
        y = np.asarray(years, dtype=int)
        bad = (y < self.y_min) | (y > self.measurement_year)
        if np.any(bad):
            raise SeriesError(f"year {int(y[bad].flat[0])} outside exposure domain {self.y_min}-{self.measurement_year}")
        return self.values[y - self.y_min]

    def scaled(self, k: float) -> "CumulativeExposure":
        return CumulativeExposure(self.measurement_year, self.y_min, self.values * k)


@dataclass(frozen=True)
class ImputationResult:
    slope: float
    r_squared: float
    filled: YearlySeries
    imputed_years: list[int] = field(default_factory=list)


def apply_policy(series: YearlySeries, policy: SeriesPolicy) -> YearlySeries:
    a = np.array(series.amounts)
    years = series.years
    if policy.zero_before is not None:
        a[years <= policy.zero_before] = 0.0
    if policy.zero_after is not None:
        a[years >= policy.zero_after] = 0.0
    if policy.scale != 1.0:
        a = a * policy.scale
    return YearlySeries(series.first_year, a)


def impute_proportional(
    target: YearlySeries,
    reference: YearlySeries,
    fit_window: tuple[int, int],
) -> ImputationResult:
    """Fill missing ``target`` years with ``slope * reference``.

    ``slope`` comes from least squares through the origin of ``target`` on
    ``reference`` over the inclusive ``fit_window``. The reported R^2 is the
    uncentered one, ``1 - RSS / sum(target^2)``, the usual convention for a
    no-intercept fit.
    """
    lo, hi = fit_window
    if lo > hi:
        raise SeriesError("empty fit window")
    t = target.window(lo, hi)
    r = reference.window(lo, hi)
    if np.any(np.isnan(t)) or np.any(np.isnan(r)):
        raise SeriesError(f"target and reference must be fully observed on {lo}-{hi}")
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise SeriesError(f"reference is identically zero on {lo}-{hi}")
    slope = float(np.dot(t, r)) / rr
    tt = float(np.dot(t, t))
    rss = float(np.sum((t - slope * r) ** 2))
    r_squared = 1.0 - rss / tt if tt > 0 else 1.0

    filled = np.array(target.amounts)
    imputed = target.missing_years
    for y in imputed:
        if y not in reference or math.isnan(reference[y]):
            raise SeriesError(f"reference has no value for {y}, cannot impute")
        filled[y - target.first_year] = slope * reference[y]
    return ImputationResult(slope, r_squared, YearlySeries(target.first_year, filled), imputed)


def cumulate(series: YearlySeries, measurement_year: int, y_min: int) -> CumulativeExposure:
    if y_min > measurement_year:
        raise SeriesError("y_min must not exceed measurement_year")
    w = series.window(y_min, measurement_year)
    gaps = np.flatnonzero(np.isnan(w))
    if gaps.size:
        raise SeriesError(f"missing amount for year {y_min + int(gaps[0])}")
    # reversed cumsum gives tail sums; C_y - C_{y+1} = s_y holds up to rounding
    tail = np.cumsum(w[::-1])[::-1]
    return CumulativeExposure(measurement_year, y_min, tail)


def read_series_csv(path) -> YearlySeries:
    """Read ``year,amount`` CSV; an empty amount field means missing."""
    mapping: dict[int, float | None] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"year", "amount"} <= set(reader.fieldnames):
            raise SeriesError(f"{path}: expected header 'year,amount'")
        for lineno, row in enumerate(reader, start=2):
            try:
                year = int(row["year"])
                raw = (row["amount"] or "").strip()
                mapping[year] = float(raw) if raw else None
            except (TypeError, ValueError) as exc:
                raise SeriesError(f"{path}:{lineno}: malformed row {row!r}") from exc
    return YearlySeries.from_mapping(mapping)


def write_series_csv(series: YearlySeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "amount"])
        for y, v in series.to_dict().items():
            w.writerow([y, "" if v is None else repr(v)])


def write_exposure_csv(exposure: CumulativeExposure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "cumulative"])
        for y, v in zip(exposure.years, exposure.values):
            w.writerow([int(y), repr(float(v))])


def read_exposure_csv(path, measurement_year: int | None = None) -> CumulativeExposure:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"year", "cumulative"} <= set(reader.fieldnames):
            raise SeriesError(f"{path}: expected header 'year,cumulative'")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["year"]), float(row["cumulative"])))
            except (TypeError, ValueError) as exc:
                raise SeriesError(f"{path}:{lineno}: malformed row {row!r}") from exc
    rows.sort()
    years = [r[0] for r in rows]
    if years != list(range(years[0], years[-1] + 1)):
        raise SeriesError(f"{path}: years must be contiguous")
    if measurement_year is not None and years[-1] != measurement_year:
        raise SeriesError(f"{path}: last year {years[-1]} != measurement year {measurement_year}")
    return CumulativeExposure(years[-1], years[0], [r[1] for r in rows])


# ---------------------------------------------------------------------------
# Synthetic stand-ins for the archival series (which are not redistributable).

# knots (year, Mt/yr); shapes loosely follow published US consumption histories
_WHITE_LEAD_KNOTS = [
    (1902, 0.085), (1910, 0.105), (1916, 0.125), (1923, 0.135), (1929, 0.110),
    (1933, 0.070), (1940, 0.060), (1945, 0.040), (1950, 0.022), (1955, 0.013),
    (1965, 0.007), (1979, 0.002),
]
_GASOLINE_KNOTS = [
    (1924, 0.010), (1930, 0.040), (1936, 0.060), (1941, 0.080), (1944, 0.055),
    (1950, 0.100), (1960, 0.130), (1968, 0.170), (1972, 0.180), (1976, 0.140),
    (1980, 0.085), (1984, 0.040), (1986, 0.012), (1990, 0.002),
]


def _interp_knots(knots, first, last):
    years = np.arange(first, last + 1)
    ky, kv = zip(*knots)
    return np.round(np.interp(years, ky, kv), 5)


def synthetic_white_lead(first: int = 1902, last: int = 1990) -> YearlySeries:
    """Synthetic white-lead-pigment series (Mt/yr), zero from 1980 on."""
    a = _interp_knots(_WHITE_LEAD_KNOTS, first, last)
    a[np.arange(first, last + 1) >= 1980] = 0.0
    return YearlySeries(first, a)


def synthetic_gasoline(first: int = 1902, last: int = 1990) -> YearlySeries:
    """Synthetic gasoline-lead series (Mt/yr), zero through 1923."""
    a = _interp_knots(_GASOLINE_KNOTS, first, last)
    a[np.arange(first, last + 1) <= 1923] = 0.0
    return YearlySeries(first, a)


def synthetic_exposures(measurement_year: int = 1986, y_min: int = 1902):
    """Paint and gasoline cumulative exposures built from the synthetic series."""
    return (
        cumulate(synthetic_white_lead(y_min, measurement_year), measurement_year, y_min),
        cumulate(synthetic_gasoline(y_min, measurement_year), measurement_year, y_min),
    )
