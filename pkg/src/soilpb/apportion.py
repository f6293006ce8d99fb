"""Estimated fractional contributions (EFC) of background, paint and gasoline."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .estimator import SCHEMA_VERSION, FitResult
from .model import Theta
from .series import CumulativeExposure

COMPONENTS = ("background", "paint", "gas")


class ApportionError(ValueError):
    pass


def efc(theta: Theta, T, G):
    """Fractions (background, paint, gas) of theta0 + theta1*T + theta2*G.

    Accepts scalars or arrays for ``T`` and ``G``. The lognormal factor
    exp(sigma^2/2) multiplies every term and cancels.
    """
    th = theta.as_array() if isinstance(theta, Theta) else np.asarray(theta, float)
    T = np.asarray(T, dtype=float)
    G = np.asarray(G, dtype=float)
    parts = np.stack(np.broadcast_arrays(th[0] + 0.0 * T, th[1] * T, th[2] * G))
    eta = parts.sum(axis=0)
    if np.any(eta <= 0):
        raise ApportionError("linear predictor is zero; fractions undefined")
    f = parts / eta
    if f.ndim == 1:
        return float(f[0]), float(f[1]), float(f[2])
    return f[0], f[1], f[2]


@dataclass
class ApportionmentCurve:
    years: np.ndarray
    f_background: np.ndarray
    f_paint: np.ndarray
    f_gas: np.ndarray
    eta: np.ndarray
    bands: np.ndarray | None = None  # (3, n_years) bootstrap SD per component
    max_replicate_sum_error: float = 0.0

    def fractions(self) -> np.ndarray:
        return np.vstack([self.f_background, self.f_paint, self.f_gas])

    def write_csv(self, path, clip_bands: bool = False) -> None:
        """``clip_bands`` limits f +/- band to [0, 1]; for display files only."""
        bands = self.bands if self.bands is not None else np.full((3, self.years.size), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["year", "f_background", "f_paint", "f_gas", "band_b", "band_p", "band_g", "eta_ppm"]
            if clip_bands:
                header += [f"{c}_{s}" for c in ("b", "p", "g") for s in ("lo", "hi")]
            w.writerow(header)
            F = self.fractions()
            for j, y in enumerate(self.years):
                row = [int(y)] + [repr(float(v)) for v in F[:, j]]
                row += ["" if np.isnan(b) else repr(float(b)) for b in bands[:, j]]
                row.append(repr(float(self.eta[j])))
                if clip_bands:
                    for c in range(3):
                        b = 0.0 if np.isnan(bands[c, j]) else bands[c, j]
                        row += [repr(float(np.clip(F[c, j] - b, 0, 1))), repr(float(np.clip(F[c, j] + b, 0, 1)))]
                w.writerow(row)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "years": [int(y) for y in self.years],
            "f_background": self.f_background.tolist(),
            "f_paint": self.f_paint.tolist(),
            "f_gas": self.f_gas.tolist(),
            "eta_ppm": self.eta.tolist(),
        }
        if self.bands is not None:
            out["bands"] = {c: self.bands[i].tolist() for i, c in enumerate(COMPONENTS)}
        return out

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def efc_curve(
    fit: FitResult,
    paint: CumulativeExposure,
    gas: CumulativeExposure,
    bootstrap=None,
    years=None,
) -> ApportionmentCurve:
    """EFC by year built; bands are per-year SDs of replicate fractions."""
    if years is None:
        years = paint.years
    years = np.asarray(years, dtype=int)
    for y in years:
        if y not in paint or y not in gas:
            raise ApportionError(f"year {y} outside exposure domain")
    T, G = paint.at(years), gas.at(years)
    fb, fp, fg = efc(fit.theta, T, G)
    eta = fit.theta.background + fit.theta.paint_rate * T + fit.theta.gas_rate * G
    bands = None
    worst = float(np.max(np.abs(fb + fp + fg - 1.0)))
    if bootstrap is not None and bootstrap.theta.shape[0] > 0:
        reps = np.array([np.vstack(efc(th, T, G)) for th in bootstrap.theta])  # (B, 3, n_years)
        worst = max(worst, float(np.max(np.abs(reps.sum(axis=1) - 1.0))))
        if reps.shape[0] > 1:
            bands = reps.std(axis=0, ddof=1)
        else:
            bands = np.zeros((3, years.size))
    return ApportionmentCurve(years, fb, fp, fg, eta, bands, worst)


@dataclass(frozen=True)
class Crossing:
    pair: tuple[str, str]
    year: float
    fraction: float


def crossing_years(curve: ApportionmentCurve) -> list[Crossing]:
    """Sign changes of f_a - f_b between consecutive years, linearly interpolated."""
    F = curve.fractions()
    yrs = curve.years.astype(float)
    out = []
    for a in range(3):
        for b in range(a + 1, 3):
            d = F[a] - F[b]
            nz = np.flatnonzero(d != 0)
            # exact ties at a grid year count once, when the sign differs across them
            for j0, j1 in zip(nz[:-1], nz[1:]):
                if np.sign(d[j0]) == np.sign(d[j1]):
                    continue
                if j1 == j0 + 1:
                    t = d[j0] / (d[j0] - d[j1])
                    year = yrs[j0] + t * (yrs[j1] - yrs[j0])
                    frac = F[a, j0] + t * (F[a, j1] - F[a, j0])
                else:
                    mid = j0 + 1  # first tied year
                    year, frac = yrs[mid], F[a, mid]
                out.append(Crossing((COMPONENTS[a], COMPONENTS[b]), float(year), float(frac)))
    return sorted(out, key=lambda c: (c.year, c.pair))
