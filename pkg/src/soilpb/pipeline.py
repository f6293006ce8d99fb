"""Run configuration, sample ingestion and the full analysis pipeline."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import apportion, diagnostics, inference
from .estimator import SCHEMA_VERSION, FitResult, fit as fit_model
from .model import PARAM_NAMES, Dataset, Theta
from .series import (
    CumulativeExposure,
    SeriesPolicy,
    apply_policy,
    cumulate,
    impute_proportional,
    read_series_csv,
    synthetic_gasoline,
    synthetic_white_lead,
)
from .simulator import ErrorConfig, SimConfig, simulate, year_weight_preset

log = logging.getLogger(__name__)

SITE_TYPES = ("foundation", "yard", "park", "other")


class IngestError(ValueError):
    pass


@dataclass
class RunConfig:
    measurement_year: int = 1986
    y_min: int = 1902
    samples: str = ""
    paint_series: str = ""  # empty: built-in synthetic series
    paint_zero_before: int | None = None
    paint_zero_after: int | None = 1980
    paint_scale: float = 1.0
    gas_series: str = ""
    gas_zero_before: int | None = 1923
    gas_zero_after: int | None = None
    gas_scale: float = 1.0
    gas_impute_reference: str = ""
    gas_impute_start: int = 1935
    gas_impute_stop: int = 1974
    site: str = "foundation"  # or "all" (every non-park sample)
    reference_site: str = "park"
    bootstrap_b: int = 100
    studentized_bootstrap: bool = False
    seed: int = 0
    profile_level: float = 0.95
    profile_params: list = field(default_factory=lambda: list(PARAM_NAMES))
    workers: int = 1
    output_dir: str = "out"
    # simulation
    sim_background: float = 15.0
    sim_paint_rate: float = 200.0
    sim_gas_rate: float = 10.0
    sim_sigma: float = 1.0
    sim_n: int = 300
    sim_preset: str = "uniform"
    sim_site: str = "foundation"
    sim_epsilon_mean: float = 1.0
    sim_epsilon_sd: float = 0.0
    sim_shared_errors: bool = True
    sim_delta_sd: float = 0.0
    sim_measurement_errors: bool = False
    base_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.measurement_year < self.y_min:
            raise ValueError("measurement_year must be >= y_min")
        if self.bootstrap_b < 1:
            raise ValueError("bootstrap_b must be >= 1")
        if self.site not in SITE_TYPES + ("all",):
            raise ValueError(f"unknown site {self.site!r}")
        for p in self.profile_params:
            if p not in PARAM_NAMES:
                raise ValueError(f"unknown profile parameter {p!r}")

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {name!r}")
    default = _FIELD_TYPES[name].default
    if default is dataclasses.MISSING:
        default = _FIELD_TYPES[name].default_factory()
    if isinstance(value, str):
        s = value.strip()
        if name.endswith(("_zero_before", "_zero_after")):
            return None if s.lower() in ("", "none") else int(s)
        if isinstance(default, bool):
            if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{name}: expected a boolean, got {value!r}")
            return s.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, list):
            return [p.strip() for p in s.split(",") if p.strip()]
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def load_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Config file < APPORTION_SEED environment variable < explicit overrides."""
    env = os.environ if env is None else env
    values: dict = {}
    base = "."
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        for k, v in raw.items():
            if isinstance(v, dict):
                raise ValueError(f"config must be flat; section [{k}] found")
            values[k] = _coerce(k, v)
        base = str(Path(path).resolve().parent)
    if env.get("APPORTION_SEED"):
        values["seed"] = int(env["APPORTION_SEED"])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    values.setdefault("base_dir", base)
    return RunConfig(**values)


# -- exposures ------------------------------------------------------------------

def build_exposures(cfg: RunConfig) -> tuple[CumulativeExposure, CumulativeExposure, dict]:
    """Paint and gas cumulative exposures per the config; also returns build notes."""
    notes: dict = {}
    Y, y0 = cfg.measurement_year, cfg.y_min
    paint = read_series_csv(cfg.path("paint_series")) if cfg.paint_series else synthetic_white_lead(y0, Y)
    gas = read_series_csv(cfg.path("gas_series")) if cfg.gas_series else synthetic_gasoline(y0, Y)
    if not cfg.paint_series or not cfg.gas_series:
        notes["synthetic_series"] = True
    paint = apply_policy(paint, SeriesPolicy(cfg.paint_zero_before, cfg.paint_zero_after, 1.0))
    gas = apply_policy(gas, SeriesPolicy(cfg.gas_zero_before, cfg.gas_zero_after, 1.0))
    if cfg.gas_impute_reference:
        ref = read_series_csv(cfg.path("gas_impute_reference"))
        res = impute_proportional(gas, ref, (cfg.gas_impute_start, cfg.gas_impute_stop))
        gas = res.filled
        notes["gas_imputation"] = {"slope": res.slope, "r_squared": res.r_squared,
                                   "imputed_years": res.imputed_years}
    if cfg.paint_scale != 1.0:
        paint = apply_policy(paint, SeriesPolicy(scale=cfg.paint_scale))
    if cfg.gas_scale != 1.0:
        gas = apply_policy(gas, SeriesPolicy(scale=cfg.gas_scale))
    return cumulate(paint, Y, y0), cumulate(gas, Y, y0), notes


# -- samples -----------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    id: str
    year_built: int
    concentration: float
    site_type: str


@dataclass(frozen=True)
class Exclusion:
    line: int
    id: str
    reason: str


def read_samples_csv(path) -> list[tuple[int, SampleRecord]]:
    """Parse ``id,year_built,concentration,site_type``; returns (line, record) pairs."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "year_built", "concentration", "site_type"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise IngestError(f"{path}: expected header id,year_built,concentration,site_type")
        for row in reader:
            line = reader.line_num
            try:
                site = row["site_type"].strip()
                if site not in SITE_TYPES:
                    raise ValueError(f"unknown site_type {site!r}")
                rec = SampleRecord(row["id"].strip(), int(row["year_built"]), float(row["concentration"]), site)
            except (TypeError, ValueError, AttributeError) as exc:
                raise IngestError(f"{path}:{line}: malformed row ({exc})") from exc
            if not math.isfinite(rec.concentration):
                raise IngestError(f"{path}:{line}: concentration is not finite")
            out.append((line, rec))
    if not out:
        raise IngestError(f"{path}: no samples")
    return out


def write_samples_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "year_built", "concentration", "site_type"])
        for r in records:
            w.writerow([r.id, r.year_built, repr(float(r.concentration)), r.site_type])


@dataclass
class Ingested:
    dataset: Dataset
    records: list
    exclusions: list
    reference: np.ndarray  # concentrations of reference-site samples (ppm)

    def write_exclusions(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["line", "id", "reason"])
            for e in self.exclusions:
                w.writerow([e.line, e.id, e.reason])


def ingest(cfg: RunConfig, paint: CumulativeExposure, gas: CumulativeExposure) -> Ingested:
    """Join samples to exposures. Every input row ends up either kept or excluded with a reason."""
    path = cfg.path("samples")
    if path is None:
        raise IngestError("no samples file configured")
    rows = read_samples_csv(path)
    kept, excl, ref = [], [], []
    for line, r in rows:
        if r.site_type == cfg.reference_site and r.concentration > 0:
            ref.append(r.concentration)
        if r.concentration <= 0:
            excl.append(Exclusion(line, r.id, "nonpositive concentration"))
        elif r.year_built < cfg.y_min:
            excl.append(Exclusion(line, r.id, "pre-domain year"))
        elif r.year_built > cfg.measurement_year:
            excl.append(Exclusion(line, r.id, "built after measurement year"))
        elif r.site_type == cfg.reference_site and cfg.site != r.site_type:
            excl.append(Exclusion(line, r.id, "reference site"))
        elif cfg.site != "all" and r.site_type != cfg.site:
            excl.append(Exclusion(line, r.id, "site filter"))
        else:
            kept.append(r)
    for e in excl:
        log.info("excluded %s (line %d): %s", e.id, e.line, e.reason)
    if not kept:
        raise IngestError("no samples left after exclusions")
    years = np.array([r.year_built for r in kept], dtype=int)
    data = Dataset(
        T=paint.at(years),
        G=gas.at(years),
        z=np.log([r.concentration for r in kept]),
        year=years,
        ids=tuple(r.id for r in kept),
        site=tuple(r.site_type for r in kept),
    )
    return Ingested(data, kept, excl, np.array(ref))


# -- output helpers -------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class OutputBundle:
    """Files are written as ``<name>.partial`` and renamed only when the whole run succeeds."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.pending: list[Path] = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def path(self, name: str) -> Path:
        final = self.dir / name
        final.parent.mkdir(parents=True, exist_ok=True)
        self.pending.append(final)
        return final.with_name(final.name + ".partial")

    def json(self, name: str, payload: dict) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for final in self.pending:
                os.replace(final.with_name(final.name + ".partial"), final)
        return False


# -- pipeline stages --------------------------------------------------------------------

@dataclass
class Analysis:
    cfg: RunConfig
    paint: CumulativeExposure
    gas: CumulativeExposure
    ingested: Ingested
    fit: FitResult
    exposure_notes: dict = field(default_factory=dict)
    bootstrap: inference.BootstrapResult | None = None

    @property
    def data(self) -> Dataset:
        return self.ingested.dataset


def prepare(cfg: RunConfig) -> Analysis:
    paint, gas, notes = build_exposures(cfg)
    ing = ingest(cfg, paint, gas)
    f = fit_model(ing.dataset)
    return Analysis(cfg, paint, gas, ing, f, notes)


def fit_payload(a: Analysis) -> dict:
    se = inference.asymptotic_se(a.fit)
    d = a.fit.to_dict()
    d["se"] = dict(zip(PARAM_NAMES, se.se.tolist()))
    d["se_at_bound"] = dict(zip(PARAM_NAMES, se.at_bound))
    d["site"] = a.cfg.site
    d["measurement_year"] = a.cfg.measurement_year
    d["n_excluded"] = len(a.ingested.exclusions)
    d["exposures"] = a.exposure_notes
    return d


def run_bootstrap(a: Analysis) -> inference.BootstrapResult:
    if a.bootstrap is None:
        a.bootstrap = inference.residual_bootstrap(
            a.fit, a.data, B=a.cfg.bootstrap_b, seed=a.cfg.seed,
            studentized=a.cfg.studentized_bootstrap, workers=a.cfg.workers,
        )
    return a.bootstrap


def write_fit(a: Analysis, out: OutputBundle) -> None:
    out.json("fit.json", fit_payload(a))
    a.ingested.write_exclusions(out.path("exclusions.csv"))


def write_bootstrap(a: Analysis, out: OutputBundle) -> None:
    out.json("bootstrap.json", run_bootstrap(a).to_dict())


def write_profiles(a: Analysis, out: OutputBundle) -> None:
    for name in a.cfg.profile_params:
        k = PARAM_NAMES.index(name)
        if k in a.fit.pinned:
            continue
        pi = inference.profile_interval(a.fit, a.data, k, level=a.cfg.profile_level)
        pi.write_trace_csv(out.path(f"profile_{name}.csv"))
        out.json(f"profile_{name}.json", pi.to_dict())
        curve = inference.confidence_curve_trace(a.fit, a.data, k, inference.default_grid(pi))
        curve.write_csv(out.path(f"plotdata/confidence_curve_{name}.csv"))


def write_apportion(a: Analysis, out: OutputBundle) -> None:
    curve = apportion.efc_curve(a.fit, a.paint, a.gas, run_bootstrap(a))
    curve.write_csv(out.path("efc_curve.csv"))
    out.json("efc_curve.json", {**curve.to_dict(),
                                "crossings": [dataclasses.asdict(c) for c in apportion.crossing_years(curve)],
                                "max_sum_error": curve.max_replicate_sum_error})
    curve.write_csv(out.path("plotdata/efc_bands.csv"), clip_bands=True)


def write_diagnostics(a: Analysis, out: OutputBundle) -> None:
    ref = a.ingested.reference if a.ingested.reference.size else None
    rep = diagnostics.diagnose(a.fit, a.data, run_bootstrap(a), ref)
    out.json("diagnostics.json", rep.to_dict())
    rep.write_csv(out.path("diagnostics_samples.csv"))
    for mp in diagnostics.marginal_plot_data(a.fit, a.data):
        mp.write_csv(out.path(f"plotdata/marginal_{mp.predictor}.csv"))


def write_scatter(a: Analysis, out: OutputBundle) -> None:
    data = a.data
    order = np.lexsort((np.array(data.ids), data.year))
    smooth = diagnostics.lowess(data.year[order].astype(float), data.z[order], 0.7, 3)
    with open(out.path("plotdata/scatter_points.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "year_built", "log_concentration", "lowess_0.7"])
        for j, i in enumerate(order):
            w.writerow([data.ids[i], int(data.year[i]), repr(float(data.z[i])), repr(float(smooth[j]))])
    boot = run_bootstrap(a)
    years = np.arange(int(data.year.min()), int(data.year.max()) + 1)
    T, G = a.paint.at(years), a.gas.at(years)
    th = a.fit.theta.as_array()
    fitted = np.log(th[0] + th[1] * T + th[2] * G)
    if boot.theta.shape[0] > 1:
        reps = np.log(boot.theta[:, [0]] + boot.theta[:, [1]] * T + boot.theta[:, [2]] * G)
        band = reps.std(axis=0, ddof=1)
    else:
        band = np.zeros(years.size)
    with open(out.path("plotdata/scatter_fit.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "fitted_log", "lower", "upper"])
        for y, f, b in zip(years, fitted, band):
            w.writerow([int(y), repr(float(f)), repr(float(f - b)), repr(float(f + b))])


def run_pipeline(cfg: RunConfig) -> Analysis:
    """Full analysis; writes every artifact into ``cfg.output_dir``."""
    a = prepare(cfg)
    with OutputBundle(cfg.path("output_dir")) as out:
        out.json("config.json", {"schema_version": SCHEMA_VERSION, **cfg.to_dict()})
        write_fit(a, out)
        write_bootstrap(a, out)
        write_profiles(a, out)
        write_apportion(a, out)
        write_diagnostics(a, out)
        write_scatter(a, out)
    return a


# -- simulation -----------------------------------------------------------------------------

def sim_configs(cfg: RunConfig, paint, gas) -> tuple[SimConfig, ErrorConfig | None]:
    sim = SimConfig(
        theta=Theta(cfg.sim_background, cfg.sim_paint_rate, cfg.sim_gas_rate),
        sigma=cfg.sim_sigma,
        paint=paint,
        gas=gas,
        year_weights=year_weight_preset(cfg.sim_preset, cfg.y_min, cfg.measurement_year),
        n=cfg.sim_n,
        seed=cfg.seed,
        site=cfg.sim_site,
    )
    err = None
    if cfg.sim_measurement_errors:
        err = ErrorConfig(cfg.sim_epsilon_mean, cfg.sim_epsilon_sd, cfg.sim_shared_errors, cfg.sim_delta_sd)
    return sim, err


def simulate_samples(cfg: RunConfig) -> list[SampleRecord]:
    paint, gas, _ = build_exposures(cfg)
    sim, err = sim_configs(cfg, paint, gas)
    d = simulate(sim, err)
    return [SampleRecord(i, int(y), float(np.exp(z)), s) for i, y, z, s in zip(d.ids, d.year, d.z, d.site)]
