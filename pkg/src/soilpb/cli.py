"""Command-line front end: ``soilpb <subcommand> [--config FILE] [overrides]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .series import (
    SeriesError,
    SeriesPolicy,
    apply_policy,
    cumulate,
    impute_proportional,
    read_series_csv,
    write_exposure_csv,
)

COMMANDS = {
    "build-exposure": "cumulate a yearly series (or the configured paint/gas series) into exposures",
    "fit": "maximum-likelihood fit; writes fit.json and exclusions.csv",
    "bootstrap": "residual bootstrap; writes bootstrap.json",
    "profile": "profile-likelihood intervals; writes profile_<param>.csv/.json",
    "apportion": "fractional contributions by year built; writes efc_curve.csv/.json",
    "diagnose": "diagnostics battery; writes diagnostics.json and per-sample CSV",
    "simulate": "generate a synthetic samples CSV from the sim_* config keys",
    "run": "full pipeline: all of the above plus plot data",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--samples")
    p.add_argument("--site", choices=pipeline.SITE_TYPES + ("all",))
    p.add_argument("--seed", type=int)
    p.add_argument("--B", dest="bootstrap_b", type=int, help="bootstrap replicates")
    p.add_argument("--workers", type=int)
    p.add_argument("--measurement-year", dest="measurement_year", type=int)
    p.add_argument("--y-min", dest="y_min", type=int)
    p.add_argument("--output-dir", "-o", dest="output_dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soilpb",
        description="Apportion residential soil lead among background, paint and gasoline.",
        epilog="subcommands:\n" + "\n".join(f"  {k:<15} {v}" for k, v in COMMANDS.items()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p)
        if name == "build-exposure":
            p.add_argument("--series", help="year,amount CSV (otherwise paint+gas from config)")
            p.add_argument("--zero-before", type=int)
            p.add_argument("--zero-after", type=int)
            p.add_argument("--scale", type=float, default=1.0)
            p.add_argument("--impute-reference", help="reference series for proportional imputation")
            p.add_argument("--impute-window", nargs=2, type=int, metavar=("START", "STOP"))
            p.add_argument("--out", help="output CSV for --series mode")
        if name == "profile":
            p.add_argument("--param", action="append", choices=pipeline.PARAM_NAMES)
            p.add_argument("--level", type=float)
        if name == "simulate":
            p.add_argument("--out", required=True, help="samples CSV to write")
            p.add_argument("--n", type=int)
    return parser


def _config(args) -> pipeline.RunConfig:
    overrides = {}
    for key in ("samples", "site", "seed", "bootstrap_b", "workers", "measurement_year", "y_min", "output_dir"):
        overrides[key] = getattr(args, key, None)
    if getattr(args, "param", None):
        overrides["profile_params"] = list(args.param)
    if getattr(args, "level", None) is not None:
        overrides["profile_level"] = args.level
    if getattr(args, "n", None) is not None:
        overrides["sim_n"] = args.n
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    return pipeline.load_config(args.config, overrides)


def _build_exposure(args, cfg) -> None:
    if args.series:
        s = read_series_csv(args.series)
        s = apply_policy(s, SeriesPolicy(args.zero_before, args.zero_after))
        if args.impute_reference:
            if not args.impute_window:
                raise SeriesError("--impute-reference needs --impute-window")
            res = impute_proportional(s, read_series_csv(args.impute_reference), tuple(args.impute_window))
            print(f"imputation slope={res.slope!r} r_squared={res.r_squared!r} years={res.imputed_years}")
            s = res.filled
        s = apply_policy(s, SeriesPolicy(scale=args.scale))
        exp = cumulate(s, cfg.measurement_year, cfg.y_min)
        out = args.out or "exposure.csv"
        write_exposure_csv(exp, out)
        print(f"wrote {out}")
        return
    paint, gas, _ = pipeline.build_exposures(cfg)
    with pipeline.OutputBundle(cfg.path("output_dir")) as out:
        write_exposure_csv(paint, out.path("exposure_paint.csv"))
        write_exposure_csv(gas, out.path("exposure_gas.csv"))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        cmd = args.command
        if cmd == "build-exposure":
            _build_exposure(args, cfg)
        elif cmd == "simulate":
            pipeline.write_samples_csv(pipeline.simulate_samples(cfg), args.out)
        elif cmd == "run":
            pipeline.run_pipeline(cfg)
        else:
            a = pipeline.prepare(cfg)
            stage = {
                "fit": pipeline.write_fit,
                "bootstrap": pipeline.write_bootstrap,
                "profile": pipeline.write_profiles,
                "apportion": pipeline.write_apportion,
                "diagnose": pipeline.write_diagnostics,
            }[cmd]
            with pipeline.OutputBundle(cfg.path("output_dir")) as out:
                stage(a, out)
    except Exception as exc:  # report and exit nonzero; partial files stay marked
        logging.getLogger("soilpb").debug("failure", exc_info=True)
        print(f"soilpb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
