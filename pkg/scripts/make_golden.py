"""Regenerate the golden CLI fixture under tests/fixtures/golden.

Writes samples.csv (synthetic foundation samples plus rows that exercise each
exclusion rule and the park background check) and the frozen pipeline outputs
in expected/. Only rerun when an output format or algorithm changes on purpose.
"""

import argparse
import shutil
from pathlib import Path

from soilpb import cli, pipeline

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "golden"

CONFIG = """\
measurement_year = 1986
y_min = 1902
samples = "samples.csv"
site = "foundation"
reference_site = "park"
bootstrap_b = 60
seed = 2024
sim_n = 150
sim_preset = "uniform"
sim_sigma = 0.9
output_dir = "expected"
"""

EXTRA = [
    pipeline.SampleRecord("old-1898", 1898, 350.0, "foundation"),
    pipeline.SampleRecord("zero-conc", 1950, 0.0, "foundation"),
    pipeline.SampleRecord("future", 1990, 40.0, "foundation"),
    pipeline.SampleRecord("yard-1", 1930, 220.0, "yard"),
    pipeline.SampleRecord("park-1", 1960, 14.0, "park"),
    pipeline.SampleRecord("park-2", 1960, 21.0, "park"),
    pipeline.SampleRecord("park-3", 1960, 17.5, "park"),
    pipeline.SampleRecord("park-4", 1960, 11.0, "park"),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", type=Path, default=ROOT)
    args = ap.parse_args(argv)
    root = args.root
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.toml").write_text(CONFIG)
    cfg = pipeline.load_config(root / "config.toml", env={})
    records = pipeline.simulate_samples(cfg)
    pipeline.write_samples_csv(records[:40] + EXTRA + records[40:], root / "samples.csv")
    shutil.rmtree(root / "expected", ignore_errors=True)
    rc = cli.main(["run", "--config", str(root / "config.toml")])
    if rc:
        raise SystemExit(rc)
    print(f"golden fixture written to {root}")


if __name__ == "__main__":
    main()
