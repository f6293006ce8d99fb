"""Compare Monte Carlo moments of the error-weighted averages D_y with the closed forms.

For each window start y the script draws D_y (independent lognormal yearly
errors) and paired (D_y', D_y) sharing the yearly errors, then prints the MC
estimate, the formula value and the z-score in MC standard errors.

    python3 scripts/delta_moments_check.py --draws 100000 --eps-sd 0.4
"""

import argparse
import math

import numpy as np

from soilpb.series import synthetic_gasoline, synthetic_white_lead
from soilpb.simulator import ErrorConfig, delta_covariance, delta_moments, sample_delta, sample_delta_pair


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--eps-mean", type=float, default=1.0)
    ap.add_argument("--eps-sd", type=float, default=0.4)
    ap.add_argument("--measurement-year", type=int, default=1979)
    ap.add_argument("--lag", type=int, default=15, help="y - y' for the covariance check")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    err = ErrorConfig(args.eps_mean, args.eps_sd, shared=True)
    rng = np.random.default_rng(args.seed)
    Y, N = args.measurement_year, args.draws
    print(f"{'series':<8}{'y':>6}{'var MC':>12}{'var formula':>13}{'z':>7}{'cov MC':>12}{'cov formula':>13}{'z':>7}")
    for name, series in (("paint", synthetic_white_lead(1902, Y)), ("gas", synthetic_gasoline(1902, Y))):
        for y in (1930, 1945, 1960):
            w = series.window(y, Y)
            if w.sum() == 0:
                continue
            d = sample_delta(w, err, N, rng)
            _, v = delta_moments(series, y, Y, err)
            dev2 = (d - d.mean()) ** 2
            zv = (dev2.mean() - v) / (dev2.std() / math.sqrt(N))
            y0 = y - args.lag
            d1, d2 = sample_delta_pair(series.window(y0, Y), args.lag, err, N, rng)
            c = delta_covariance(series, y0, y, Y, err)
            prod = (d1 - d1.mean()) * (d2 - d2.mean())
            zc = (prod.mean() - c) / (prod.std() / math.sqrt(N))
            print(f"{name:<8}{y:>6}{dev2.mean():12.3e}{v:13.3e}{zv:7.2f}{prod.mean():12.3e}{c:13.3e}{zc:7.2f}")


if __name__ == "__main__":
    main()
