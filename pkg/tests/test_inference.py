import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from soilpb.estimator import FitError, fit
from soilpb.estimator import covariance_from_jacobian
from soilpb.inference import (
    BootstrapError,
    asymptotic_se,
    bootstrap_responses,
    confidence_curve_trace,
    default_grid,
    likelihood_interval,
    profile_interval,
    residual_bootstrap,
)
from soilpb.model import Dataset

from conftest import make_data

Z95 = stats.norm.ppf(0.975)
CUT95 = stats.chi2.ppf(0.95, 1)


@pytest.fixture(scope="module")
def fitted(sim_data):
    return fit(sim_data)


def test_pure_intercept_se():
    rng = np.random.default_rng(0)
    z = math.log(40.0) + rng.normal(0, 0.6, 50)
    res = fit(Dataset(T=np.zeros(50), G=np.zeros(50), z=z, year=[]))
    th0 = math.exp(z.mean())
    assert res.theta.background == pytest.approx(th0, rel=1e-7)
    se = asymptotic_se(res).se
    assert se[0] == pytest.approx(th0 * res.sigma / math.sqrt(50), rel=1e-8)
    assert res.pinned == {1, 2}


def test_orthonormal_jacobian_gives_unit_se():
    q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(20, 3)))
    cov = covariance_from_jacobian(q, 1.0)
    np.testing.assert_allclose(cov, np.eye(3), atol=1e-12)


def test_df_corrected_se(fitted):
    a = asymptotic_se(fitted).se
    b = asymptotic_se(fitted, df_corrected=True).se
    np.testing.assert_allclose(b / a, math.sqrt(fitted.n / (fitted.n - 3)), rtol=1e-12)


def test_bootstrap_zero_residuals():
    T = np.linspace(0, 2, 15)
    G = np.linspace(3, 0.5, 15) ** 1.5
    data = Dataset(T=T, G=G, z=np.log(10 + 60 * T + 4 * G), year=[])
    res = fit(data)
    boot = residual_bootstrap(res, data, B=20, seed=1)
    np.testing.assert_allclose(boot.se_theta, 0.0, atol=1e-6)


def test_bootstrap_bit_identical(sim_data, fitted):
    a = residual_bootstrap(fitted, sim_data, B=12, seed=99)
    b = residual_bootstrap(fitted, sim_data, B=12, seed=99)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.indices, b.indices)
    c = residual_bootstrap(fitted, sim_data, B=12, seed=100)
    assert not np.array_equal(a.theta, c.theta)


def test_bootstrap_prefix_stable(sim_data, fitted):
    # replicate b depends only on (seed, b)
    a = residual_bootstrap(fitted, sim_data, B=5, seed=3)
    b = residual_bootstrap(fitted, sim_data, B=10, seed=3)
    np.testing.assert_array_equal(a.theta, b.theta[:5])


@pytest.mark.slow
def test_bootstrap_workers_invariant(sim_data, fitted):
    a = residual_bootstrap(fitted, sim_data, B=8, seed=5, workers=1)
    b = residual_bootstrap(fitted, sim_data, B=8, seed=5, workers=2)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_bootstrap_responses_rebuild(sim_data, fitted):
    boot = residual_bootstrap(fitted, sim_data, B=3, seed=0)
    Z = bootstrap_responses(fitted, sim_data, boot)
    for b in range(3):
        refit = fit(sim_data.with_response(Z[b]), start=fitted.theta, compute_cov=False)
        np.testing.assert_array_equal(refit.theta.as_array(), boot.theta[b])


def test_bootstrap_failure_rate(sim_data, fitted):
    with pytest.raises(ValueError):
        residual_bootstrap(fitted, sim_data, B=0)
    from soilpb.estimator import FitOptions
    with pytest.raises(BootstrapError):
        residual_bootstrap(fitted, sim_data, B=4, options=FitOptions(max_iter=0, restarts=False))


def test_studentized_pool_is_wider(sim_data, fitted):
    a = residual_bootstrap(fitted, sim_data, B=30, seed=2)
    b = residual_bootstrap(fitted, sim_data, B=30, seed=2, studentized=True)
    assert np.all(b.se_theta >= a.se_theta * 0.98)


@given(st.floats(-50, 50), st.floats(0.01, 10), st.floats(0.5, 0.999))
@settings(max_examples=40)
def test_quadratic_deviance_gives_wald(est, se, level):
    cut = stats.chi2.ppf(level, 1)
    lo, hi, clamped = likelihood_interval(
        lambda v: ((v - est) / se) ** 2, est, cut, 0.5 * se, est + 1000 * se, rtol=1e-10, lower_bound=None
    )
    z = math.sqrt(cut)
    assert lo == pytest.approx(est - z * se, rel=1e-8, abs=1e-9)
    assert hi == pytest.approx(est + z * se, rel=1e-8, abs=1e-9)
    assert not clamped


def test_likelihood_interval_clamp_and_open():
    lo, hi, clamped = likelihood_interval(lambda v: (v - 1.0) ** 2 / 100, 1.0, CUT95, 0.5, 50.0)
    assert lo == 0.0 and clamped
    assert hi == pytest.approx(1 + math.sqrt(CUT95) * 10, rel=1e-6)
    lo, hi, clamped = likelihood_interval(lambda v: 1e-3 * abs(v - 1.0), 1.0, CUT95, 0.5, 50.0)
    assert hi is None


def test_profile_interval_properties(sim_data, fitted):
    se = asymptotic_se(fitted).se
    for k in range(3):
        iv = profile_interval(fitted, sim_data, k)
        est = fitted.theta.as_array()[k]
        assert iv.lower <= est <= iv.upper
        # close to Wald at n=300 but not identical
        assert iv.lower == pytest.approx(est - Z95 * se[k], rel=0.25)
        assert iv.upper == pytest.approx(est + Z95 * se[k], rel=0.25)
    iv = profile_interval(fitted, sim_data, 0)
    # the log link makes the background interval longer on the right
    assert iv.upper - iv.estimate > iv.estimate - iv.lower


def test_profile_endpoints_hit_cutoff(sim_data, fitted):
    iv = profile_interval(fitted, sim_data, 1)
    for v in (iv.lower, iv.upper):
        r = fit(sim_data, fixed={1: v}, start=fitted.theta.as_array() * [1, 0, 1] + [0, v, 0]).rss
        assert sim_data.n * math.log(r / fitted.rss) == pytest.approx(CUT95, abs=1e-3)


def test_profile_known_sigma_tiny_noise_matches_wald(exposures):
    data = make_data(exposures, sigma=0.002, n=300, seed=4)
    res = fit(data)
    se = asymptotic_se(res).se
    for k in range(3):
        iv = profile_interval(res, data, k, sigma2=res.sigma2, rtol=1e-10)
        est = res.theta.as_array()[k]
        assert iv.lower == pytest.approx(est - Z95 * se[k], rel=1e-4)
        assert iv.upper == pytest.approx(est + Z95 * se[k], rel=1e-4)


def test_profile_lower_clamped_at_zero():
    rng = np.random.default_rng(8)
    T, G = rng.uniform(0.2, 3, (2, 40))
    z = np.log(0.3 + 80 * T + 6 * G) + rng.normal(0, 0.5, 40)
    data = Dataset(T=T, G=G, z=z, year=[])
    res = fit(data)
    iv = profile_interval(res, data, 0)
    assert iv.lower == 0.0 and iv.lower_at_bound


def test_profile_upper_open():
    # exposures far from zero and heavy noise leave the background poorly pinned down
    rng = np.random.default_rng(2)
    T, G = rng.uniform(5, 6, (2, 8))
    z = np.log(1 + 100 * T + 10 * G) + rng.normal(0, 2.0, 8)
    data = Dataset(T=T, G=G, z=z, year=[])
    res = fit(data)
    iv = profile_interval(res, data, 0, cap_factor=0.1)
    assert iv.upper is None
    assert iv.to_dict()["upper_open"] is True


def test_profile_unidentifiable_raises():
    T = np.linspace(0, 2, 10)
    data = Dataset(T=T, G=np.zeros(10), z=np.log(10 + 5 * T) + 0.01 * np.sin(np.arange(10)), year=[])
    with pytest.raises(FitError):
        profile_interval(fit(data), data, 2)


def test_confidence_curve(sim_data, fitted):
    iv = profile_interval(fitted, sim_data, 2)
    cc = confidence_curve_trace(fitted, sim_data, 2, default_grid(iv, 21))
    assert np.all(np.diff(cc.signed_root) > 0)
    j = int(np.argmin(np.abs(cc.values - iv.estimate)))
    assert cc.signed_root[j] == 0.0
    assert cc.loglik[j] == pytest.approx(fitted.loglik, rel=1e-12)
    # the curve crosses +-1.96 at the interval endpoints
    assert np.interp(iv.upper, cc.values, cc.signed_root) == pytest.approx(Z95, abs=0.02)
    assert np.interp(iv.lower, cc.values, cc.signed_root) == pytest.approx(-Z95, abs=0.02)


def test_profile_trace_csv(tmp_path, sim_data, fitted):
    iv = profile_interval(fitted, sim_data, 1)
    path = tmp_path / "p.csv"
    iv.write_trace_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "value,profile_loglik"
    vals = [float(r.split(",")[0]) for r in rows[1:]]
    assert vals == sorted(vals) and len(vals) >= 3
