import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soilpb.estimator import fit
from soilpb.model import Theta
from soilpb.series import YearlySeries
from soilpb.simulator import (
    ErrorConfig,
    SimConfig,
    coefficient_of_variation,
    delta_covariance,
    delta_moments,
    lognormal_params,
    model_means,
    sample_delta,
    sample_delta_pair,
    simulate,
    year_weight_preset,
    yearly_amounts,
)

TH = Theta(15.0, 200.0, 10.0)


def _cfg(exposures, **kw):
    paint, gas = exposures
    base = dict(theta=TH, sigma=1.0, paint=paint, gas=gas, year_weights=year_weight_preset("uniform"), n=200, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_zero_noise_gives_model_means(exposures):
    data = simulate(_cfg(exposures, sigma=0.0))
    np.testing.assert_allclose(data.z, model_means(TH, data), rtol=1e-15)


def test_deterministic_and_seed_sensitive(exposures):
    a = simulate(_cfg(exposures))
    b = simulate(_cfg(exposures))
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.year, b.year)
    c = simulate(_cfg(exposures, seed=4))
    assert not np.array_equal(a.z, c.z)


def test_samples_independent_of_n(exposures):
    # sample i has its own stream, so a longer run extends a shorter one
    a = simulate(_cfg(exposures, n=50))
    b = simulate(_cfg(exposures, n=120))
    np.testing.assert_array_equal(a.z, b.z[:50])
    err = ErrorConfig(1.0, 0.3, shared=True, delta_sd=0.2)
    a = simulate(_cfg(exposures, n=50), err)
    b = simulate(_cfg(exposures, n=120), err)
    np.testing.assert_array_equal(a.z, b.z[:50])


def test_year_weights_respected(exposures):
    data = simulate(_cfg(exposures, n=400, year_weights={1910: 1.0, 1960: 3.0}))
    assert set(np.unique(data.year)) == {1910, 1960}
    assert 0.68 < np.mean(data.year == 1960) < 0.82
    with pytest.raises(ValueError):
        simulate(_cfg(exposures, year_weights={1890: 1.0}))


def test_residual_moments(exposures):
    data = simulate(_cfg(exposures, n=4000, sigma=0.7))
    r = data.z - model_means(TH, data)
    assert abs(r.mean()) < 4 * 0.7 / math.sqrt(4000)
    assert r.std() == pytest.approx(0.7, rel=0.05)


def test_presets_are_distributions():
    for name in ("uniform", "mn_like", "us_like"):
        w = year_weight_preset(name)
        assert sum(w.values()) == pytest.approx(1.0)
        assert min(w.values()) >= 0
    assert max(y for y, v in year_weight_preset("us_like").items() if v > 0) == 1979
    with pytest.raises(ValueError):
        year_weight_preset("nope")


def test_yearly_amounts_round_trip(exposures):
    paint, _ = exposures
    s = yearly_amounts(paint)
    np.testing.assert_allclose(np.cumsum(s[::-1])[::-1], paint.values, rtol=1e-12, atol=1e-15)


@given(st.floats(0.1, 10), st.floats(0.0, 5))
def test_lognormal_params(mean, sd):
    mu, s = lognormal_params(mean, sd)
    assert math.exp(mu + s * s / 2) == pytest.approx(mean, rel=1e-12)
    assert math.sqrt(math.expm1(s * s)) * mean == pytest.approx(sd, rel=1e-9, abs=1e-12)


def test_cv_is_population_cv():
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)
    assert coefficient_of_variation([2.0]) == 0.0


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.floats(0.01, 2))
@settings(max_examples=40)
def test_delta_variance_identity(w, sd):
    # (c^2 + 1) / A == sum(w^2) / sum(w)^2 when c uses ddof=0
    w = np.array(w)
    _, var = delta_moments(w, 0, 0, ErrorConfig(1.0, sd))
    assert var == pytest.approx(sd * sd * np.sum(w * w) / w.sum() ** 2, rel=1e-10)


def test_delta_moments_from_series():
    s = YearlySeries(1980, np.array([1.0, 2.0, 3.0, 4.0]))
    m, v = delta_moments(s, 1982, 1983, ErrorConfig(1.2, 0.5))
    assert m == 1.2
    assert v == pytest.approx(0.25 * (9 + 16) / 49)
    with pytest.raises(ValueError):
        delta_moments([0.0, 0.0], 0, 0, ErrorConfig(1.0, 0.5))


def test_delta_covariance_formula_and_checks():
    s = YearlySeries(1980, np.array([1.0, 2.0, 3.0, 4.0]))
    err = ErrorConfig(1.0, 0.4)
    var_late = delta_moments(s, 1982, 1983, err)[1]
    assert delta_covariance(s, 1980, 1982, 1983, err) == pytest.approx(var_late * 7 / 10)
    assert delta_covariance(s, 1982, 1982, 1983, err) == pytest.approx(var_late)
    with pytest.raises(ValueError):
        delta_covariance(s, 1983, 1982, 1983, err)
    with pytest.raises(ValueError):
        delta_covariance(s, 1980, 1982, 1983, ErrorConfig(1.0, 0.4, shared=False))


def test_delta_sampling_small_mc():
    rng = np.random.default_rng(0)
    w = np.array([3.0, 1.0, 0.5, 2.0, 4.0])
    err = ErrorConfig(1.0, 0.5, delta_sd=0.3)
    d = sample_delta(w, err, 40_000, rng)
    m, v = delta_moments(w, 0, 0, err)
    assert d.mean() == pytest.approx(m, abs=4 * math.sqrt(v / 40_000))
    assert d.var() == pytest.approx(v, rel=0.05)
    d1, d2 = sample_delta_pair(w, 2, err, 40_000, rng)
    cov = np.cov(d1, d2)[0, 1]
    assert cov == pytest.approx(delta_covariance(w[2:], 0, 0, 0, err) * w[2:].sum() / w.sum(), rel=0.1)


def test_bias_propagation_with_inflated_epsilon(exposures):
    # E(e) = 1.2 scales the effective exposures, so rates come out ~1.2x
    paint, gas = exposures
    cfg = _cfg(exposures, n=2000, sigma=0.05, seed=1)
    data = simulate(cfg, ErrorConfig(1.2, 0.0))
    res = fit(data)
    th = res.theta.as_array()
    assert th[1] == pytest.approx(1.2 * 200, rel=0.02)
    assert th[2] == pytest.approx(1.2 * 10, rel=0.05)
    assert th[0] == pytest.approx(15, rel=0.05)


def test_config_validation(exposures):
    with pytest.raises(ValueError):
        _cfg(exposures, sigma=-1.0)
    with pytest.raises(ValueError):
        ErrorConfig(epsilon_mean=0.0)
    with pytest.raises(ValueError):
        ErrorConfig(epsilon_sd=-1.0)
