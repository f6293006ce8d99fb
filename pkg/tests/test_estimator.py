import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from soilpb.apportion import efc
from soilpb.estimator import (
    CollinearityError,
    ConvergenceError,
    FitError,
    FitOptions,
    fit,
    initial_theta,
    objective,
)
from soilpb.model import Dataset

from conftest import make_data


def _noiseless(T, G, theta):
    eta = theta[0] + theta[1] * np.asarray(T) + theta[2] * np.asarray(G)
    return Dataset(T=T, G=G, z=np.log(eta), year=[])


def test_noiseless_recovery_without_gas():
    T = np.linspace(0.0, 2.0, 12)
    res = fit(_noiseless(T, np.zeros(12), (20.0, 100.0, 0.0)))
    np.testing.assert_allclose(res.theta.as_array()[:2], [20.0, 100.0], rtol=1e-8)
    assert res.theta.gas_rate == 0.0
    assert 2 in res.pinned
    assert res.rss < 1e-20


def test_noiseless_recovery_full():
    rng = np.random.default_rng(1)
    T, G = rng.uniform(0, 3, (2, 40))
    res = fit(_noiseless(T, G, (15.0, 200.0, 10.0)))
    np.testing.assert_allclose(res.theta.as_array(), [15.0, 200.0, 10.0], rtol=1e-7)
    assert res.converged and res.kkt_ok


def test_two_level_closed_form():
    # with two distinct T levels the MLE fits each level's geometric mean exactly
    z = np.log([10.0, 40.0, 30.0, 120.0])
    T = np.array([0.0, 0.0, 1.0, 1.0])
    data = Dataset(T=T, G=np.zeros(4), z=z, year=[])
    res = fit(data)
    gm0, gm1 = math.sqrt(400.0), math.sqrt(3600.0)
    np.testing.assert_allclose(res.theta.as_array()[:2], [gm0, gm1 - gm0], rtol=1e-8)
    # grid oracle on the objective
    grid0 = np.linspace(15, 25, 201)
    grid1 = np.linspace(35, 45, 201)
    S = [[objective((a, b, 0.0), data) for b in grid1] for a in grid0]
    i, j = np.unravel_index(np.argmin(S), (201, 201))
    assert abs(grid0[i] - gm0) <= 0.05 and abs(grid1[j] - (gm1 - gm0)) <= 0.05


def test_lower_bound_active_matches_scipy():
    # data generated with a negative-looking background: theta0 should hit 0
    rng = np.random.default_rng(5)
    T, G = rng.uniform(0.5, 3, (2, 60))
    z = np.log(100 * T + 5 * G) - 0.3 + rng.normal(0, 0.05, 60)
    z[T < 1] -= 1.0
    data = Dataset(T=T, G=G, z=z, year=[])
    res = fit(data)
    ref = optimize.least_squares(
        lambda th: data.z - np.log(th[0] + th[1] * T + th[2] * G),
        x0=[1.0, 50.0, 5.0], bounds=(0, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    assert res.rss <= 2 * ref.cost * (1 + 1e-9)
    assert res.theta.background == 0.0
    assert 0 in res.active_bounds
    assert res.kkt_ok


def test_initial_theta_examples():
    T = np.array([0.0, 1.0, 2.0, 3.0])
    data = Dataset(T=T, G=np.zeros(4), z=np.log(5 + 10 * T), year=[])
    np.testing.assert_allclose(initial_theta(data).as_array(), [5.0, 10.0, 0.0], rtol=1e-12)
    # negative OLS slope is clipped
    data = Dataset(T=T, G=np.zeros(4), z=np.log(50 - 10 * T), year=[])
    th = initial_theta(data)
    assert th.paint_rate == 0.0 and th.background > 0


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_initial_theta_feasible(seed):
    rng = np.random.default_rng(seed)
    T, G = rng.uniform(0, 3, (2, 20))
    z = rng.normal(3, 2, 20)
    th = initial_theta(Dataset(T=T, G=G, z=z, year=[])).as_array()
    assert np.all(th >= 0)
    assert np.all(th[0] + th[1] * T + th[2] * G > 0)


def test_objective_history_nonincreasing(sim_data):
    res = fit(sim_data)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)
    assert h[-1] == pytest.approx(res.rss, rel=1e-12)


def test_refit_from_optimum_is_fixed_point(sim_data):
    res = fit(sim_data)
    again = fit(sim_data, start=res.theta)
    np.testing.assert_allclose(again.theta.as_array(), res.theta.as_array(), rtol=1e-7)
    assert again.rss <= res.rss * (1 + 1e-12)


def test_permutation_invariance(sim_data):
    res = fit(sim_data)
    perm = np.random.default_rng(0).permutation(sim_data.n)
    res_p = fit(sim_data.subset(perm))
    np.testing.assert_allclose(res_p.theta.as_array(), res.theta.as_array(), rtol=1e-7)
    assert res_p.sigma == pytest.approx(res.sigma, rel=1e-10)


def _scaled(data, k):
    return Dataset(data.T * k, data.G * k, data.z, data.year, data.ids, data.site)


def test_scaling_by_power_of_two_is_exact(sim_data):
    res = fit(sim_data)
    res4 = fit(_scaled(sim_data, 4.0))
    th, th4 = res.theta.as_array(), res4.theta.as_array()
    assert th4[0] == th[0]
    assert th4[1] * 4 == th[1] and th4[2] * 4 == th[2]
    assert res4.sigma == res.sigma
    np.testing.assert_array_equal(res4.residuals, res.residuals)


@pytest.mark.parametrize("k", [0.02, 3.0, 50.0])
def test_scaling_equivariance(sim_data, k):
    res = fit(sim_data)
    rk = fit(_scaled(sim_data, k))
    th = res.theta.as_array()
    np.testing.assert_allclose(rk.theta.as_array(), [th[0], th[1] / k, th[2] / k], rtol=1e-8)
    np.testing.assert_allclose(rk.residuals, res.residuals, atol=1e-8)
    np.testing.assert_allclose(efc(rk.theta, 0.3 * k, 2.0 * k), efc(res.theta, 0.3, 2.0), rtol=1e-8)
    np.testing.assert_allclose(np.sqrt(np.diag(rk.cov_theta))[1:] * k, np.sqrt(np.diag(res.cov_theta))[1:], rtol=1e-6)


def test_collinear_design_raises():
    T = np.linspace(0.1, 2, 10)
    with pytest.raises(CollinearityError):
        fit(Dataset(T=T, G=3 * T, z=np.log(10 + 50 * T), year=[]))
    with pytest.raises(CollinearityError):
        fit(Dataset(T=np.full(10, 0.4), G=T, z=np.log(10 + 50 * T), year=[]))


def test_too_few_samples():
    with pytest.raises(FitError):
        fit(Dataset(T=[0.1, 0.2, 0.3], G=[1.0, 0.5, 0.2], z=[1.0, 2.0, 3.0], year=[]))


def test_convergence_error_keeps_best(sim_data):
    with pytest.raises(ConvergenceError) as info:
        fit(sim_data, FitOptions(max_iter=1, restarts=False))
    best = info.value.best
    assert best is not None and not best.converged
    assert best.rss <= objective(initial_theta(sim_data).as_array(), sim_data)


def test_sigma_is_profiled(sim_data):
    res = fit(sim_data)
    assert res.sigma2 == pytest.approx(res.rss / res.n, rel=1e-14)
    assert res.sigma2_df == pytest.approx(res.rss / (res.n - 3), rel=1e-14)


def test_json_fields(sim_data):
    d = json.loads(json.dumps(fit(sim_data).to_dict()))
    for key in ("theta", "sigma", "cov", "residual_mean", "converged", "iterations", "schema_version"):
        assert key in d
    assert set(d["theta"]) == {"background", "paint_rate", "gas_rate"}
    cov = np.array(d["cov"])
    assert cov.shape == (3, 3)
    np.testing.assert_allclose(cov, cov.T)


@pytest.mark.parametrize("seed", range(4))
def test_matches_bounded_scipy_on_simulated_data(exposures, seed):
    data = make_data(exposures, n=150, seed=100 + seed)
    res = fit(data)
    ref = optimize.least_squares(
        lambda th: data.z - np.log(th[0] + th[1] * data.T + th[2] * data.G),
        x0=res.theta.as_array() * 1.3 + 1, bounds=(0, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    assert res.rss <= 2 * ref.cost * (1 + 1e-10)
