import numpy as np
import pytest
from scipy import stats
from sklearn.base import clone

from childsurv.data import ChildRecord, Exact, Interval, PeriodGrid, RightCensored
from childsurv.hazards import get_family
from childsurv.likelihood import (ParametricSurvival, PseudoLikelihood, fit_pseudo_mle,
                                  minimize_box_bfgs)
from childsurv.simulate import lognormal_two_period_spec, simulate

GRID1 = PeriodGrid((1200.0, 1300.0))


def _mixed_records():
    return [ChildRecord("a", 1200, RightCensored(20.0), 1.5),
            ChildRecord("b", 1200, Exact(3.0), 0.7),
            ChildRecord("c", 1200, Interval(12.0, 24.0), 2.0),
            ChildRecord("d", 1210, Interval(0.0, 1.0), 1.0)]


def test_loglik_matches_direct_lognormal_formula():
    recs = _mixed_records()
    mu, sigma = 4.0, 2.0
    d = stats.lognorm(s=sigma, scale=np.exp(mu))
    oracle = (1.5 * d.logsf(20.0) + 0.7 * d.logpdf(3.0)
              + 2.0 * np.log(d.cdf(24.0) - d.cdf(12.0)) + np.log(d.cdf(1.0)))
    fam = get_family("lognormal")
    lik = PseudoLikelihood(recs, GRID1, fam)
    eta = fam.to_unconstrained(np.array([[mu, sigma]])).ravel()
    assert lik.loglik(eta) == pytest.approx(oracle, rel=1e-12)


def test_two_period_likelihood_uses_piecewise_hazard():
    # born at 1230 with an exact death at 45 months: 30 months in period 0, 15 in period 1
    grid = PeriodGrid((1200.0, 1260.0, 1320.0))
    recs = [ChildRecord("a", 1230, Exact(45.0))]
    fam = get_family("exponential")
    lik = PseudoLikelihood(recs, grid, fam)
    eta = fam.to_unconstrained(np.array([[0.01], [0.02]])).ravel()
    assert lik.loglik(eta) == pytest.approx(np.log(0.02) - (30 * 0.01 + 15 * 0.02))


def test_weight_scaling_leaves_estimate_unchanged():
    spec = lognormal_two_period_spec(seed=5, n_strata=4, children_per_cluster=60)
    recs, _ = simulate(spec)
    a = fit_pseudo_mle(recs, spec.grid, "weibull")
    scaled = [ChildRecord(r.child_id, r.birth, r.outcome, 3.0 * r.weight, r.stratum, r.cluster)
              for r in recs]
    b = fit_pseudo_mle(scaled, spec.grid, "weibull")
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-4, atol=1e-10)


def test_zero_death_period_diagnostic():
    grid = PeriodGrid((1200.0, 1260.0, 1320.0))
    recs = [ChildRecord(f"a{i}", 1200, Exact(5.0 + i), 1.0, "s", f"c{i % 2}") for i in range(10)]
    recs += [ChildRecord(f"b{i}", 1265, RightCensored(40.0), 1.0, "s", f"c{i % 2}") for i in range(10)]
    res = fit_pseudo_mle(recs, grid, "exponential")
    assert any("period 1: no events" in d for d in res.diagnostics)


def test_box_bfgs_on_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -4.0])

    def f(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b

    x, *_ = minimize_box_bfgs(f, np.zeros(2), np.array([-10.0, -10.0]), np.array([10.0, 10.0]))
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-6)
    # the free optimum has x1 = -2.6, so a lower bound at -2 is active
    x, *_ = minimize_box_bfgs(f, np.zeros(2), np.array([-10.0, -2.0]), np.array([10.0, 10.0]))
    assert x[1] == -2.0
    assert x[0] == pytest.approx((1.0 + 2.0) / 3.0, abs=1e-6)


def test_estimator_api_and_rates():
    spec = lognormal_two_period_spec(seed=8, n_strata=4, children_per_cluster=100)
    recs, truth = simulate(spec)
    est = ParametricSurvival(family="lognormal", periods=spec.grid)
    assert clone(est).get_params()["family"] == "lognormal"
    est.fit(recs)
    s = est.predict_survival([0.0, 1.0, 60.0])
    assert s.shape == (2, 3) and np.all(s[:, 0] == 1.0)
    rates = est.rates()
    assert len(rates) == 6
    for r in rates:
        assert r["lo"] < r["estimate"] < r["hi"]
    u5 = [r for r in rates if r["rate"] == "u5mr" and r["period"] == 0][0]
    assert abs(u5["estimate"] - truth.rates[0]["u5mr"]) < 4 * u5["se"]
    est_, lo, hi = est.survival_band([12.0, 36.0], 1)
    assert np.all(lo < est_) and np.all(est_ < hi)
