import numpy as np
import pytest

from childsurv.likelihood import fit_pseudo_mle
from childsurv.simulate import lognormal_two_period_spec, simulate
from childsurv.validation import (CAVEAT, _mvn_factor, compare, sample_parametric_curves,
                                  validate_fit, validation_ages)


def test_identical_samples_agree_everywhere():
    rng = np.random.default_rng(0)
    S = rng.uniform(0.9, 1.0, size=(50, 10))
    rep = compare(S, S, np.arange(10.0))
    assert rep.percentage == 100.0 and np.all(rep.p50 == 0)


def test_shifted_samples_never_agree():
    rng = np.random.default_rng(1)
    S = rng.uniform(0.9, 0.91, size=(50, 10))
    rep = compare(S + 0.05, S, np.arange(10.0))
    assert rep.percentage == 0.0


def test_defined_mask_and_errors():
    S = np.zeros((4, 3))
    rep = compare(S, S, [1.0, 2.0, 3.0], defined=[True, False, True])
    assert list(rep.ages) == [1.0, 3.0]
    with pytest.raises(ValueError, match="sample counts"):
        compare(np.zeros((4, 3)), np.zeros((5, 3)), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        compare(S, S, [1.0, 2.0, 3.0], defined=[False] * 3)
    assert list(validation_ages([True, False, True], [1.0, 2.0, 3.0])) == [1.0, 3.0]


def test_negative_eigenvalues_are_clipped():
    V = np.array([[1.0, 2.0], [2.0, 1.0]])
    F, clipped = _mvn_factor(V)
    assert clipped
    assert np.all(np.linalg.eigvalsh(F @ F.T) >= -1e-12)


@pytest.fixture(scope="module")
def small_fit():
    spec = lognormal_two_period_spec(seed=2, n_strata=4, clusters_per_stratum=4,
                                     children_per_cluster=80)
    recs, _ = simulate(spec)
    return recs, spec.grid, fit_pseudo_mle(recs, spec.grid, "lognormal")


def test_parametric_draws_are_reproducible(small_fit):
    _, _, fit = small_fit
    ages = np.arange(0.0, 61.0)
    a = sample_parametric_curves(fit, 0, ages, K=20, seed=5)
    b = sample_parametric_curves(fit, 0, ages, K=20, seed=5)
    np.testing.assert_array_equal(a, b)
    assert np.all(a[:, 0] == 1.0) and np.all(np.diff(a, axis=1) <= 0)
    # draws centre on the fitted curve
    centre = np.exp(-fit.params.family.cumhaz0(fit.params.natural[0], ages))
    assert np.abs(np.median(a, axis=0) - centre).max() < 0.01


def test_validate_fit_report(small_fit, tmp_path):
    recs, grid, fit = small_fit
    out = validate_fit(recs, grid, K=30, seed=9, fit=fit)
    assert set(out) == {0, 1}
    rep = out[0]
    assert 0 <= rep.percentage <= 100 and rep.K == 30
    assert set(rep.ages) <= set(range(1, 60))
    path = tmp_path / "v.csv"
    rep.to_csv(path, ["hdr"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# hdr" and lines[1].startswith("age_months,diff_p2.5")
    assert lines[-1].startswith("# summary: percentage=") and CAVEAT in lines[-1]
    again = validate_fit(recs, grid, K=30, seed=9, fit=fit)[0]
    np.testing.assert_array_equal(again.p50, rep.p50)
