import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from childsurv.data import SurveyDesign
from childsurv.variance import (delta_method, design_variance, export_replicate_weights,
                                make_bootstrap_plan, read_replicate_weights,
                                sandwich_covariance)


def _design(rng, n_strata=3, n_clusters=4, per=5):
    strata = np.repeat([f"h{h}" for h in range(n_strata)], n_clusters * per)
    clusters = np.array([f"{s}c{k // per}" for s, k in zip(strata, np.tile(np.arange(n_clusters * per), n_strata))])
    return SurveyDesign.from_arrays(strata, clusters), strata, clusters


def test_design_variance_matches_loops():
    rng = np.random.default_rng(1)
    design, strata, clusters = _design(rng)
    z = rng.normal(size=(len(strata), 2))
    w = rng.uniform(0.5, 2, len(strata))
    V = np.zeros((2, 2))
    for h in np.unique(strata):
        cl = np.unique(clusters[strata == h])
        tot = np.array([np.sum((w[:, None] * z)[clusters == c], axis=0) for c in cl])
        dev = tot - tot.mean(axis=0)
        V += len(cl) / (len(cl) - 1) * dev.T @ dev
    np.testing.assert_allclose(design_variance(z, w, design), V, rtol=1e-12)


def test_sandwich_reduces_to_influence_variance():
    rng = np.random.default_rng(2)
    design, strata, _ = _design(rng)
    s = rng.normal(size=(len(strata), 2))
    H = -np.array([[4.0, 1.0], [1.0, 3.0]])
    w = np.ones(len(strata))
    cov, infl = sandwich_covariance(s, H, w, design)
    Hi = np.linalg.inv(H)
    np.testing.assert_allclose(cov, Hi @ design_variance(s, w, design) @ Hi.T, rtol=1e-10)
    cov_f, _ = sandwich_covariance(s, H, w, design, free=np.array([True, False]))
    assert cov_f[1, 1] == 0 and cov_f[0, 0] > 0


def test_delta_method_linear_exact():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    g = np.array([1.5, -2.0])
    v, se = delta_method(lambda t: g @ t, np.array([1.0, 2.0]), cov)
    assert v == pytest.approx(-2.5)
    assert se == pytest.approx(np.sqrt(g @ cov @ g), rel=1e-8)


def test_bootstrap_plan_structure_and_determinism(tmp_path):
    rng = np.random.default_rng(3)
    design, strata, clusters = _design(rng)
    plan = make_bootstrap_plan(design, 10, seed=42)
    nh = design.n_clusters
    offsets = np.concatenate([[0], np.cumsum(nh)])
    for h in range(len(nh)):
        assert np.all(plan.counts[:, offsets[h]:offsets[h + 1]].sum(axis=1) == nh[h] - 1)
    # replicates do not depend on how many are drawn
    np.testing.assert_array_equal(make_bootstrap_plan(design, 4, seed=42).counts, plan.counts[:4])
    assert not np.array_equal(make_bootstrap_plan(design, 10, seed=43).counts, plan.counts)
    w = np.ones(len(strata))
    path = tmp_path / "rw.csv"
    export_replicate_weights(plan, [f"i{k}" for k in range(len(w))], w, path, ["hdr"])
    ids, M = read_replicate_weights(path)
    assert ids[0] == "i0" and M.shape == (len(w), 10)
    np.testing.assert_allclose(M, plan.replicate_weights(w))
    with pytest.raises(ValueError):
        make_bootstrap_plan(design, 5, seed=None)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_rao_wu_factors_average_one(seed):
    rng = np.random.default_rng(seed)
    design, _, _ = _design(rng, n_strata=2, n_clusters=3, per=2)
    plan = make_bootstrap_plan(design, 400, seed)
    # each cluster is drawn n_h - 1 times in expectation over n_h clusters
    f = plan.cluster_factors()
    assert f.mean() == pytest.approx(1.0, abs=0.1)
    assert np.all(f.sum(axis=1) == pytest.approx(design.n_clusters.sum()))
