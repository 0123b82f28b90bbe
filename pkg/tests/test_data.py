import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from childsurv.data import (ChildRecord, Exact, Interval, PeriodGrid, RecordArrays,
                            RightCensored, SurveyDesign, cmc_to_year, year_to_cmc)


def test_cmc_known_values():
    # January 1900 is month 1; January 2000 is 1201
    assert year_to_cmc(1900) == 1.0
    assert year_to_cmc(2000) == 1201.0
    assert cmc_to_year(1201) == 2000.0


@given(st.floats(1900, 2100))
def test_cmc_roundtrip(y):
    assert cmc_to_year(year_to_cmc(y)) == pytest.approx(y, abs=1e-9)


def test_outcome_validation():
    with pytest.raises(ValueError):
        Exact(-1.0)
    with pytest.raises(ValueError):
        Interval(3.0, 3.0)
    with pytest.raises(ValueError):
        RightCensored(float("nan"))
    assert Interval(1.0, 2.0).is_death and not RightCensored(4.0).is_death


def test_child_record_weight_must_be_positive():
    with pytest.raises(ValueError):
        ChildRecord("a", 1200, Exact(1.0), weight=0.0)
    with pytest.raises(TypeError):
        ChildRecord("a", 1200, (1.0, 2.0))


def test_period_grid():
    g = PeriodGrid.from_years([2000, 2005, 2010])
    assert g.n_periods == 2
    np.testing.assert_array_equal(g.lengths, [60.0, 60.0])
    np.testing.assert_array_equal(g.period_of([1200, 1201, 1260, 1261, 1321]), [-1, 0, 0, 1, -1])
    assert g.labels() == ["2000-2005", "2005-2010"]
    with pytest.raises(ValueError):
        PeriodGrid((5.0, 5.0))
    with pytest.raises(ValueError):
        PeriodGrid((1.0,))


def test_survey_design_nesting():
    d = SurveyDesign.from_arrays(["b", "a", "a", "b"], ["b1", "a1", "a2", "b2"])
    assert d.strata == ("a", "b")
    np.testing.assert_array_equal(d.n_clusters, [2, 2])
    np.testing.assert_array_equal(d.child_cluster, [2, 0, 1, 3])
    with pytest.raises(ValueError, match="nested"):
        SurveyDesign.from_arrays(["a", "b"], ["c", "c"])
    with pytest.raises(ValueError, match="single cluster"):
        SurveyDesign.from_arrays(["a"], ["c"]).check_variance_estimable()


outcomes = st.one_of(
    st.floats(0, 60).map(RightCensored),
    st.floats(0, 60).map(Exact),
    st.tuples(st.floats(0, 59), st.floats(0.01, 12)).map(lambda t: Interval(t[0], t[0] + t[1])),
)


@settings(max_examples=50)
@given(st.lists(st.tuples(outcomes, st.floats(0.1, 10), st.integers(1100, 1300)),
                min_size=1, max_size=20))
def test_record_arrays_roundtrip(items):
    recs = [ChildRecord(f"c{i}", b, o, w, "s", f"k{i % 3}") for i, (o, w, b) in enumerate(items)]
    arr = RecordArrays.from_records(recs)
    assert arr.to_records() == recs
    assert len(arr.subset(arr.kind == 0)) == sum(isinstance(r.outcome, RightCensored) for r in recs)
