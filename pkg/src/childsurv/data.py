"""Core record types: outcomes, children, calendar period grids and survey designs.

Calendar time is measured in century-month codes (CMC), the month count used by
birth-history surveys where January 1900 is month 1.  Ages are measured in
months since birth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

DAYS_PER_MONTH = 30.4375
HORIZON = 60.0

__all__ = [
    "DAYS_PER_MONTH",
    "HORIZON",
    "Exact",
    "RightCensored",
    "Interval",
    "Outcome",
    "ChildRecord",
    "PeriodGrid",
    "SurveyDesign",
    "RecordArrays",
    "year_to_cmc",
    "cmc_to_year",
]


def year_to_cmc(year: float) -> float:
    """Century-month code of January of ``year``."""
    return (float(year) - 1900.0) * 12.0 + 1.0


def cmc_to_year(cmc: float) -> float:
    """Fractional calendar year of a century-month code."""
    return 1900.0 + (float(cmc) - 1.0) / 12.0


def _check_age(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite nonnegative age, got {value!r}")
    return value


@dataclass(frozen=True)
class Exact:
    """Death observed at an exact age ``t`` (months)."""

    t: float

    def __post_init__(self):
        object.__setattr__(self, "t", _check_age(self.t, "t"))

    @property
    def is_death(self) -> bool:
        return True


@dataclass(frozen=True)
class RightCensored:
    """Child known to be alive at age ``t`` (months)."""

    t: float

    def __post_init__(self):
        object.__setattr__(self, "t", _check_age(self.t, "t"))

    @property
    def is_death(self) -> bool:
        return False


@dataclass(frozen=True)
class Interval:
    """Death known to occur in the age interval ``(t0, t1]`` (months)."""

    t0: float
    t1: float

    def __post_init__(self):
        t0 = _check_age(self.t0, "t0")
        t1 = float(self.t1)
        if not t1 > t0:
            raise ValueError(f"interval requires t0 < t1, got ({t0}, {t1})")
        if np.isnan(t1):
            raise ValueError("t1 must not be NaN")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "t1", t1)

    @property
    def is_death(self) -> bool:
        return True


Outcome = Union[Exact, RightCensored, Interval]


@dataclass(frozen=True)
class ChildRecord:
    """One child from a birth history.

    Parameters
    ----------
    child_id : str
        Identifier, unique within a survey.
    birth : float
        Birth date in century-month code units.
    outcome : Exact, RightCensored or Interval
        Observed survival outcome with ages in months.
    weight : float
        Positive survey weight.
    stratum, cluster : str
        Design identifiers.  Clusters are nested within strata.
    """

    child_id: str
    birth: float
    outcome: Outcome
    weight: float = 1.0
    stratum: str = "1"
    cluster: str = "1"

    def __post_init__(self):
        w = float(self.weight)
        if not np.isfinite(w) or w <= 0:
            raise ValueError(f"weight must be positive, got {self.weight!r}")
        if not np.isfinite(float(self.birth)):
            raise ValueError("birth must be finite")
        if not isinstance(self.outcome, (Exact, RightCensored, Interval)):
            raise TypeError(f"unsupported outcome type {type(self.outcome).__name__}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "birth", float(self.birth))
        object.__setattr__(self, "child_id", str(self.child_id))
        object.__setattr__(self, "stratum", str(self.stratum))
        object.__setattr__(self, "cluster", str(self.cluster))


@dataclass(frozen=True)
class PeriodGrid:
    """Ordered calendar boundaries ``y_1 < ... < y_{P+1}`` in CMC units.

    Period ``p`` covers ``[y_p, y_{p+1})``.
    """

    boundaries: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if len(b) < 2:
            raise ValueError("a period grid needs at least two boundaries")
        if not all(np.isfinite(b)):
            raise ValueError("period boundaries must be finite")
        if any(b1 <= b0 for b0, b1 in zip(b[:-1], b[1:])):
            raise ValueError("period boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def from_years(cls, years: Sequence[float]) -> "PeriodGrid":
        """Grid from calendar years, each mapped to its January CMC."""
        return cls(tuple(year_to_cmc(y) for y in years))

    @property
    def n_periods(self) -> int:
        return len(self.boundaries) - 1

    @property
    def starts(self) -> np.ndarray:
        return np.asarray(self.boundaries[:-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    def period_of(self, calendar) -> np.ndarray:
        """Period index of calendar times, ``-1`` outside the grid."""
        calendar = np.asarray(calendar, dtype=float)
        idx = np.searchsorted(np.asarray(self.boundaries), calendar, side="right") - 1
        idx = np.where((idx < 0) | (idx >= self.n_periods), -1, idx)
        return idx

    def labels(self) -> list:
        """Human readable labels based on calendar years."""
        out = []
        for lo, hi in zip(self.boundaries[:-1], self.boundaries[1:]):
            out.append(f"{cmc_to_year(lo):g}-{cmc_to_year(hi):g}")
        return out


@dataclass
class RecordArrays:
    """Columnar view of a collection of child records.

    ``kind`` is 0 for right censored, 1 for exact and 2 for interval outcomes.
    ``t0`` holds the censoring or death age, ``t1`` the interval upper bound
    (equal to ``t0`` for the other kinds).
    """

    child_id: np.ndarray
    birth: np.ndarray
    kind: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    weight: np.ndarray
    stratum: np.ndarray
    cluster: np.ndarray

    RC, EXACT, INTERVAL = 0, 1, 2

    def __len__(self):
        return len(self.birth)

    @classmethod
    def from_records(cls, records: Iterable[ChildRecord]) -> "RecordArrays":
        records = list(records)
        n = len(records)
        kind = np.empty(n, dtype=np.int8)
        t0 = np.empty(n)
        t1 = np.empty(n)
        for i, r in enumerate(records):
            o = r.outcome
            if isinstance(o, RightCensored):
                kind[i], t0[i], t1[i] = 0, o.t, o.t
            elif isinstance(o, Exact):
                kind[i], t0[i], t1[i] = 1, o.t, o.t
            else:
                kind[i], t0[i], t1[i] = 2, o.t0, o.t1
        return cls(
            child_id=np.array([r.child_id for r in records], dtype=object),
            birth=np.array([r.birth for r in records], dtype=float),
            kind=kind,
            t0=t0,
            t1=t1,
            weight=np.array([r.weight for r in records], dtype=float),
            stratum=np.array([r.stratum for r in records], dtype=object),
            cluster=np.array([r.cluster for r in records], dtype=object),
        )

    def subset(self, mask) -> "RecordArrays":
        return RecordArrays(
            *(getattr(self, f)[mask] for f in
              ("child_id", "birth", "kind", "t0", "t1", "weight", "stratum", "cluster"))
        )

    def with_weights(self, weight) -> "RecordArrays":
        weight = np.asarray(weight, dtype=float)
        if weight.shape != self.weight.shape:
            raise ValueError("weight vector has the wrong length")
        out = self.subset(slice(None))
        out.weight = weight
        return out

    def to_records(self) -> list:
        out = []
        for i in range(len(self)):
            k = self.kind[i]
            if k == 0:
                o = RightCensored(self.t0[i])
            elif k == 1:
                o = Exact(self.t0[i])
            else:
                o = Interval(self.t0[i], self.t1[i])
            out.append(ChildRecord(self.child_id[i], self.birth[i], o, self.weight[i],
                                   self.stratum[i], self.cluster[i]))
        return out


@dataclass(frozen=True)
class SurveyDesign:
    """Stratified cluster design with clusters nested in strata.

    Attributes
    ----------
    strata : tuple of str
        Sorted stratum labels.
    clusters : tuple of tuple of str
        Sorted cluster labels within each stratum.
    child_stratum, child_cluster : ndarray of int
        For every child, the index of its stratum and its global cluster index
        (clusters enumerated stratum by stratum).
    """

    strata: tuple
    clusters: tuple
    child_stratum: np.ndarray = field(repr=False)
    child_cluster: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, stratum, cluster) -> "SurveyDesign":
        stratum = np.asarray(stratum, dtype=object).astype(str)
        cluster = np.asarray(cluster, dtype=object).astype(str)
        strata = tuple(sorted(set(stratum.tolist())))
        owner = {}
        for s, c in zip(stratum.tolist(), cluster.tolist()):
            prev = owner.setdefault(c, s)
            if prev != s:
                raise ValueError(
                    f"cluster {c!r} appears in strata {prev!r} and {s!r}; clusters must be nested"
                )
        clusters = tuple(
            tuple(sorted(c for c, s in owner.items() if s == h)) for h in strata
        )
        s_index = {h: i for i, h in enumerate(strata)}
        c_index = {}
        k = 0
        for cl in clusters:
            for c in cl:
                c_index[c] = k
                k += 1
        child_stratum = np.array([s_index[s] for s in stratum.tolist()], dtype=np.int64)
        child_cluster = np.array([c_index[c] for c in cluster.tolist()], dtype=np.int64)
        return cls(strata, clusters, child_stratum, child_cluster)

    @classmethod
    def from_records(cls, records) -> "SurveyDesign":
        if isinstance(records, RecordArrays):
            return cls.from_arrays(records.stratum, records.cluster)
        records = list(records)
        return cls.from_arrays([r.stratum for r in records], [r.cluster for r in records])

    @property
    def n_clusters(self) -> np.ndarray:
        """Number of sampled clusters per stratum."""
        return np.array([len(c) for c in self.clusters], dtype=np.int64)

    @property
    def cluster_stratum(self) -> np.ndarray:
        """Stratum index of each global cluster index."""
        return np.repeat(np.arange(len(self.strata)), self.n_clusters)

    def check_variance_estimable(self):
        """Raise if some stratum has fewer than two clusters."""
        for h, cl in zip(self.strata, self.clusters):
            if len(cl) < 2:
                raise ValueError(
                    f"stratum {h!r} has a single cluster; design variance is not estimable"
                )
