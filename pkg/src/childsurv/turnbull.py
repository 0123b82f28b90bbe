"""Weighted Turnbull estimator for left-truncated, interval-censored data.

Observations are sets ``A_i`` known to contain the event age and truncation
sets ``B_i = (a_i, inf)``.  Interval deaths are half open ``(t0, t1]``, right
censoring at ``t`` is ``(t, inf)`` and exact deaths are single points.  Mass
is placed on the innermost intervals (a left endpoint immediately followed
by a right endpoint once all endpoints are sorted) and estimated by
the expectation-maximisation self-consistency iteration.

Because every ``A_i`` covers a contiguous run of innermost intervals and
every ``B_i`` a suffix, the iteration only needs cumulative sums, so a step
costs ``O(n + m)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import HORIZON, PeriodGrid, RecordArrays, SurveyDesign

__all__ = [
    "TurnbullData",
    "TurnbullEstimator",
    "innermost_intervals",
    "turnbull_by_period",
    "PeriodTurnbull",
    "survival_from_masses",
]

_EXACT_L, _R, _OPEN_L = 0, 1, 2


@dataclass
class TurnbullData:
    """Observations for Turnbull estimation.

    Attributes
    ----------
    left, right : ndarray
        Endpoints of ``A_i``; ``right`` is ``inf`` for right censoring.
    exact : ndarray of bool
        True where ``A_i`` is the single point ``left == right``.
    trunc : ndarray
        Truncation ages; the observation is conditioned on ``T > trunc``.
        ``-inf`` means untruncated.
    weight : ndarray
    source : ndarray of int
        Index of the originating child, used to map replicate weights.
    """

    left: np.ndarray
    right: np.ndarray
    exact: np.ndarray
    trunc: np.ndarray
    weight: np.ndarray
    source: np.ndarray = field(default=None)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        n = self.left.size
        self.exact = np.asarray(self.exact, dtype=bool) if self.exact is not None else self.left == self.right
        self.trunc = np.full(n, -np.inf) if self.trunc is None else np.asarray(self.trunc, dtype=float)
        self.weight = np.ones(n) if self.weight is None else np.asarray(self.weight, dtype=float)
        self.source = np.arange(n) if self.source is None else np.asarray(self.source, dtype=np.int64)
        if not (self.right.size == self.exact.size == self.trunc.size == self.weight.size == n):
            raise ValueError("TurnbullData arrays must have equal lengths")
        if n and np.any(self.right < self.left):
            raise ValueError("observation sets need left <= right")
        if n and np.any(self.exact & (self.left != self.right)):
            raise ValueError("exact observations need left == right")
        if n and np.any(~self.exact & (self.left == self.right)):
            raise ValueError("censored observations need left < right")
        if n and np.any(self.weight < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self):
        return self.left.size

    @classmethod
    def from_outcomes(cls, kind, t0, t1, weight=None, trunc=None):
        """Build from record kinds (0 censored, 1 exact, 2 interval)."""
        kind = np.asarray(kind)
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        right = np.where(kind == 0, np.inf, t1)
        return cls(t0, right, kind == 1, trunc, weight)


@dataclass(frozen=True)
class Innermost:
    """Innermost intervals ``(lower, upper]`` or points ``[lower, lower]``."""

    lower: np.ndarray
    upper: np.ndarray
    point: np.ndarray

    def __len__(self):
        return self.lower.size


def _keys(data: TurnbullData):
    lv = data.left
    lk = np.where(data.exact, _EXACT_L, _OPEN_L)
    return lv, lk, data.right, np.full(len(data), _R)


def innermost_intervals(data: TurnbullData):
    """Innermost intervals of the observation sets.

    Returns
    -------
    Innermost
        Sorted innermost intervals.  When some set is unbounded above but no
        innermost interval reaches infinity, a tail interval above the largest
        finite endpoint is appended.
    """
    lv, lk, rv, rk = _keys(data)
    vals = np.concatenate([lv, rv])
    kinds = np.concatenate([lk, rk])
    order = np.lexsort((kinds, vals))
    vals, kinds = vals[order], kinds[order]
    # collapse duplicate keys
    if vals.size:
        keep = np.ones(vals.size, dtype=bool)
        keep[1:] = (vals[1:] != vals[:-1]) | (kinds[1:] != kinds[:-1])
        vals, kinds = vals[keep], kinds[keep]
    is_l = kinds != _R
    hit = np.nonzero(is_l[:-1] & ~is_l[1:])[0]
    lower = vals[hit]
    upper = vals[hit + 1]
    point = kinds[hit] == _EXACT_L
    if np.isinf(rv).any() and not np.isinf(upper).any():
        finite = vals[np.isfinite(vals)]
        lower = np.append(lower, finite.max())
        upper = np.append(upper, np.inf)
        point = np.append(point, False)
    return Innermost(lower, upper, point)


def _index_ranges(data: TurnbullData, inner: Innermost):
    """Index ranges of innermost intervals inside each ``A_i`` and ``B_i``.

    ``A_i`` covers innermost intervals ``a_lo <= j < a_hi``; ``B_i`` covers
    ``j >= b_lo``.
    """
    lv, lk, rv, _ = _keys(data)
    m = len(inner)
    inner_kind = np.where(inner.point, _EXACT_L, _OPEN_L)
    # innermost left keys increase in (value, kind); skip a point sitting at
    # an open left end
    pos = np.searchsorted(inner.lower, lv, side="left")
    at = np.minimum(pos, m - 1)
    a_lo = pos + ((pos < m) & (inner.lower[at] == lv) & (inner_kind[at] < lk))
    a_hi = np.searchsorted(inner.upper, rv, side="right")
    b_lo = np.searchsorted(inner.upper, data.trunc, side="right")
    return a_lo.astype(np.int64), a_hi.astype(np.int64), b_lo.astype(np.int64)


def survival_from_masses(inner: Innermost, masses, ages, interpolate=False, mass_tol=1e-6):
    """Survival ``P(T > x)`` implied by interval masses.

    Parameters
    ----------
    inner : Innermost
    masses : array of shape (m,) or (K, m)
    ages : array of shape (A,)
    interpolate : bool
        Spread each interval's mass uniformly over it instead of declaring ages
        inside a positive-mass interval undefined.

    Returns
    -------
    surv : ndarray of shape (A,) or (K, A)
    defined : ndarray of bool, shape (A,) or (K, A)
    """
    s = np.atleast_2d(np.asarray(masses, dtype=float))
    ages = np.atleast_1d(np.asarray(ages, dtype=float))
    lo, hi, pt = inner.lower[:, None], inner.upper[:, None], inner.point[:, None]
    x = ages[None, :]
    above = np.where(pt, lo > x, lo >= x)
    straddle = (~pt) & (lo < x) & (hi > x)
    surv = s @ above.astype(float)
    if interpolate:
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(np.isfinite(hi), (hi - x) / (hi - lo), 1.0)
        frac = np.where(straddle, frac, 0.0)
        surv = surv + s @ frac
        defined = np.ones_like(surv, dtype=bool)
    else:
        defined = (s @ straddle.astype(float)) <= mass_tol
    if np.ndim(masses) == 1:
        return surv[0], defined[0]
    return surv, defined


class TurnbullEstimator(BaseEstimator):
    """Nonparametric maximum likelihood survival with truncation and censoring.

    Parameters
    ----------
    tol : float, default 1e-8
        Convergence threshold on the sup-norm change of the masses.
    max_iter : int, default 10000
    mass_tol : float, default 1e-6
        Masses at or below this value do not make an age undefined.
    debug : bool, default False
        Check that every iteration increases the log-likelihood.

    Attributes
    ----------
    innermost_ : Innermost
    masses_ : ndarray
    loglik_ : float
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, tol=1e-8, max_iter=10000, mass_tol=1e-6, debug=False):
        self.tol = tol
        self.max_iter = max_iter
        self.mass_tol = mass_tol
        self.debug = debug

    def _prepare(self, data: TurnbullData):
        if not isinstance(data, TurnbullData):
            raise TypeError("expected TurnbullData")
        if len(data) == 0:
            raise ValueError("no observations")
        inner = innermost_intervals(data)
        a_lo, a_hi, b_lo = _index_ranges(data, inner)
        if np.any(a_hi <= a_lo):
            raise ValueError("an observation set contains no innermost interval")
        if np.any(b_lo > a_lo):
            raise ValueError("an observation set lies outside its truncation set")
        # collapse identical patterns
        pat = np.stack([a_lo, a_hi, b_lo], axis=1)
        uniq, inverse = np.unique(pat, axis=0, return_inverse=True)
        self.innermost_ = inner
        self._patterns = uniq
        self._inverse = inverse.ravel()
        self._n_obs = len(data)

    def _pattern_weights(self, weight):
        return np.bincount(self._inverse, weights=weight, minlength=len(self._patterns))

    def _em(self, w, start=None):
        m = len(self.innermost_)
        a_lo, a_hi, b_lo = self._patterns.T
        s = np.full(m, 1.0 / m) if start is None else np.asarray(start, dtype=float).copy()
        live = w > 0
        a_lo, a_hi, b_lo, w = a_lo[live], a_hi[live], b_lo[live], w[live]

        def loglik(s):
            C = np.concatenate([[0.0], np.cumsum(s)])
            with np.errstate(divide="ignore"):
                return float(np.sum(w * (np.log(C[a_hi] - C[a_lo]) - np.log(C[m] - C[b_lo]))))

        def step(s):
            C = np.concatenate([[0.0], np.cumsum(s)])
            cA = w / (C[a_hi] - C[a_lo])
            cB = w / (C[m] - C[b_lo])
            D = np.bincount(a_lo, cA, minlength=m + 1) - np.bincount(a_hi, cA, minlength=m + 1)
            D[0] += cB.sum()
            D -= np.bincount(b_lo, cB, minlength=m + 1)
            return s * np.cumsum(D)[:m] / cB.sum()

        # EM accelerated by squared extrapolation (SQUAREM), falling back to
        # plain EM steps whenever the extrapolation would lower the likelihood
        prev_ll = loglik(s)
        converged = False
        it = 0
        for it in range(1, int(self.max_iter) + 1):
            s1 = step(s)
            r = s1 - s
            if np.max(np.abs(r)) < self.tol:
                s = s1
                converged = True
                break
            s2 = step(s1)
            v = s2 - s1 - r
            nv = np.sqrt(v @ v)
            cand = s2
            if nv > 0:
                alpha = min(-np.sqrt(r @ r) / nv, -1.0)
                ext = s - 2.0 * alpha * r + alpha * alpha * v
                # pull the step length towards plain EM until masses stay nonnegative
                while alpha < -1.0 and np.any(ext < 0):
                    alpha = min((alpha - 1.0) / 2.0, -1.0) if alpha < -1.01 else -1.0
                    ext = s - 2.0 * alpha * r + alpha * alpha * v
                if alpha < -1.0:
                    ext = step(np.maximum(ext, 0.0) / ext.sum())
                    if loglik(ext) >= loglik(s2):
                        cand = ext
            ll = loglik(cand)
            if self.debug and ll < prev_ll - 1e-9 * max(1.0, abs(prev_ll)):
                raise RuntimeError(f"log-likelihood decreased at iteration {it}")
            prev_ll = ll
            s = cand
        return s, loglik(s), it, converged

    def fit(self, data: TurnbullData, y=None):
        """Estimate interval masses from ``data``."""
        self._prepare(data)
        w = self._pattern_weights(data.weight)
        if not np.any(w > 0):
            raise ValueError("all weights are zero")
        self.masses_, self.loglik_, self.n_iter_, self.converged_ = self._em(w)
        return self

    def fit_replicates(self, weight_matrix, warm_start=True):
        """Re-estimate masses under alternative observation weights.

        Parameters
        ----------
        weight_matrix : array of shape (n_obs, K)
        warm_start : bool
            Start each replicate from the fitted masses.

        Returns
        -------
        ndarray of shape (K, m)
        """
        check_is_fitted(self, "masses_")
        W = np.asarray(weight_matrix, dtype=float)
        if W.ndim != 2 or W.shape[0] != self._n_obs:
            raise ValueError("weight matrix must have one row per observation")
        m = len(self.innermost_)
        out = np.empty((W.shape[1], m))
        start = None
        if warm_start:
            start = np.maximum(self.masses_, 1e-12)
            start /= start.sum()
        for k in range(W.shape[1]):
            wk = self._pattern_weights(W[:, k])
            out[k] = self._em(wk, start)[0]
        return out

    def predict_survival(self, ages, interpolate=False):
        """Survival at ``ages`` and a mask of ages where it is identified."""
        check_is_fitted(self, "masses_")
        return survival_from_masses(self.innermost_, self.masses_, ages, interpolate, self.mass_tol)

    def loglik(self, masses=None, weight=None):
        check_is_fitted(self, "masses_")
        m = len(self.innermost_)
        s = self.masses_ if masses is None else np.asarray(masses, dtype=float)
        a_lo, a_hi, b_lo = self._patterns.T
        if weight is None:
            raise ValueError("pass the observation weights")
        w = self._pattern_weights(weight)
        C = np.concatenate([[0.0], np.cumsum(s)])
        live = w > 0
        return float(np.sum(w[live] * (np.log(C[a_hi] - C[a_lo]) - np.log(C[m] - C[b_lo]))[live]))


@dataclass
class PeriodTurnbull:
    """Turnbull estimate for one period, with optional bootstrap band."""

    period: int
    estimator: TurnbullEstimator
    ages: np.ndarray
    surv: np.ndarray
    defined: np.ndarray
    band_lo: Optional[np.ndarray] = None
    band_hi: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    def rates(self) -> dict:
        s, d = self.estimator.predict_survival(np.array([1.0, 12.0, HORIZON]))
        names = ("nmr", "imr", "u5mr")
        return {k: (1.0 - v if ok else np.nan) for k, v, ok in zip(names, s, d)}


def turnbull_by_period(
    records,
    grid: PeriodGrid,
    ages=None,
    plan=None,
    level: float = 0.95,
    tol: float = 1e-8,
    max_iter: int = 10000,
) -> dict:
    """Period-specific Turnbull estimates and percentile bootstrap bands.

    Parameters
    ----------
    records : sequence of ChildRecord or RecordArrays
    grid : PeriodGrid
    ages : array, optional
        Ages at which to report survival; monthly 0..60 by default.
    plan : BootstrapPlan, optional
        Rao-Wu replicates; when given, each replicate is re-estimated and the
        survival samples give percentile bands at ages identified in the full
        sample.  Replicate survival at ages inside an interval is interpolated.

    Returns
    -------
    dict mapping period index to :class:`PeriodTurnbull`
    """
    from .ingestion import expand_for_turnbull

    arr = records if isinstance(records, RecordArrays) else RecordArrays.from_records(records)
    ages = np.arange(0.0, HORIZON + 1.0) if ages is None else np.asarray(ages, dtype=float)
    per = expand_for_turnbull(arr, grid)
    factors = None
    if plan is not None:
        design = SurveyDesign.from_arrays(arr.stratum, arr.cluster)
        if design.strata != plan.design.strata or design.clusters != plan.design.clusters:
            raise ValueError("bootstrap plan was built for a different design")
        factors = plan.child_factors(design.child_cluster)
    out = {}
    alpha = 100.0 * (1.0 - level) / 2.0
    for p, data in per.items():
        if len(data) == 0 or not np.any(data.weight > 0):
            raise ValueError(f"period {p} has no observations")
        est = TurnbullEstimator(tol=tol, max_iter=max_iter).fit(data)
        surv, defined = est.predict_survival(ages)
        res = PeriodTurnbull(p, est, ages, surv, defined)
        if factors is not None:
            W = data.weight[:, None] * factors[data.source]
            masses = est.fit_replicates(W)
            samples, _ = survival_from_masses(est.innermost_, masses, ages, interpolate=True)
            res.samples = samples
            lo, hi = np.percentile(samples, [alpha, 100.0 - alpha], axis=0)
            res.band_lo = np.where(defined, lo, np.nan)
            res.band_hi = np.where(defined, hi, np.nan)
        out[p] = res
    return out
