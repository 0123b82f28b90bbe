"""Survey-weighted parametric pseudo-likelihood with calendar period effects.

Every child contributes the log probability of its observed outcome using
the period cumulative hazard ``H_i(x)`` built from the age windows it spends
in each period:

* right censored at ``t``: ``-H_i(t)``;
* exact death at ``t``: ``-H_i(t) + log h_p(t)``, with ``p`` the period in
  force at the death;
* death in ``(t0, t1]``: ``log(exp(-H_i(t0)) - exp(-H_i(t1)))``.

Contributions are multiplied by the survey weights and summed.  Gradients are
analytic; the Hessian is a central difference of the analytic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import HORIZON, PeriodGrid, RecordArrays, SurveyDesign
from .hazards import HazardFamily, ParamVector, get_family, period_windows
from .ingestion import restrict_to_grid
from .variance import delta_method, sandwich_covariance

__all__ = [
    "PseudoLikelihood",
    "FitResult",
    "fit_pseudo_mle",
    "ParametricSurvival",
    "as_grid",
    "minimize_box_bfgs",
]


def as_grid(periods) -> PeriodGrid:
    """Accept a :class:`PeriodGrid` or a sequence of CMC boundaries."""
    if isinstance(periods, PeriodGrid):
        return periods
    if periods is None:
        raise ValueError("a period grid is required")
    return PeriodGrid(tuple(periods))


def as_arrays(records) -> RecordArrays:
    if isinstance(records, RecordArrays):
        return records
    records = list(records)
    if not records:
        raise ValueError("no records")
    return RecordArrays.from_records(records)


class PseudoLikelihood:
    """Weighted log pseudo-likelihood of records on a period grid.

    Parameters
    ----------
    records : RecordArrays or sequence of ChildRecord
    grid : PeriodGrid
    family : HazardFamily

    Notes
    -----
    Records are first restricted to the grid (see
    :func:`childsurv.ingestion.restrict_to_grid`); ``n_dropped`` counts the
    records that carry no information about it.  Parameters are passed as a
    flat unconstrained vector of length ``n_periods * n_params``.
    """

    def __init__(self, records, grid: PeriodGrid, family: HazardFamily):
        self.grid = grid
        self.family = family
        restricted = restrict_to_grid(as_arrays(records), grid)
        self.records = restricted.records
        self.n_dropped = restricted.n_dropped
        if len(self.records) == 0:
            raise ValueError("no record overlaps the period grid")
        r = self.records
        self.weight = r.weight
        self.kind = r.kind
        self.is_int = r.kind == 2
        self.is_exact = r.kind == 1
        self.lo0, self.hi0 = period_windows(r.birth, grid, r.t0)
        self.lo1, self.hi1 = period_windows(r.birth[self.is_int], grid, r.t1[self.is_int])
        death_period = grid.period_of(r.birth + r.t0)
        self.exact_idx = np.nonzero(self.is_exact)[0]
        self.exact_period = death_period[self.exact_idx]
        if np.any(self.exact_period < 0):
            raise ValueError("an exact death falls outside the period grid")
        self.int_idx = np.nonzero(self.is_int)[0]
        self.n_periods = grid.n_periods
        self.dim = grid.n_periods * family.n_params

    @property
    def n(self) -> int:
        return len(self.weight)

    # --------------------------------------------------------------------
    def _segments(self, theta, lo, hi, grad):
        n = lo.shape[0]
        k = self.family.n_params
        H = np.zeros(n)
        G = np.zeros((n, self.n_periods, k)) if grad else None
        for p in range(self.n_periods):
            act = hi[:, p] > lo[:, p]
            if not act.any():
                continue
            idx = np.nonzero(act)[0]
            tp = theta[p]
            out = self.family.cumhaz0(tp, hi[idx, p], grad=grad)
            if grad:
                v, g = out
                G[idx, p, :] = g
            else:
                v = out
            H[idx] += v
            nz = lo[idx, p] > 0
            if nz.any():
                j = idx[nz]
                out = self.family.cumhaz0(tp, lo[j, p], grad=grad)
                if grad:
                    v, g = out
                    G[j, p, :] -= g
                else:
                    v = out
                H[j] -= v
        return H, G

    def evaluate(self, eta, grad=True, per_record=False, weight=None):
        """Log pseudo-likelihood and its gradient on the unconstrained scale.

        Parameters
        ----------
        eta : array of shape (dim,)
        grad : bool
        per_record : bool
            Also return the per-record (unweighted) terms and scores.
        weight : array, optional
            Replacement weights.

        Returns
        -------
        ll : float
        g : ndarray of shape (dim,) or None
        terms, scores : only with ``per_record``
        """
        fam = self.family
        P, k = self.n_periods, fam.n_params
        eta = np.asarray(eta, dtype=float).reshape(P, k)
        theta = fam.to_natural(eta)
        if not np.all(np.isfinite(theta)):
            return (-np.inf, None) if not per_record else (-np.inf, None, None, None)
        w = self.weight if weight is None else np.asarray(weight, dtype=float)
        with np.errstate(all="ignore"):
            H0, G0 = self._segments(theta, self.lo0, self.hi0, grad)
            terms = -H0
            scores = -G0 if grad else None
            # exact deaths
            if self.exact_idx.size:
                t = self.records.t0[self.exact_idx]
                lh = np.empty(t.size)
                gl = np.zeros((t.size, k)) if grad else None
                for p in np.unique(self.exact_period):
                    m = self.exact_period == p
                    out = fam.loghaz(theta[p], t[m], grad=grad)
                    if grad:
                        lh[m], gl[m] = out
                    else:
                        lh[m] = out
                terms[self.exact_idx] += lh
                if grad:
                    scores[self.exact_idx, self.exact_period, :] += gl
            # interval deaths
            if self.int_idx.size:
                H1, G1 = self._segments(theta, self.lo1, self.hi1, grad)
                D = H1 - H0[self.int_idx]
                terms[self.int_idx] += np.where(
                    D > 0, np.log(-np.expm1(-D)), -np.inf
                )
                if grad:
                    dD = G1 - G0[self.int_idx]
                    scores[self.int_idx] += dD / np.expm1(D)[:, None, None]
        ll = float(np.dot(w, terms))
        if not np.isfinite(ll):
            return (-np.inf, None) if not per_record else (-np.inf, None, terms, None)
        g = None
        if grad:
            dn = fam.dnatural(eta)
            scores = (scores * dn[None, :, :]).reshape(self.n, P * k)
            if not np.all(np.isfinite(scores)):
                return (-np.inf, None) if not per_record else (-np.inf, None, terms, None)
            g = w @ scores
        if per_record:
            return ll, g, terms, scores
        return ll, g

    def loglik(self, eta, weight=None) -> float:
        return self.evaluate(eta, grad=False, weight=weight)[0]

    def gradient(self, eta, weight=None) -> np.ndarray:
        return self.evaluate(eta, grad=True, weight=weight)[1]

    def hessian(self, eta, step=1e-5, weight=None) -> np.ndarray:
        """Central difference of the analytic gradient, symmetrized."""
        eta = np.asarray(eta, dtype=float)
        d = eta.size
        Hm = np.zeros((d, d))
        for j in range(d):
            h = step * (1.0 + abs(eta[j]))
            e = np.zeros(d)
            e[j] = h
            gp = self.gradient(eta + e, weight)
            gm = self.gradient(eta - e, weight)
            if gp is None or gm is None:
                raise FloatingPointError("non-finite gradient while forming the Hessian")
            Hm[:, j] = (gp - gm) / (2.0 * h)
        return 0.5 * (Hm + Hm.T)

    # --------------------------------------------------------------------
    def occurrence_exposure(self, weight=None):
        """Weighted deaths and exposure per period (interval deaths at midpoints)."""
        r = self.records
        w = self.weight if weight is None else weight
        end = np.where(r.kind == 2, 0.5 * (r.t0 + r.t1), r.t0)
        lo, hi = period_windows(r.birth, self.grid, end)
        exposure = w @ (hi - lo)
        deaths = np.zeros(self.n_periods)
        dp = self.grid.period_of(r.birth + end)
        m = (r.kind != 0) & (dp >= 0)
        np.add.at(deaths, dp[m], w[m])
        return deaths, exposure

    def initial_eta(self, weight=None) -> np.ndarray:
        deaths, exposure = self.occurrence_exposure(weight)
        total = deaths.sum() / max(exposure.sum(), 1e-300)
        rates = np.where(deaths > 0, deaths / np.maximum(exposure, 1e-300), 1e-3 * total)
        rates = np.where(rates > 0, rates, 1e-6)
        nat = np.array([self.family.init_from_rate(r) for r in rates])
        eta = self.family.to_unconstrained(nat)
        lo, hi = self.bounds()
        return np.clip(eta.ravel(), lo, hi)

    def bounds(self):
        b = np.array(self.family.bounds * self.n_periods, dtype=float)
        return b[:, 0], b[:, 1]


def minimize_box_bfgs(fun, x0, lower, upper, gtol=1e-6, ftol=1e-10, max_iter=500,
                      c1=1e-4, max_backtrack=60):
    """Quasi-Newton minimisation with box constraints and backtracking.

    ``fun`` returns ``(f, g)``; non-finite values reject a trial step.  A
    coordinate on a bound whose gradient points outward is held fixed.
    Converges when the projected gradient sup-norm falls below ``gtol`` or
    the relative change of ``f`` below ``ftol``.

    Returns
    -------
    x, f, g, n_iter, converged, active
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    d = x.size
    Hinv = np.eye(d)
    converged = False
    it = 0

    def active_set(x, g):
        return ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))

    for it in range(1, max_iter + 1):
        act = active_set(x, g)
        pg = np.where(act, 0.0, g)
        if np.max(np.abs(pg)) < gtol:
            converged = True
            break
        free = ~act
        direction = np.zeros(d)
        direction[free] = -Hinv[np.ix_(free, free)] @ g[free]
        if direction @ g >= 0:
            Hinv = np.eye(d)
            direction = -pg
        step = 1.0
        accepted = False
        for _ in range(max_backtrack):
            xt = np.clip(x + step * direction, lower, upper)
            ft, gt = fun(xt)
            if np.isfinite(ft) and gt is not None and ft <= f + c1 * g @ (xt - x):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if not np.allclose(Hinv, np.eye(d)):
                Hinv = np.eye(d)
                continue
            break
        s = xt - x
        y = gt - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            V = np.eye(d) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        rel = abs(f - ft) / max(abs(f), abs(ft), 1.0)
        x, f, g = xt, ft, gt
        if rel < ftol:
            converged = True
            break
    return x, f, g, it, converged, active_set(x, g)


@dataclass
class FitResult:
    """Outcome of a pseudo-maximum-likelihood fit.

    Attributes
    ----------
    params : ParamVector
        Estimates on the unconstrained scale.
    loglik : float
        Weighted log pseudo-likelihood at the estimate.
    converged : bool
    iterations : int
    gradient_norm : float
        Sup-norm of the score over free coordinates, divided by the total weight.
    hessian : ndarray
        Hessian of the weighted log pseudo-likelihood.
    at_bound : ndarray of bool
        Coordinates held at a bound of the search region.
    covariance : ndarray or None
    influence : ndarray or None
        Per-record influence values.
    diagnostics : list of str
    n_dropped : int
    """

    params: ParamVector
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    hessian: np.ndarray
    at_bound: np.ndarray
    covariance: Optional[np.ndarray] = None
    influence: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    diagnostics: list = field(default_factory=list)
    n_dropped: int = 0

    @property
    def theta(self) -> np.ndarray:
        return self.params.flat

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _optimize(lik, x0, w, total, max_iter, gtol, ftol, hessian_step):
    lower, upper = lik.bounds()

    def objective(x):
        ll, g = lik.evaluate(x, weight=w)
        if not np.isfinite(ll) or g is None:
            return np.inf, None
        return -ll / total, -g / total

    x, f, g, n_iter, converged, active = minimize_box_bfgs(
        objective, x0, lower, upper, gtol=gtol, ftol=ftol, max_iter=max_iter)
    free = ~active
    H = lik.hessian(x, hessian_step, weight=w)
    # Newton refinement on free coordinates
    for _ in range(8):
        if not free.any():
            break
        ll, gr = lik.evaluate(x, weight=w)
        try:
            stepf = -np.linalg.solve(H[np.ix_(free, free)], gr[free])
        except np.linalg.LinAlgError:
            break
        xt = x.copy()
        xt[free] = np.clip(x[free] + stepf, lower[free], upper[free])
        llt = lik.loglik(xt, weight=w)
        if not np.isfinite(llt) or llt < ll - 1e-12 * max(1.0, abs(ll)):
            break
        x = xt
        if np.max(np.abs(stepf)) < 1e-11 * (1.0 + np.max(np.abs(x))):
            break
    return x, converged, n_iter, lik.loglik(x, weight=w)


def _extra_starts(lik, w, max_iter, gtol, ftol):
    """Additional starting points for families prone to local optima."""
    from .hazards import GeneralizedGamma, LogNormal

    if not isinstance(lik.family, GeneralizedGamma):
        return []
    # the log-normal is the Q -> 0 limit, so its fit is a natural start
    sub = PseudoLikelihood(lik.records, lik.grid, LogNormal())
    x0 = sub.initial_eta(w)
    x, *_ = _optimize(sub, x0, w, float(w.sum()), max_iter, gtol, ftol, 1e-5)
    eta = np.column_stack([x.reshape(-1, 2), np.full(lik.n_periods, 0.05)])
    lower, upper = lik.bounds()
    return [np.clip(eta.ravel(), lower, upper)]


def fit_pseudo_mle(records, grid, family="lognormal", init=None, weight=None,
                   max_iter=500, gtol=1e-6, ftol=1e-10, variance="design",
                   hessian_step=1e-5, likelihood: Optional[PseudoLikelihood] = None) -> FitResult:
    """Maximise the weighted log pseudo-likelihood.

    Parameters
    ----------
    records : sequence of ChildRecord or RecordArrays
    grid : PeriodGrid or sequence of CMC boundaries
    family : str or HazardFamily
    init : array of natural parameters, shape (P, k), optional
        Defaults to constant hazards from weighted occurrence/exposure rates.
    weight : array, optional
        Replacement weights for the restricted records of ``likelihood``.
    variance : {"design", "model", None}
        Linearization variance under the survey design, inverse observed
        information, or none.

    Returns
    -------
    FitResult
    """
    grid = as_grid(grid)
    family = get_family(family)
    lik = likelihood if likelihood is not None else PseudoLikelihood(records, grid, family)
    w = lik.weight if weight is None else np.asarray(weight, dtype=float)
    total = float(w.sum())
    if not total > 0:
        raise ValueError("total weight must be positive")
    lower, upper = lik.bounds()
    starts = []
    if init is None:
        starts.append(lik.initial_eta(w))
        starts.extend(_extra_starts(lik, w, max_iter, gtol, ftol))
    else:
        starts.append(np.clip(family.to_unconstrained(np.atleast_2d(init)).ravel(), lower, upper))
    best = None
    for x0 in starts:
        run = _optimize(lik, x0, w, total, max_iter, gtol, ftol, hessian_step)
        if best is None or run[3] > best[3]:
            best = run
    x, converged, n_iter, _ = best
    diagnostics = []
    ll, gr, terms, scores = lik.evaluate(x, per_record=True, weight=w)
    active = ((x <= lower) & (gr < 0)) | ((x >= upper) & (gr > 0))
    free = ~active
    H = lik.hessian(x, hessian_step, weight=w)
    gnorm = float(np.max(np.abs(gr[free])) / total) if free.any() else 0.0
    if not converged:
        diagnostics.append(f"optimizer stopped after {n_iter} iterations without converging")
    deaths, _ = lik.occurrence_exposure(w)
    for p in np.nonzero(deaths <= 0)[0]:
        diagnostics.append(
            f"period {p}: no events; hazard parameters at lower boundary of search region")
    if active.any():
        names = [f"{family.param_names[j % family.n_params]}[{j // family.n_params}]"
                 for j in np.nonzero(active)[0]]
        diagnostics.append("parameters held at a bound: " + ", ".join(names))
    cov = infl = None
    if variance == "design":
        design = SurveyDesign.from_arrays(lik.records.stratum, lik.records.cluster)
        cov, infl = sandwich_covariance(scores, H, w, design, free)
    elif variance == "model":
        cov = np.zeros_like(H)
        if free.any():
            cov[np.ix_(free, free)] = np.linalg.inv(-H[np.ix_(free, free)])
    elif variance is not None:
        raise ValueError("variance must be 'design', 'model' or None")
    return FitResult(
        params=ParamVector.from_flat(family, x, grid.n_periods),
        loglik=float(ll),
        converged=bool(converged),
        iterations=int(n_iter),
        gradient_norm=gnorm,
        hessian=H,
        at_bound=active,
        covariance=cov,
        influence=infl,
        scores=scores,
        diagnostics=diagnostics,
        n_dropped=lik.n_dropped,
    )


def _logit(p):
    return np.log(p) - np.log1p(-p)


class ParametricSurvival(BaseEstimator):
    """Parametric survival with period-specific parameters fitted by weighted pseudo-likelihood.

    Parameters
    ----------
    family : str, default "lognormal"
        One of ``exponential``, ``pwexp``, ``weibull``, ``gengamma``,
        ``lognormal``, ``gompertz`` or ``etsp``.
    periods : PeriodGrid or sequence of float
        Calendar boundaries in CMC units.
    cutpoints : sequence of float, optional
        Age cutpoints of the piecewise exponential family.
    init : array, optional
        Starting natural parameters of shape (n_periods, n_params).
    max_iter, gtol, ftol : optimiser controls.
    variance : {"design", "model", None}, default "design"
    level : float, default 0.95
        Confidence level of reported intervals.

    Attributes
    ----------
    result_ : FitResult
    params_ : ParamVector
    coef_ : ndarray
        Flat unconstrained estimate.
    natural_params_ : ndarray of shape (n_periods, n_params)
    covariance_ : ndarray
    loglik_, converged_, n_iter_ : fit summaries.
    """

    def __init__(self, family="lognormal", periods=None, cutpoints=None, init=None,
                 max_iter=500, gtol=1e-6, ftol=1e-10, variance="design", level=0.95):
        self.family = family
        self.periods = periods
        self.cutpoints = cutpoints
        self.init = init
        self.max_iter = max_iter
        self.gtol = gtol
        self.ftol = ftol
        self.variance = variance
        self.level = level

    def _family(self) -> HazardFamily:
        if isinstance(self.family, HazardFamily):
            return self.family
        if str(self.family).lower() == "pwexp" and self.cutpoints is not None:
            return get_family("pwexp", cutpoints=self.cutpoints)
        return get_family(self.family)

    def fit(self, records, y=None, sample_weight=None):
        """Fit to child records.

        ``sample_weight`` replaces the record weights when given.
        """
        grid = as_grid(self.periods)
        fam = self._family()
        arr = as_arrays(records)
        if sample_weight is not None:
            arr = arr.with_weights(sample_weight)
        lik = PseudoLikelihood(arr, grid, fam)
        res = fit_pseudo_mle(arr, grid, fam, init=self.init, max_iter=self.max_iter,
                             gtol=self.gtol, ftol=self.ftol, variance=self.variance,
                             likelihood=lik)
        self.grid_ = grid
        self.family_ = fam
        self.likelihood_ = lik
        self.result_ = res
        self.params_ = res.params
        self.coef_ = res.params.flat
        self.natural_params_ = res.params.natural
        self.covariance_ = res.covariance
        self.loglik_ = res.loglik
        self.converged_ = res.converged
        self.n_iter_ = res.iterations
        return self

    def score(self, records, y=None):
        """Mean weighted log pseudo-likelihood of ``records`` at the estimate."""
        check_is_fitted(self, "result_")
        lik = PseudoLikelihood(as_arrays(records), self.grid_, self.family_)
        return lik.loglik(self.coef_) / lik.weight.sum()

    def _curve(self, eta_flat, period, ages):
        k = self.family_.n_params
        eta = np.asarray(eta_flat).reshape(self.grid_.n_periods, k)[period]
        theta = self.family_.to_natural(eta)
        return np.exp(-self.family_.cumhaz0(theta, np.asarray(ages, dtype=float)))

    def predict_survival(self, ages, period: Optional[int] = None):
        """Synthetic-period survival: a child exposed to one period's hazard throughout.

        Returns an array of shape (n_periods, n_ages), or (n_ages,) when
        ``period`` is given.
        """
        check_is_fitted(self, "result_")
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        if np.any(ages < 0):
            raise ValueError("ages must be nonnegative")
        if period is not None:
            return self._curve(self.coef_, period, ages)
        return np.vstack([self._curve(self.coef_, p, ages) for p in range(self.grid_.n_periods)])

    def survival_band(self, ages, period: int):
        """Pointwise interval for synthetic-period survival on the logit scale."""
        from scipy.stats import norm

        check_is_fitted(self, "result_")
        z = norm.ppf(0.5 + self.level / 2.0)
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        est = np.empty(ages.size)
        lo = np.full(ages.size, np.nan)
        hi = np.full(ages.size, np.nan)
        for j, x in enumerate(ages):
            s = self._curve(self.coef_, period, [x])[0]
            est[j] = s
            if self.covariance_ is None or x == 0 or not 0 < s < 1:
                continue
            f = lambda th: _logit(self._curve(th, period, [x])[0])
            v, se = delta_method(f, self.coef_, self.covariance_)
            lo[j] = 1.0 / (1.0 + np.exp(-(v - z * se)))
            hi[j] = 1.0 / (1.0 + np.exp(-(v + z * se)))
        return est, lo, hi

    def rates(self):
        """Neonatal, infant and under-five mortality per period with delta-method intervals.

        Returns
        -------
        list of dict with keys ``period``, ``rate``, ``estimate``, ``se``,
        ``lo`` and ``hi``.  Intervals are formed on the logit scale.
        """
        from scipy.stats import norm

        check_is_fitted(self, "result_")
        z = norm.ppf(0.5 + self.level / 2.0)
        out = []
        for p in range(self.grid_.n_periods):
            for name, age in (("nmr", 1.0), ("imr", 12.0), ("u5mr", HORIZON)):
                q = 1.0 - self._curve(self.coef_, p, [age])[0]
                row = {"period": p, "rate": name, "estimate": q, "se": np.nan,
                       "lo": np.nan, "hi": np.nan}
                if self.covariance_ is not None and 0 < q < 1:
                    f = lambda th: _logit(1.0 - self._curve(th, p, [age])[0])
                    v, se_l = delta_method(f, self.coef_, self.covariance_)
                    row["se"] = se_l * q * (1.0 - q)
                    row["lo"] = 1.0 / (1.0 + np.exp(-(v - z * se_l)))
                    row["hi"] = 1.0 / (1.0 + np.exp(-(v + z * se_l)))
                out.append(row)
        return out
