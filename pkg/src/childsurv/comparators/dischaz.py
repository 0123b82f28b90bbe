"""Discrete hazards: binomial age-group by period probabilities.

Children are tabulated into (age group, period) cells in which every
person-month lived is a binomial trial (a death month counts whole), and each cell gets its own logit
intercept for the monthly death probability ``m``.  For this saturated model
the pseudo-maximum-likelihood estimate is the weighted death ratio, so no
iterative fitting is needed.  The group probability is
``q_j = 1 - (1 - m_j)^{n_j}`` and under-five mortality is
``1 - prod_j (1 - q_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..data import HORIZON, SurveyDesign
from ..likelihood import as_arrays, as_grid
from ..variance import design_variance
from .tabulate import tabulate

__all__ = [
    "DiscreteHazardSpec",
    "DEFAULT_GROUPS",
    "HEAPING_GROUPS",
    "u5mr_from_q",
    "logit_rate_gradient",
    "DischazResult",
    "dischaz_fit",
    "DiscreteHazards",
]


@dataclass(frozen=True)
class DiscreteHazardSpec:
    """Age groups ``[x_j, x_j + n_j)`` partitioning ``[0, 60)``."""

    starts: tuple = (0.0, 1.0, 12.0, 24.0, 36.0, 48.0)
    widths: tuple = (1.0, 11.0, 12.0, 12.0, 12.0, 12.0)

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=float)
        n = np.asarray(self.widths, dtype=float)
        if s.shape != n.shape or s.size == 0:
            raise ValueError("starts and widths must have the same nonzero length")
        if np.any(n <= 0):
            raise ValueError("age group widths must be positive")
        if s[0] != 0 or not np.allclose(s[1:], (s + n)[:-1]) or not np.isclose(s[-1] + n[-1], HORIZON):
            raise ValueError("age groups must partition [0, 60)")

    @classmethod
    def from_edges(cls, edges) -> "DiscreteHazardSpec":
        e = np.asarray(edges, dtype=float)
        return cls(tuple(e[:-1]), tuple(np.diff(e)))

    @property
    def edges(self) -> np.ndarray:
        return np.append(np.asarray(self.starts, float), self.starts[-1] + self.widths[-1])

    @property
    def labels(self):
        e = self.edges
        return [f"[{e[j]:g},{e[j + 1]:g})" for j in range(len(e) - 1)]


DEFAULT_GROUPS = DiscreteHazardSpec()
HEAPING_GROUPS = DiscreteHazardSpec.from_edges([0, 1, 9, 21, 24, 36, 48, 60])


def u5mr_from_q(q) -> float:
    """Probability of dying before the end of the last group from group-wise probabilities."""
    q = np.asarray(q, dtype=float)
    return float(-np.expm1(np.sum(np.log1p(-q))))


def logit_rate_gradient(X, beta, k=1.0):
    """Value and gradient of ``logit(1 - prod_i (1 + exp(X_i beta))^-k_i)``.

    With ``gamma = prod_i (1 + exp(X_i beta))^k_i`` the value is
    ``log(gamma - 1)`` and the gradient is
    ``gamma / (gamma - 1) * sum_i k_i X_i expit(X_i beta)``.
    ``k`` may be a scalar or one value per row of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lin = X @ np.asarray(beta, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=float), lin.shape)
    log_gamma = np.sum(k * np.logaddexp(0.0, lin))
    value = log_gamma + np.log(-np.expm1(-log_gamma))
    ratio = 1.0 / (-np.expm1(-log_gamma))
    grad = ratio * (X * (k * expit(lin))[:, None]).sum(axis=0)
    return float(value), grad


@dataclass
class DischazResult:
    """Discrete hazards estimates.

    Attributes
    ----------
    spec : DiscreteHazardSpec
    q : ndarray of shape (J, P)
        Group-by-period death probabilities.
    monthly : ndarray of shape (J, P)
        Monthly death probabilities.
    beta : ndarray of shape (J, P)
        Logit of ``monthly`` (``-inf`` for cells without deaths).
    covariance : ndarray of shape (J * P, J * P)
        Design-based covariance of ``beta`` flattened period-major
        (``index = p * J + j``).  Rows of cells without deaths are zero.
    deaths, exposure, at_risk : ndarray of shape (J, P)
        Weighted deaths, binomial trials (person-months plus half a month
        per death) and children at risk.
    rates : list of dict
    diagnostics : list of str
    """

    spec: DiscreteHazardSpec
    q: np.ndarray
    monthly: np.ndarray
    beta: np.ndarray
    covariance: np.ndarray
    deaths: np.ndarray
    exposure: np.ndarray
    at_risk: np.ndarray
    rates: list
    diagnostics: list = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        """Standard errors of ``beta``, shape (J, P)."""
        J, P = self.q.shape
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None)).reshape(P, J).T

    @property
    def q_se(self) -> np.ndarray:
        """Delta-method standard errors of ``q``, shape (J, P)."""
        n = np.diff(self.spec.edges)[:, None]
        return n * self.monthly * (1.0 - self.monthly) ** n * self.se


def _rate_rows(spec, q, beta, cov, level, estimable):
    z = norm.ppf(0.5 + level / 2.0)
    edges = spec.edges
    J, P = q.shape
    out = []
    for p in range(P):
        for name, age in (("nmr", 1.0), ("imr", 12.0), ("u5mr", HORIZON)):
            hit = np.isclose(edges, age)
            if not hit.any():
                continue
            m = int(np.flatnonzero(hit)[0])
            est = u5mr_from_q(q[:m, p])
            row = {"period": p, "rate": name, "estimate": est, "se": np.nan,
                   "lo": np.nan, "hi": np.nan}
            if 0 < est < 1 and estimable[:m, p].all():
                v, g = logit_rate_gradient(np.eye(m), beta[:m, p], np.diff(edges)[:m])
                idx = p * J + np.arange(m)
                se_l = float(np.sqrt(max(g @ cov[np.ix_(idx, idx)] @ g, 0.0)))
                row["se"] = se_l * est * (1.0 - est)
                row["lo"] = float(expit(v - z * se_l))
                row["hi"] = float(expit(v + z * se_l))
            out.append(row)
    return out


def dischaz_fit(records, grid, spec: DiscreteHazardSpec = DEFAULT_GROUPS, design=None,
                level: float = 0.95) -> DischazResult:
    """Fit the saturated age-group by period logistic model.

    Parameters
    ----------
    records : sequence of ChildRecord or RecordArrays
    grid : PeriodGrid or sequence of CMC boundaries
    spec : DiscreteHazardSpec
    design : SurveyDesign, optional
        Built from the records when omitted.
    level : float
        Confidence level of rate intervals.

    Returns
    -------
    DischazResult
    """
    arr = as_arrays(records)
    grid = as_grid(grid)
    design = SurveyDesign.from_arrays(arr.stratum, arr.cluster) if design is None else design
    tab = tabulate(arr, grid, spec.edges)
    J, P = tab.n_groups, grid.n_periods
    Y = tab.totals("deaths")
    N = tab.totals("trials")
    diagnostics = []
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(N > 0, Y / N, np.nan)
        q = -np.expm1(np.diff(spec.edges)[:, None] * np.log1p(-m))
    empty = N <= 0
    zero = ~empty & (Y <= 0)
    full = ~empty & (Y >= N)
    for j, p in zip(*np.nonzero(empty)):
        diagnostics.append(f"cell {spec.labels[j]} period {p}: no exposure")
    for j, p in zip(*np.nonzero(zero)):
        diagnostics.append(f"cell {spec.labels[j]} period {p}: exact-zero hazard (no deaths)")
    for j, p in zip(*np.nonzero(full)):
        diagnostics.append(f"cell {spec.labels[j]} period {p}: deaths reach the person-months at risk")
    estimable = ~(zero | full | empty)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = logit(m)

    # per-child scores of each cell intercept, scaled by the inverse information
    infl = np.zeros((len(arr), J * P))
    for p in range(P):
        for j in range(J):
            if not estimable[j, p]:
                continue
            qq = m[j, p]
            resid = tab.deaths[:, j, p] - qq * tab.trials[:, j, p]
            infl[:, p * J + j] = resid / (qq * (1.0 - qq) * N[j, p])
    cov = design_variance(infl, tab.weight, design)
    rates = _rate_rows(spec, q, beta, cov, level, estimable)
    return DischazResult(spec, q, m, beta, cov, Y, N, tab.totals("at_risk"), rates, diagnostics)


class DiscreteHazards(BaseEstimator):
    """Estimator wrapper around :func:`dischaz_fit`.

    Parameters
    ----------
    periods : PeriodGrid or sequence of float
    edges : sequence of float, optional
        Age-group boundaries; the six standard groups when omitted.
    level : float, default 0.95
    """

    def __init__(self, periods=None, edges=None, level=0.95):
        self.periods = periods
        self.edges = edges
        self.level = level

    def fit(self, records, y=None, design=None):
        spec = DEFAULT_GROUPS if self.edges is None else DiscreteHazardSpec.from_edges(self.edges)
        self.result_ = dischaz_fit(records, self.periods, spec, design, self.level)
        self.q_ = self.result_.q
        self.coef_ = self.result_.beta
        self.covariance_ = self.result_.covariance
        return self

    def predict_survival(self, ages, period: int = 0):
        """Step-wise constant-hazard survival implied by the group probabilities."""
        check_is_fitted(self, "result_")
        res = self.result_
        edges = res.spec.edges
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        rate = -np.log1p(-res.q[:, period]) / np.diff(edges)
        cum = np.concatenate([[0.0], np.cumsum(rate * np.diff(edges))])
        j = np.clip(np.searchsorted(edges, ages, side="right") - 1, 0, len(rate) - 1)
        return np.exp(-(cum[j] + rate[j] * (ages - edges[j])))

    def rates(self):
        check_is_fitted(self, "result_")
        return self.result_.rates
