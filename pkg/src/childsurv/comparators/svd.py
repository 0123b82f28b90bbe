"""Singular-value-decomposition mortality models.

Two routes are provided.

* :func:`svd_lsv_fit` regresses monthly death probabilities within each
  yearly age group on an intercept and left singular vectors (LSVs) of a
  matrix of logit mortality schedules.  The survey-weighted logistic
  regression is solved by iteratively reweighted least squares, and the
  under-five mortality variance follows from the delta method.
* :func:`svd_empirical_predict` turns sex-specific under-five mortality into
  yearly schedules with previously published coefficients, without fitting.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..data import SurveyDesign
from ..likelihood import as_arrays, as_grid
from ..variance import design_variance, sandwich_covariance
from .dischaz import logit_rate_gradient
from .tabulate import tabulate

__all__ = [
    "LSV_AGES",
    "OFFSET",
    "LsvBasis",
    "compute_lsv_basis",
    "load_lsv_basis",
    "read_life_table_matrix",
    "SvdResult",
    "svd_lsv_fit",
    "SvdLsvRegression",
    "ClarkCoefficientSet",
    "load_clark_coefficients",
    "svd_empirical_predict",
    "synthetic_clark_components",
]

LSV_AGES = np.array([12.0, 24.0, 36.0, 48.0, 60.0])
YEAR_EDGES = np.array([0.0, 12.0, 24.0, 36.0, 48.0, 60.0])
OFFSET = 10.0


def _data_path(name):
    return resources.files("childsurv").joinpath("data", name)


@dataclass(frozen=True)
class LsvBasis:
    """Left singular vectors of yearly logit mortality schedules.

    Attributes
    ----------
    ages : ndarray of shape (A,)
        Upper end of each yearly age group, in months.
    u : ndarray of shape (A, m)
    singular_values : ndarray of shape (m,), optional
    v : ndarray of shape (L, m), optional
        Right singular vectors, when computed from a matrix.
    """

    ages: np.ndarray
    u: np.ndarray
    singular_values: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    @property
    def n_components(self) -> int:
        return self.u.shape[1]

    def design(self, n_components: Optional[int] = None) -> np.ndarray:
        """Covariate matrix ``(1, u_1, ..., u_m)`` of shape (A, m + 1)."""
        m = self.n_components if n_components is None else int(n_components)
        if not 0 <= m <= self.n_components:
            raise ValueError(f"n_components must lie in [0, {self.n_components}]")
        return np.column_stack([np.ones(len(self.ages)), self.u[:, :m]])

    def reconstruct(self) -> np.ndarray:
        """``sum_i s_i u_i v_i^T`` on the offset logit scale."""
        if self.singular_values is None or self.v is None:
            raise ValueError("basis was not computed from a matrix")
        return (self.u * self.singular_values) @ self.v.T


def compute_lsv_basis(matrix, ages=LSV_AGES, n_components: int = 4) -> LsvBasis:
    """LSVs of a matrix of yearly death probabilities.

    Each entry is mapped to ``logit(q) - 10`` before the decomposition.  Signs
    are fixed so that the largest-magnitude entry of the first vector is
    negative and that of every other vector is positive.

    Parameters
    ----------
    matrix : array of shape (A, L)
        One life table per column.
    ages : array of shape (A,)
    n_components : int, default 4

    Returns
    -------
    LsvBasis
    """
    Q = np.asarray(matrix, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != len(ages):
        raise ValueError(f"life-table matrix must have {len(ages)} rows")
    if Q.shape[1] < n_components:
        raise ValueError(f"at least {n_components} life tables are required, got {Q.shape[1]}")
    if not np.all((Q > 0) & (Q < 1)):
        raise ValueError("life-table entries must lie strictly between 0 and 1")
    M = logit(Q) - OFFSET
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, s, V = U[:, :n_components], s[:n_components], Vt[:n_components].T
    for i in range(n_components):
        big = U[np.argmax(np.abs(U[:, i])), i]
        want = -1.0 if i == 0 else 1.0
        if np.sign(big) != want:
            U[:, i] *= -1.0
            V[:, i] *= -1.0
    return LsvBasis(np.asarray(ages, dtype=float), U, s, V)


def load_lsv_basis(path=None) -> LsvBasis:
    """Read an ``age_months,u1,...`` file; the bundled table by default."""
    src = _data_path("lsv_basis.csv") if path is None else path
    with open(src, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if header[0] != "age_months":
        raise ValueError("LSV file must start with an age_months column")
    arr = np.array([[float(v) for v in r] for r in body])
    return LsvBasis(arr[:, 0], arr[:, 1:])


def read_life_table_matrix(path):
    """Read a life-table matrix CSV (first column ``age_months``)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return body[:, 0], body[:, 1:]


@dataclass
class SvdResult:
    """LSV regression estimates, one coefficient vector per period.

    Attributes
    ----------
    beta : ndarray of shape (P, m + 1)
    covariance : ndarray of shape (P, m + 1, m + 1)
    eta : ndarray of shape (A, P)
        Monthly death probabilities per yearly group.
    q : ndarray of shape (A, P)
        Yearly probabilities ``1 - (1 - eta)^12``.
    rates : list of dict
    converged : list of bool
    diagnostics : list of str
    """

    beta: np.ndarray
    covariance: np.ndarray
    eta: np.ndarray
    q: np.ndarray
    design: np.ndarray
    rates: list
    converged: list
    diagnostics: list = field(default_factory=list)


def _irls(X, D, E, tol=1e-12, max_iter=200):
    """Newton iterations for the binomial logit model with step halving.

    When a group has no deaths (or only deaths) in a saturated design the
    maximum is at infinity; iterations then stop once the log-likelihood no
    longer changes and ``converged`` is False.
    """
    keep = E > 0
    X, D, E = X[keep], D[keep], E[keep]

    def loglik(b):
        lin = X @ b
        return float(np.sum(D * lin - E * np.logaddexp(0.0, lin)))

    beta = np.zeros(X.shape[1])
    beta[0] = logit(np.clip(D.sum() / E.sum(), 1e-12, 1 - 1e-12))
    ll = loglik(beta)
    for it in range(max_iter):
        mu = expit(X @ beta)
        W = E * mu * (1 - mu)
        step = np.linalg.lstsq((X * W[:, None]).T @ X, X.T @ (D - E * mu), rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            ll_new = loglik(beta + t * step)
            if ll_new >= ll - 1e-13 * abs(ll):
                break
            t /= 2.0
        beta = beta + t * step
        if np.max(np.abs(t * step)) < tol * (1 + np.max(np.abs(beta))):
            return beta, True, it + 1
        if abs(ll_new - ll) <= 1e-15 * abs(ll):
            # a stalled likelihood is convergence unless some fitted
            # probability is running off to 0 or 1
            return beta, bool(np.max(np.abs(X @ beta)) < 30.0), it + 1
        ll = ll_new
    return beta, False, max_iter


def _covariance(scores, hess, weights, design):
    if np.linalg.cond(hess) < 1e12:
        return sandwich_covariance(scores, hess, weights, design)[0]
    infl = -(np.linalg.pinv(hess, rcond=1e-10) @ scores.T).T
    return design_variance(infl, weights, design)


def svd_lsv_fit(records, grid, basis: Optional[LsvBasis] = None, design=None,
                n_components: Optional[int] = None, level: float = 0.95) -> SvdResult:
    """Survey-weighted logistic regression on LSV covariates.

    Within yearly age group ``x`` and period ``p`` the monthly death
    probability satisfies ``logit(eta_xp) = X_x beta_p``, with
    ``X = (1, u_1, ..., u_m)``.  Deaths are binomial counts out of
    person-months.  Yearly probabilities are ``1 - (1 + exp(X beta))^-12``
    and under-five mortality is their complement product.

    Parameters
    ----------
    records : sequence of ChildRecord or RecordArrays
    grid : PeriodGrid or sequence of CMC boundaries
    basis : LsvBasis, optional
        The bundled table when omitted.
    design : SurveyDesign, optional
    n_components : int, optional
        Number of LSVs to use; all by default, 0 for an intercept-only model.
    level : float

    Returns
    -------
    SvdResult

    Raises
    ------
    ValueError
        When the covariate matrix is rank deficient.
    """
    basis = load_lsv_basis() if basis is None else basis
    X = basis.design(n_components)
    if len(basis.ages) != 5 or not np.allclose(basis.ages, LSV_AGES):
        raise ValueError("LSV basis must cover the yearly groups ending at 12, ..., 60 months")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("LSV covariate matrix is singular (collinear columns)")
    arr = as_arrays(records)
    grid = as_grid(grid)
    design = SurveyDesign.from_arrays(arr.stratum, arr.cluster) if design is None else design
    tab = tabulate(arr, grid, YEAR_EDGES)
    D = tab.totals("deaths")
    E = tab.totals("trials")
    z = norm.ppf(0.5 + level / 2.0)
    P, m = grid.n_periods, X.shape[1]
    betas = np.zeros((P, m))
    covs = np.zeros((P, m, m))
    conv, diagnostics, rates = [], [], []
    for p in range(P):
        if np.count_nonzero(E[:, p] > 0) < m:
            raise ValueError(f"period {p}: fewer populated age groups than coefficients")
        beta, ok, _ = _irls(X, D[:, p], E[:, p])
        for j in np.flatnonzero(E[:, p] > 0):
            if D[j, p] <= 0 or D[j, p] >= E[j, p]:
                diagnostics.append(
                    f"period {p}, ages [{YEAR_EDGES[j]:g},{YEAR_EDGES[j + 1]:g}): "
                    f"{'no deaths' if D[j, p] <= 0 else 'deaths reach the person-months'}")
        if not ok:
            diagnostics.append(f"period {p}: coefficients did not converge (estimate at the "
                               "boundary; fitted probabilities numerically 0 or 1)")
        mu = expit(X @ beta)
        W = E[:, p] * mu * (1 - mu)
        hess = -(X * W[:, None]).T @ X
        # score of child i: sum_x X_x (d_ix - mu_x e_ix)
        scores = (tab.deaths[:, :, p] - tab.trials[:, :, p] * mu[None, :]) @ X
        cov = _covariance(scores, hess, tab.weight, design)
        betas[p], covs[p] = beta, cov
        conv.append(ok)
        for name, rows, k in (("nmr", [0], 1.0), ("imr", [0], 12.0), ("u5mr", list(range(5)), 12.0)):
            v, g = logit_rate_gradient(X[rows], beta, k)
            est = float(expit(v))
            se_l = float(np.sqrt(max(g @ cov @ g, 0.0)))
            rates.append({"period": p, "rate": name, "estimate": est,
                          "se": se_l * est * (1 - est),
                          "lo": float(expit(v - z * se_l)), "hi": float(expit(v + z * se_l))})
    eta = expit(X @ betas.T)
    q = -np.expm1(12.0 * np.log1p(-eta))
    return SvdResult(betas, covs, eta, q, X, rates, conv, diagnostics)


class SvdLsvRegression(BaseEstimator):
    """Estimator wrapper around :func:`svd_lsv_fit`.

    Parameters
    ----------
    periods : PeriodGrid or sequence of float
    n_components : int, optional
    basis_path : str, optional
        LSV file; the bundled table when omitted.
    level : float, default 0.95
    """

    def __init__(self, periods=None, n_components=None, basis_path=None, level=0.95):
        self.periods = periods
        self.n_components = n_components
        self.basis_path = basis_path
        self.level = level

    def fit(self, records, y=None, design=None):
        basis = load_lsv_basis(self.basis_path)
        self.result_ = svd_lsv_fit(records, self.periods, basis, design, self.n_components,
                                   self.level)
        self.coef_ = self.result_.beta
        self.covariance_ = self.result_.covariance
        return self

    def predict_survival(self, ages, period: int = 0):
        """Survival with a constant monthly hazard within each yearly group."""
        check_is_fitted(self, "result_")
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        rate = -np.log1p(-self.result_.eta[:, period])
        cum = np.concatenate([[0.0], np.cumsum(rate * 12.0)])
        j = np.clip((ages // 12).astype(int), 0, 4)
        return np.exp(-(cum[j] + rate[j] * (ages - 12.0 * j)))

    def rates(self):
        check_is_fitted(self, "result_")
        return self.result_.rates


# --- empirical pipeline with published coefficients -----------------------

STEP1_TERMS = ("q5", "logit_q5", "logit_q5^2", "logit_q5^3", "intercept")
STEP4_TERMS = ("intercept", "logit_q5", "logit_q5^2")
WEIGHT_TERMS = ("c",) + tuple(f"beta{i}" for i in range(1, 9))
SEXES = ("F", "M")


@dataclass(frozen=True)
class ClarkCoefficientSet:
    """Coefficients of the five-step empirical SVD pipeline.

    Attributes
    ----------
    step1 : dict
        ``step1[sex][term]`` for the adult-mortality cubic.
    step4 : dict
        ``step4[sex][term]`` for the age-0 quadratic.
    weights : dict
        ``weights[sex]`` is an array of shape (9, 4): rows ``c, beta1..beta8``,
        columns components 1..4.
    singular_values : dict
        ``singular_values[sex]`` of shape (4,).
    components : dict
        ``components[sex]`` of shape (5, 4) at ages 0, 12, 24, 36, 48.
    """

    step1: dict
    step4: dict
    weights: dict
    singular_values: dict
    components: dict


def _read_rows(src):
    with open(src, newline="") as fh:
        return [r for r in csv.DictReader(row for row in fh if not row.startswith("#"))]


def load_clark_coefficients(step1=None, step4=None, weights=None, components=None
                            ) -> ClarkCoefficientSet:
    """Load the coefficient bundle; bundled files are used for omitted paths.

    Raises
    ------
    ValueError
        Listing every missing coefficient.
    """
    paths = {
        "step1": step1 or _data_path("clark_step1.csv"),
        "step4": step4 or _data_path("clark_step4.csv"),
        "weights": weights or _data_path("clark_weights.csv"),
        "components": components or _data_path("svd_components_synthetic.csv"),
    }
    missing = []
    polys = {}
    for key, terms in (("step1", STEP1_TERMS), ("step4", STEP4_TERMS)):
        table = {s: {} for s in SEXES}
        for r in _read_rows(paths[key]):
            table.setdefault(r["sex"], {})[r["term"]] = float(r["coefficient"])
        for s in SEXES:
            missing += [f"{key}:{s}:{t}" for t in terms if t not in table[s]]
        polys[key] = table
    wrows = {r["coefficient"]: r for r in _read_rows(paths["weights"])}
    wts = {}
    for s in SEXES:
        mat = np.full((len(WEIGHT_TERMS), 4), np.nan)
        for a, term in enumerate(WEIGHT_TERMS):
            for i in range(4):
                col = f"{s}{i + 1}"
                if term not in wrows or not wrows[term].get(col):
                    missing.append(f"weights:{term}:{col}")
                else:
                    mat[a, i] = float(wrows[term][col])
        wts[s] = mat
    sv, comp = {}, {}
    crows = _read_rows(paths["components"])
    for s in SEXES:
        rows = [r for r in crows if r["sex"] == s]
        svals = [r for r in rows if r["age_months"] == "sv"]
        ages = sorted((r for r in rows if r["age_months"] != "sv"),
                      key=lambda r: float(r["age_months"]))
        if len(svals) != 1 or len(ages) != 5:
            missing.append(f"components:{s}")
            continue
        sv[s] = np.array([float(svals[0][f"c{i}"]) for i in range(1, 5)])
        comp[s] = np.array([[float(r[f"c{i}"]) for i in range(1, 5)] for r in ages])
    if missing:
        raise ValueError("missing coefficients: " + ", ".join(missing))
    return ClarkCoefficientSet(polys["step1"], polys["step4"], wts, sv, comp)


def _step1(c, q5):
    lq = logit(q5)
    return (c["q5"] * q5 + c["logit_q5"] * lq + c["logit_q5^2"] * lq ** 2
            + c["logit_q5^3"] * lq ** 3 + c["intercept"])


def _weights(W, q5, logit_q45):
    lq, la = logit(q5), logit_q45
    q45 = expit(la)
    # the printed form repeats the linear coefficient on the squared term;
    # the remaining unused coefficient (beta4) is applied there instead
    terms = np.array([1.0, q5, lq, lq ** 3, lq ** 2, q45, la ** 2, la ** 3, lq * la])
    return terms @ W


def svd_empirical_predict(q5_f: float, q5_m: float, coeffs: Optional[ClarkCoefficientSet] = None
                          ) -> dict:
    """Yearly schedules by sex from under-five mortality alone.

    Returns
    -------
    dict with keys ``"F"`` and ``"M"``; each maps to an array of
    probabilities for ages 0, 12, 24, 36 and 48 months.
    """
    coeffs = load_clark_coefficients() if coeffs is None else coeffs
    out = {}
    for sex, q5 in (("F", q5_f), ("M", q5_m)):
        if not 0 < q5 < 1:
            raise ValueError(f"under-five mortality for {sex} must lie in (0, 1)")
        la = _step1(coeffs.step1[sex], q5)
        w = _weights(coeffs.weights[sex], q5, la)
        pred = coeffs.components[sex] @ (w * coeffs.singular_values[sex])
        c4 = coeffs.step4[sex]
        lq = logit(q5)
        # the age-0 formula is on the plain logit scale; move it to the offset scale
        pred[0] = c4["intercept"] + c4["logit_q5"] * lq + c4["logit_q5^2"] * lq ** 2 - OFFSET
        out[sex] = expit(pred + OFFSET)
    return out


def synthetic_clark_components(levels=None):
    """Non-official stand-in for the sex-specific SVD components.

    The published pipeline uses singular vectors of all-age schedules that are
    not reproduced here.  The stand-in is the least-squares choice of the
    products ``s_i u_i`` for which the pipeline reproduces a relational-logit
    family of child schedules over a range of under-five mortality levels.
    The resulting vectors are normalized but not orthogonal.

    Returns
    -------
    dict mapping sex to ``(singular_values, components)``, shapes (4,), (5, 4).
    """
    from scipy.optimize import brentq

    from ..hazards import LogNormal

    levels = np.linspace(0.01, 0.25, 49) if levels is None else np.asarray(levels, float)
    surv = np.exp(-LogNormal().cumhaz0(np.array([16.2, 8.62]), YEAR_EDGES))
    std = logit(1.0 - surv[1:] / surv[:-1])

    def u5(shift):
        return 1.0 - np.prod(1.0 - expit(std + shift))

    poly = {}
    for key in ("step1", "step4"):
        poly[key] = {s: {} for s in SEXES}
        for r in _read_rows(_data_path(f"clark_{key}.csv")):
            poly[key][r["sex"]][r["term"]] = float(r["coefficient"])
    wrows = {r["coefficient"]: r for r in _read_rows(_data_path("clark_weights.csv"))}
    out = {}
    for s in SEXES:
        W = np.array([[float(wrows[t][f"{s}{i}"]) for i in range(1, 5)] for t in WEIGHT_TERMS])
        ws, targets = [], []
        for q5 in levels:
            shift = brentq(lambda h: u5(h) - q5, -20.0, 20.0)
            ws.append(_weights(W, q5, _step1(poly["step1"][s], q5)))
            targets.append(std + shift - OFFSET)
        G, *_ = np.linalg.lstsq(np.array(ws), np.array(targets), rcond=None)
        G = G.T
        sv = np.linalg.norm(G, axis=0)
        out[s] = (sv, G / sv)
    return out
