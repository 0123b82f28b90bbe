"""Agreement between a parametric survival curve and the Turnbull estimate.

For each age the parametric curve is sampled from the asymptotic normal
distribution of its parameters and the Turnbull curve from bootstrap
replicates.  Samples are paired by index, and the metric is the percentage
of ages at which the central 95% interval of the paired differences
contains zero.  This is a descriptive agreement summary, not a formal
hypothesis test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import HORIZON, RecordArrays, SurveyDesign
from .likelihood import FitResult, as_grid, fit_pseudo_mle
from .turnbull import turnbull_by_period
from .variance import make_bootstrap_plan

__all__ = [
    "CAVEAT",
    "sample_parametric_curves",
    "ComparisonReport",
    "compare",
    "validation_ages",
    "validate_fit",
]

CAVEAT = ("descriptive agreement summary over ages, not a formal hypothesis test; "
          "differences are paired by sample index")


def validation_ages(defined=None, ages=None):
    """Integer months 1..59, optionally restricted to ages where Turnbull is defined."""
    grid = np.arange(1.0, HORIZON)
    if ages is None or defined is None:
        return grid
    ages = np.asarray(ages, dtype=float)
    ok = {float(a) for a, d in zip(ages, defined) if d}
    return np.array([a for a in grid if a in ok])


def _mvn_factor(cov):
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    clipped = bool(np.any(vals < 0))
    return vecs * np.sqrt(np.clip(vals, 0.0, None)), clipped


def sample_parametric_curves(fit: FitResult, period: int, ages, K: int = 500, seed: int = 0,
                             return_diagnostics: bool = False):
    """Survival curves from draws of the fitted parameters.

    Draws are made on the unconstrained scale from ``N(theta_hat, V)`` and
    mapped to the synthetic-period survival of ``period``.

    Parameters
    ----------
    fit : FitResult
    period : int
    ages : array of shape (A,)
    K : int
    seed : int
    return_diagnostics : bool
        Also return a list of messages (non-PSD covariance clipping).

    Returns
    -------
    ndarray of shape (K, A)
    """
    if fit.covariance is None:
        raise ValueError("the fit has no covariance matrix")
    if seed is None:
        raise ValueError("a seed is required")
    fam = fit.params.family
    k = fam.n_params
    theta = fit.theta
    factor, clipped = _mvn_factor(np.asarray(fit.covariance, dtype=float))
    diagnostics = []
    if clipped:
        diagnostics.append("covariance not positive semidefinite; negative eigenvalues set to 0")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(K), theta.size))
    draws = theta[None, :] + z @ factor.T
    ages = np.asarray(ages, dtype=float)
    out = np.empty((int(K), ages.size))
    block = slice(period * k, (period + 1) * k)
    for i in range(int(K)):
        nat = fam.to_natural(draws[i, block])
        out[i] = np.exp(-fam.cumhaz0(nat, ages))
    return (out, diagnostics) if return_diagnostics else out


@dataclass
class ComparisonReport:
    """Per-age summaries of paired differences (parametric minus Turnbull).

    Attributes
    ----------
    ages : ndarray
    p025, p50, p975 : ndarray
        Percentiles of the differences per age.
    contains_zero : ndarray of bool
    percentage : float
        Share of ages whose interval contains zero, in percent.
    K : int
    caveat : str
    """

    ages: np.ndarray
    p025: np.ndarray
    p50: np.ndarray
    p975: np.ndarray
    contains_zero: np.ndarray
    percentage: float
    K: int
    caveat: str = CAVEAT
    diagnostics: list = field(default_factory=list)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["age_months", "diff_p2.5", "diff_p50", "diff_p97.5", "contains_zero"])
            for row in zip(self.ages, self.p025, self.p50, self.p975, self.contains_zero):
                w.writerow([f"{row[0]:g}"] + [repr(float(v)) for v in row[1:4]] + [int(row[4])])
            fh.write(f"# summary: percentage={self.percentage!r} ages={len(self.ages)} "
                     f"K={self.K} caveat={self.caveat}\n")


def compare(parametric, turnbull, ages, defined=None) -> ComparisonReport:
    """Paired comparison of two sets of K sampled curves.

    Parameters
    ----------
    parametric, turnbull : array of shape (K, A)
    ages : array of shape (A,)
    defined : boolean array of shape (A,), optional
        Ages where the Turnbull estimate is defined; only these are scored.

    Returns
    -------
    ComparisonReport
    """
    P = np.atleast_2d(np.asarray(parametric, dtype=float))
    T = np.atleast_2d(np.asarray(turnbull, dtype=float))
    if P.shape[0] != T.shape[0]:
        raise ValueError(f"sample counts differ: {P.shape[0]} parametric vs {T.shape[0]} Turnbull")
    ages = np.asarray(ages, dtype=float)
    if P.shape[1] != ages.size or T.shape[1] != ages.size:
        raise ValueError("sample matrices must have one column per age")
    keep = np.ones(ages.size, bool) if defined is None else np.asarray(defined, bool)
    D = (P - T)[:, keep]
    if D.shape[1] == 0:
        raise ValueError("no ages to compare")
    lo, mid, hi = np.percentile(D, [2.5, 50.0, 97.5], axis=0)
    cz = (lo <= 0.0) & (hi >= 0.0)
    return ComparisonReport(ages[keep], lo, mid, hi, cz, float(100.0 * cz.mean()), P.shape[0])


def validate_fit(records, grid, family="lognormal", K: int = 500, seed: int = 0,
                 fit: Optional[FitResult] = None, turnbull=None, design=None) -> dict:
    """Run the comparison for every period.

    The bootstrap replicates and the parameter draws use independent
    substreams of ``seed``.

    Returns
    -------
    dict mapping period index to ComparisonReport
    """
    arr = records if isinstance(records, RecordArrays) else RecordArrays.from_records(records)
    grid = as_grid(grid)
    if fit is None:
        fit = fit_pseudo_mle(arr, grid, family)
    boot_ss, mvn_ss = np.random.SeedSequence(int(seed)).spawn(2)
    ages = np.arange(0.0, HORIZON + 1.0)
    if turnbull is None:
        design = SurveyDesign.from_arrays(arr.stratum, arr.cluster) if design is None else design
        plan = make_bootstrap_plan(design, K, int(boot_ss.generate_state(1)[0]))
        turnbull = turnbull_by_period(arr, grid, ages, plan)
    mvn_seeds = mvn_ss.generate_state(grid.n_periods)
    out = {}
    for p, tb in turnbull.items():
        if tb.samples is None:
            raise ValueError("Turnbull estimate carries no bootstrap samples")
        if tb.samples.shape[0] != K:
            raise ValueError(f"sample counts differ: {K} parametric vs {tb.samples.shape[0]} Turnbull")
        par, diag = sample_parametric_curves(fit, p, tb.ages, K, int(mvn_seeds[p]),
                                             return_diagnostics=True)
        want = set(validation_ages().tolist())
        defined = tb.defined & np.array([a in want for a in tb.ages])
        rep = compare(par, tb.samples, tb.ages, defined)
        rep.diagnostics.extend(diag)
        out[p] = rep
    return out
