"""Log-quadratic model for the under-five mortality schedule.

``log(xq0) = a_x + b_x log(q5) + c_x log(q5)^2 + v_x k`` at 22 fixed ages.
The coefficients come from an external table; only ``k`` is estimated.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from ..data import DAYS_PER_MONTH

__all__ = [
    "AGE_LABELS",
    "AGE_MONTHS",
    "K_RANGE",
    "LogQuadCoefficients",
    "load_logquad_coefficients",
    "write_logquad_coefficients",
    "synthetic_logquad_coefficients",
    "logquad_predict",
    "KFit",
    "logquad_fit_k",
]

AGE_LABELS = ("7d", "14d", "21d", "28d", "2m", "3m", "4m", "5m", "6m", "7m", "8m", "9m",
              "10m", "11m", "12m", "15m", "18m", "21m", "2y", "3y", "4y", "5y")


def _label_months(label: str) -> float:
    n, unit = float(label[:-1]), label[-1]
    return {"d": n / DAYS_PER_MONTH, "m": n, "y": 12.0 * n}[unit]


AGE_MONTHS = np.array([_label_months(s) for s in AGE_LABELS])
#: Ages are weighted by the length of the age gap ending there.
INTERVAL_WEIGHTS = np.diff(np.concatenate([[0.0], AGE_MONTHS]))
K_RANGE = (-1.1, 1.5)


@dataclass(frozen=True)
class LogQuadCoefficients:
    """Age-specific coefficients ``(a, b, c, v)`` in canonical age order."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    v: np.ndarray
    source: str = "user"

    def __post_init__(self):
        for name in "abcv":
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (22,):
                raise ValueError(f"coefficient column {name} must have 22 entries")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"coefficient column {name} has non-finite values")
            object.__setattr__(self, name, arr)
        last = (self.a[-1], self.b[-1], self.c[-1], self.v[-1])
        if last != (0.0, 1.0, 0.0, 0.0):
            raise ValueError("the 5y row must be (a, b, c, v) = (0, 1, 0, 0)")

    @property
    def weights(self) -> np.ndarray:
        return INTERVAL_WEIGHTS.copy()


def load_logquad_coefficients(path=None) -> LogQuadCoefficients:
    """Read ``age_label,a,b,c,v``; the bundled synthetic table by default."""
    src = resources.files("childsurv").joinpath("data", "logquad_synthetic.csv") \
        if path is None else path
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
    by_label = {r["age_label"]: r for r in rows}
    missing = [s for s in AGE_LABELS if s not in by_label]
    if missing:
        raise ValueError("log-quad coefficient file is missing ages: " + ", ".join(missing))
    extra = [r["age_label"] for r in rows if r["age_label"] not in AGE_LABELS]
    if extra or len(rows) != 22:
        raise ValueError("log-quad coefficient file must have exactly the 22 canonical ages")
    cols = {k: np.array([float(by_label[s][k]) for s in AGE_LABELS]) for k in "abcv"}
    return LogQuadCoefficients(**cols, source=str(src))


def write_logquad_coefficients(coeffs: LogQuadCoefficients, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["age_label", "a", "b", "c", "v"])
        for j, s in enumerate(AGE_LABELS):
            w.writerow([s] + [repr(float(getattr(coeffs, k)[j])) for k in "abcv"])


def synthetic_logquad_coefficients() -> LogQuadCoefficients:
    """Non-official coefficients built from a log-normal reference schedule.

    ``a_x`` is the log ratio of the reference ``xq0`` to its under-five value,
    ``b_x = 1``, ``c_x = 0`` and ``v_x`` falls from about 1 at 7 days to 0 at
    5 years, so positive ``k`` means relatively early mortality.
    """
    from ..hazards import LogNormal

    fam = LogNormal()
    q = -np.expm1(-fam.cumhaz0(np.array([16.2, 8.62]), AGE_MONTHS))
    a = np.log(q / q[-1])
    v = np.log(AGE_MONTHS[-1] / AGE_MONTHS) / np.log(AGE_MONTHS[-1] / AGE_MONTHS[0])
    a[-1], v[-1] = 0.0, 0.0
    return LogQuadCoefficients(np.round(a, 6), np.ones(22), np.zeros(22), np.round(v, 6),
                               source="synthetic")


def _age_index(ages) -> np.ndarray:
    if ages is None:
        return np.arange(22)
    idx = []
    for x in np.atleast_1d(ages):
        if isinstance(x, str):
            if x not in AGE_LABELS:
                raise ValueError(f"unknown log-quad age {x!r}")
            idx.append(AGE_LABELS.index(x))
        else:
            hit = np.flatnonzero(np.isclose(AGE_MONTHS, float(x)))
            if hit.size == 0:
                raise ValueError(f"age {x} months is not one of the 22 log-quad ages")
            idx.append(int(hit[0]))
    return np.asarray(idx, dtype=int)


def _log_pred(coeffs, lq5, k, idx):
    return coeffs.a[idx] + coeffs.b[idx] * lq5 + coeffs.c[idx] * lq5 ** 2 + coeffs.v[idx] * k


def logquad_predict(coeffs: LogQuadCoefficients, q5: float, k: float = 0.0, ages=None) -> np.ndarray:
    """Predicted ``xq0`` at the requested ages (all 22 by default).

    Ages may be labels such as ``"7d"`` or month values.
    """
    if not 0 < q5 < 1:
        raise ValueError("q5 must lie strictly between 0 and 1")
    idx = _age_index(ages)
    out = np.exp(_log_pred(coeffs, np.log(q5), k, idx))
    # the 5y row is the identity, so return the input exactly
    out[idx == 21] = q5
    return out


@dataclass
class KFit:
    """Estimate of the shape parameter ``k``.

    Attributes
    ----------
    k : float
    variance : float or None
        Only available when all 22 ages are observed.
    band : tuple of float or None
        ``k -/+ 1.96 sqrt(variance)``.
    option : int
        1 for a single observed age, 2 otherwise.
    diagnostics : list of str
    """

    k: float
    variance: Optional[float]
    band: Optional[tuple]
    option: int
    diagnostics: list = field(default_factory=list)

    @property
    def out_of_range(self) -> bool:
        return not K_RANGE[0] < self.k < K_RANGE[1]


def logquad_fit_k(coeffs: LogQuadCoefficients, q5: float, observed) -> KFit:
    """Estimate ``k`` from observed ``(age, xq0)`` pairs.

    Residuals ``e(x) = log(observed) - log(predicted at k = 0)``.  With one age,
    ``k = e(x) / v_x``.  Otherwise ``k`` minimizes the weighted squared error,
    ``sum w e v / sum w v^2``, with ``w(x)`` the length of the age gap ending at
    ``x``.
    """
    if not 0 < q5 < 1:
        raise ValueError("q5 must lie strictly between 0 and 1")
    pairs = list(observed.items()) if isinstance(observed, dict) else list(observed)
    if not pairs:
        raise ValueError("no observed ages supplied")
    idx = _age_index([p[0] for p in pairs])
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("observed ages must be distinct")
    obs = np.array([float(p[1]) for p in pairs])
    if np.any((obs <= 0) | (obs >= 1)):
        raise ValueError("observed probabilities must lie strictly between 0 and 1")
    e = np.log(obs) - _log_pred(coeffs, np.log(q5), 0.0, idx)
    v = coeffs.v[idx]
    diagnostics = []
    if len(idx) == 1:
        if v[0] == 0:
            raise ValueError("k unidentifiable at this age (v_x = 0)")
        k, var, band, option = float(e[0] / v[0]), None, None, 1
    else:
        w = INTERVAL_WEIGHTS[idx]
        den = np.sum(w * v * v)
        if den == 0:
            raise ValueError("k unidentifiable at these ages (all v_x = 0)")
        k = float(np.sum(w * e * v) / den)
        option = 2
        var = band = None
        if len(idx) == 22:
            var = float(22.0 / 21.0 * (np.sum(w * e * e) / den - k * k))
            var = max(var, 0.0)
            half = 1.96 * np.sqrt(var)
            band = (k - half, k + half)
    if not K_RANGE[0] < k < K_RANGE[1]:
        diagnostics.append(f"k = {k:.4g} outside the empirical range {K_RANGE}")
    for kk in [k] + (list(band) if band else []):
        curve = logquad_predict(coeffs, q5, kk)
        if np.any(np.diff(curve) < 0):
            diagnostics.append(f"predicted schedule is non-monotone in age at k = {kk:.4g}")
    return KFit(k, var, band, option, diagnostics)
