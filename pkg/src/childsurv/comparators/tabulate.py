"""Person-period tabulation of child records into age-group by period cells."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import PeriodGrid, RecordArrays

__all__ = ["CellTable", "tabulate"]


@dataclass
class CellTable:
    """Per-child contributions to (age group, period) cells.

    Attributes
    ----------
    edges : ndarray of shape (J + 1,)
        Age-group boundaries in months.
    deaths : ndarray of shape (n, J, P)
        Deaths credited to each cell.  Interval-censored deaths are spread over
        the cells they overlap in proportion to overlap length.
    at_risk : ndarray of shape (n, J, P)
        1 when the child's alive window meets the cell, else 0.
    exposure : ndarray of shape (n, J, P)
        Months lived in the cell.  Within a death interval the time alive is
        counted in expectation under a uniform death age.
    weight : ndarray of shape (n,)

    Notes
    -----
    ``trials`` adds half a month per death to the months lived, the actuarial
    convention under which a death month counts as a whole binomial trial.
    """

    edges: np.ndarray
    deaths: np.ndarray
    at_risk: np.ndarray
    exposure: np.ndarray
    weight: np.ndarray

    @property
    def trials(self) -> np.ndarray:
        return self.exposure + 0.5 * self.deaths

    @property
    def n_groups(self) -> int:
        return len(self.edges) - 1

    def totals(self, field: str, weight=None) -> np.ndarray:
        """Weighted cell totals of shape (J, P)."""
        w = self.weight if weight is None else np.asarray(weight, dtype=float)
        return np.einsum("i,ijp->jp", w, getattr(self, field))


def _overlap(a0, a1, b0, b1):
    return np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0, None)


def _alive_integral(u, v, t1, width):
    # integral over [u, v] of (t1 - s) / width, for t1 - width <= u <= v <= t1
    return ((t1 - u) ** 2 - (t1 - v) ** 2) / (2.0 * width)


def tabulate(records: RecordArrays, grid: PeriodGrid, edges) -> CellTable:
    """Tabulate records into cells defined by age ``edges`` and the period grid."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or edges[0] != 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("age edges must start at 0 and increase strictly")
    n, J, P = len(records), edges.size - 1, grid.n_periods
    kind, t0, t1 = records.kind, records.t0, records.t1
    is_ex, is_iv = kind == 1, kind == 2
    width = np.where(is_iv, t1 - t0, 1.0)
    end = np.where(is_iv, t1, t0)

    deaths = np.zeros((n, J, P))
    at_risk = np.zeros((n, J, P))
    exposure = np.zeros((n, J, P))
    for p in range(P):
        a = grid.starts[p] - records.birth
        plo, phi = np.maximum(a, 0.0), a + grid.lengths[p]
        for j in range(J):
            lo = np.maximum(plo, edges[j])
            hi = np.minimum(phi, edges[j + 1])
            cell = lo < hi
            # age and calendar period are both half-open
            d_ex = is_ex & cell & (t0 >= lo) & (t0 < hi)
            d_iv = np.where(is_iv, _overlap(t0, t1, lo, hi) / width, 0.0)
            deaths[:, j, p] = d_ex + d_iv
            at_risk[:, j, p] = cell & (np.where(is_ex, lo <= end, lo < end))
            full = _overlap(lo, hi, 0.0, np.where(is_iv, t0, end))
            part = np.zeros(n)
            if is_iv.any():
                u = np.clip(lo, t0, t1)
                v = np.clip(hi, t0, t1)
                part = np.where(is_iv & (v > u), _alive_integral(u, v, t1, width), 0.0)
            exposure[:, j, p] = np.where(cell, full + part, 0.0)
    return CellTable(edges, deaths, at_risk, exposure, records.weight.astype(float))
