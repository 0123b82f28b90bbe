"""Reading birth histories and turning them into censored survival records.

The input table has one row per child with the columns::

    child_id,stratum,cluster,weight,dob_cmc,interview_cmc,died,death_unit,death_value

``death_unit`` is ``d`` (days), ``m`` (months), ``y`` (years) or empty for
surviving children.  Lines starting with ``#`` before the header are ignored.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import (
    DAYS_PER_MONTH,
    HORIZON,
    ChildRecord,
    Exact,
    Interval,
    PeriodGrid,
    RecordArrays,
    RightCensored,
)

__all__ = [
    "COLUMNS",
    "RawBirthRow",
    "BirthHistoryError",
    "read_birth_history",
    "write_birth_history",
    "apply_censoring_rules",
    "apply_heaping_adjustment",
    "restrict_to_grid",
    "GridRestriction",
    "expand_for_turnbull",
    "StraddleReport",
    "straddle_fraction_report",
]

COLUMNS = (
    "child_id",
    "stratum",
    "cluster",
    "weight",
    "dob_cmc",
    "interview_cmc",
    "died",
    "death_unit",
    "death_value",
)

DEFAULT_HEAPING_WINDOWS = ((6.0, 18.0),)


class BirthHistoryError(ValueError):
    """Raised when a birth-history table violates the input schema.

    Attributes
    ----------
    errors : list of (row, column, message)
        Row numbers count data rows from 1.  ``row`` is 0 for header problems.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"row {r}, column {c}: {m}" if c else f"row {r}: {m}" for r, c, m in self.errors]
        shown = lines[:20]
        more = f"\n... {len(lines) - 20} more" if len(lines) > 20 else ""
        super().__init__("invalid birth history:\n" + "\n".join(shown) + more)


@dataclass(frozen=True)
class RawBirthRow:
    """One child as recorded in the survey file."""

    child_id: str
    stratum: str
    cluster: str
    weight: float
    dob_cmc: int
    interview_cmc: int
    died: bool
    death_unit: Optional[str] = None
    death_value: Optional[int] = None


def _parse_int(text, name, row, errors, minimum=None):
    try:
        value = int(text.strip())
    except (ValueError, AttributeError):
        errors.append((row, name, f"expected an integer, got {text!r}"))
        return None
    if minimum is not None and value < minimum:
        errors.append((row, name, f"must be >= {minimum}, got {value}"))
        return None
    return value


def _parse_row(raw: dict, row: int, errors: list) -> Optional[RawBirthRow]:
    n_before = len(errors)
    child_id = (raw.get("child_id") or "").strip()
    if not child_id:
        errors.append((row, "child_id", "missing child identifier"))
    stratum = (raw.get("stratum") or "").strip()
    if not stratum:
        errors.append((row, "stratum", "missing stratum"))
    cluster = (raw.get("cluster") or "").strip()
    if not cluster:
        errors.append((row, "cluster", "missing cluster"))
    weight = None
    try:
        weight = float((raw.get("weight") or "").strip())
    except ValueError:
        errors.append((row, "weight", f"expected a number, got {raw.get('weight')!r}"))
    if weight is not None:
        if not np.isfinite(weight) or weight <= 0:
            errors.append((row, "weight", f"nonpositive weight, row {row}"))
    dob = _parse_int(raw.get("dob_cmc"), "dob_cmc", row, errors, minimum=0)
    interview = _parse_int(raw.get("interview_cmc"), "interview_cmc", row, errors, minimum=0)
    if dob is not None and interview is not None and interview < dob:
        errors.append((row, "interview_cmc", "interview precedes birth"))
    died_text = (raw.get("died") or "").strip().lower()
    died = None
    if died_text in ("0", "false", "no"):
        died = False
    elif died_text in ("1", "true", "yes"):
        died = True
    else:
        errors.append((row, "died", f"expected 0 or 1, got {raw.get('died')!r}"))
    unit = (raw.get("death_unit") or "").strip().lower() or None
    value_text = (raw.get("death_value") or "").strip()
    value = None
    if died:
        if unit not in ("d", "m", "y"):
            errors.append((row, "death_unit", f"death unit must be d, m or y, got {unit!r}"))
        value = _parse_int(value_text, "death_value", row, errors, minimum=0)
        if unit == "d" and value is not None and value > 30:
            errors.append((row, "death_value", f"day count {value} exceeds 30; record in months"))
    elif died is False:
        if unit is not None or value_text:
            errors.append((row, "death_unit", "surviving child has a death age"))
    if len(errors) > n_before:
        return None
    return RawBirthRow(child_id, stratum, cluster, weight, dob, interview, died, unit, value)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="")
    return source


def read_birth_history(source) -> list:
    """Parse a birth-history CSV into :class:`RawBirthRow` objects.

    Parameters
    ----------
    source : path or text file object

    Raises
    ------
    BirthHistoryError
        With every offending row and column listed; no row is silently dropped.
    """
    fh = _open_text(source)
    try:
        lines = [ln for ln in fh if not ln.startswith("#")]
    finally:
        if fh is not source:
            fh.close()
    reader = csv.DictReader(io.StringIO("".join(lines)))
    header = tuple(h.strip() for h in (reader.fieldnames or ()))
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise BirthHistoryError([(0, c, "required column missing") for c in missing])
    errors: list = []
    rows = []
    seen = {}
    for k, raw in enumerate(reader, start=1):
        raw = {(key or "").strip(): val for key, val in raw.items()}
        parsed = _parse_row(raw, k, errors)
        cid = (raw.get("child_id") or "").strip()
        if cid in seen:
            errors.append((k, "child_id", f"duplicate of row {seen[cid]}"))
            continue
        if cid:
            seen[cid] = k
        if parsed is not None:
            rows.append(parsed)
    if errors:
        raise BirthHistoryError(errors)
    return rows


def write_birth_history(rows: Iterable[RawBirthRow], target, header_lines: Sequence[str] = ()):
    """Write rows in the input schema.  ``header_lines`` become ``#`` comments."""
    own = isinstance(target, (str, os.PathLike))
    fh = open(target, "w", newline="") if own else target
    try:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([
                r.child_id, r.stratum, r.cluster, repr(float(r.weight)), r.dob_cmc,
                r.interview_cmc, int(bool(r.died)), r.death_unit or "",
                "" if r.death_value is None else r.death_value,
            ])
    finally:
        if own:
            fh.close()


def _heap(outcome, windows):
    for lo, hi in windows:
        if isinstance(outcome, Interval) and outcome.t0 >= lo and outcome.t1 <= hi:
            return Interval(lo, hi)
        if isinstance(outcome, Exact) and lo <= outcome.t < hi:
            return Interval(lo, hi)
    return outcome


def _check_windows(windows):
    out = []
    for lo, hi in windows:
        lo, hi = float(lo), float(hi)
        if not 0 <= lo < hi:
            raise ValueError(f"heaping window must satisfy 0 <= lo < hi, got ({lo}, {hi})")
        out.append((lo, hi))
    return tuple(out)


def apply_heaping_adjustment(records, windows=DEFAULT_HEAPING_WINDOWS) -> list:
    """Widen death ages lying inside a heaping window to the whole window.

    The operation is idempotent.
    """
    windows = _check_windows(windows)
    out = []
    for r in records:
        o = _heap(r.outcome, windows)
        out.append(r if o is r.outcome else ChildRecord(
            r.child_id, r.birth, o, r.weight, r.stratum, r.cluster))
    return out


def _death_outcome(row: RawBirthRow, age_at_interview: float):
    unit, v = row.death_unit, row.death_value
    if unit == "d":
        if v == 0:
            # A same-day death carries no usable exact age; keep the first day.
            out = Interval(0.0, 1.0 / DAYS_PER_MONTH)
        else:
            out = Exact(v / DAYS_PER_MONTH)
    elif unit == "m":
        out = Interval(float(v), float(v) + 1.0)
    else:
        out = Interval(12.0 * v, 12.0 * v + 12.0)
    if isinstance(out, Interval) and out.t0 < age_at_interview < out.t1:
        out = Interval(out.t0, age_at_interview)
    return out


def _apply_horizon(outcome, horizon):
    if isinstance(outcome, RightCensored):
        return RightCensored(min(outcome.t, horizon))
    if isinstance(outcome, Exact):
        return RightCensored(horizon) if outcome.t >= horizon else outcome
    if outcome.t0 >= horizon:
        return RightCensored(horizon)
    if outcome.t1 > horizon:
        return Interval(outcome.t0, horizon)
    return outcome


def apply_censoring_rules(
    rows: Iterable[RawBirthRow],
    heaping_adjust: bool = False,
    heaping_windows=DEFAULT_HEAPING_WINDOWS,
    horizon: float = HORIZON,
) -> list:
    """Convert raw rows into :class:`ChildRecord` objects.

    Surviving children are right censored at their age at interview (capped at
    ``horizon``).  Deaths in days become exact ages, deaths in months or years
    become intervals of one month or one year.  Intervals are cut at the age
    at interview, since the death is known to precede the interview, and at
    ``horizon``.  Deaths at or beyond ``horizon`` become censored at
    ``horizon``.  With ``heaping_adjust`` death ages inside a heaping window
    are widened to the full window.
    """
    windows = _check_windows(heaping_windows)
    out = []
    for row in rows:
        age_int = float(row.interview_cmc - row.dob_cmc)
        if row.died:
            o = _death_outcome(row, age_int)
        else:
            o = RightCensored(age_int)
        o = _apply_horizon(o, horizon)
        if heaping_adjust:
            o = _heap(o, windows)
        out.append(ChildRecord(row.child_id, float(row.dob_cmc), o, row.weight,
                               row.stratum, row.cluster))
    return out


@dataclass
class GridRestriction:
    """Records usable for likelihood estimation on a period grid."""

    records: RecordArrays
    n_dropped: int
    n_modified: int


def restrict_to_grid(records, grid: PeriodGrid) -> GridRestriction:
    """Keep the information each record carries about the grid.

    Exposure before the first boundary is ignored by the likelihood, so records
    whose outcome is resolved before the child enters the grid are dropped.
    Outcomes after the last boundary are censored at the age the grid ends.
    A death interval straddling the grid end becomes survival to its lower
    bound.
    """
    arr = records if isinstance(records, RecordArrays) else RecordArrays.from_records(records)
    arr = arr.subset(slice(None))
    entry = np.maximum(grid.boundaries[0] - arr.birth, 0.0)
    exit_ = grid.boundaries[-1] - arr.birth
    keep = exit_ > 0
    kind, t0, t1 = arr.kind.copy(), arr.t0.copy(), arr.t1.copy()
    modified = np.zeros(len(arr), dtype=bool)

    rc = kind == 0
    keep &= ~(rc & (t0 <= entry))
    over = rc & (t0 > exit_)
    t0[over] = t1[over] = exit_[over]
    modified |= over

    ex = kind == 1
    keep &= ~(ex & (t0 <= entry))
    late = ex & (t0 >= exit_)
    kind[late] = 0
    t0[late] = t1[late] = exit_[late]
    modified |= late

    iv = kind == 2
    keep &= ~(iv & (t1 <= entry))
    after = iv & (t0 >= exit_)
    kind[after] = 0
    t0[after] = t1[after] = exit_[after]
    modified |= after
    straddle = iv & ~after & (t1 > exit_)
    keep &= ~(straddle & (t0 <= entry))
    kind[straddle] = 0
    t1[straddle] = t0[straddle]
    modified |= straddle

    arr.kind, arr.t0, arr.t1 = kind, t0, t1
    out = arr.subset(keep)
    return GridRestriction(out, int((~keep).sum()), int((modified & keep).sum()))


def expand_for_turnbull(records, grid: PeriodGrid, horizon: float = HORIZON) -> dict:
    """Period-specific truncated and censored observations for Turnbull estimation.

    For each period the child contributes, over the age window it spends in
    that period:

    * left truncation at ``a_p = y_p - b`` when ``a_p > 0``;
    * right censoring at the window end if it was alive when the period closed;
    * its own outcome if that is resolved inside the window.

    A death interval crossing one period boundary is split between the two
    periods with weights proportional to the interval length in each; the
    earlier period additionally records survival to the boundary for the share
    of the death attributed to the later period.  Shares before the grid or
    after its end are discarded with their fractional weight.

    Returns
    -------
    dict
        Maps period index to a :class:`childsurv.turnbull.TurnbullData`.

    Raises
    ------
    ValueError
        If a death interval spans three or more periods.
    """
    from .turnbull import TurnbullData

    arr = records if isinstance(records, RecordArrays) else RecordArrays.from_records(records)
    P = grid.n_periods
    cols = {p: ([], [], [], [], []) for p in range(P)}

    def add(p, left, right, trunc, w, src):
        c = cols[p]
        c[0].append(left)
        c[1].append(right)
        c[2].append(trunc)
        c[3].append(w)
        c[4].append(src)

    starts = grid.starts
    lengths = grid.lengths
    for i in range(len(arr)):
        b = arr.birth[i]
        kind, t0, t1, w = arr.kind[i], arr.t0[i], arr.t1[i], arr.weight[i]
        a = starts - b
        e = a + lengths
        if kind == 2:
            lo_p = [p for p in range(P) if t0 < e[p] and t1 > a[p]]
            if len(lo_p) >= 3:
                raise ValueError(
                    f"child {arr.child_id[i]}: death interval ({t0}, {t1}] spans "
                    f"{len(lo_p)} periods; use a coarser grid"
                )
        for p in range(P):
            if e[p] <= 0 or a[p] >= horizon:
                continue
            trunc = a[p] if a[p] > 0 else -np.inf
            end = min(horizon, e[p])
            if kind == 0:
                if t0 <= a[p]:
                    continue
                add(p, min(t0, end), np.inf, trunc, w, i)
            elif kind == 1:
                if t0 <= a[p]:
                    continue
                if t0 <= e[p]:
                    add(p, t0, t0, trunc, w, i)
                else:
                    add(p, end, np.inf, trunc, w, i)
            else:
                if t1 <= a[p]:
                    continue
                length = t1 - t0
                later = max(0.0, t1 - max(t0, e[p])) / length
                inside_lo, inside_hi = max(t0, a[p]), min(t1, e[p])
                inside = max(0.0, inside_hi - inside_lo) / length
                if inside > 0:
                    add(p, inside_lo, inside_hi, trunc, w * inside, i)
                if later > 0 and p < P - 1:
                    add(p, end, np.inf, trunc, w * later, i)
    out = {}
    for p in range(P):
        left, right, trunc, w, src = (np.asarray(v, dtype=float) for v in cols[p])
        exact = (left == right)
        out[p] = TurnbullData(left, right, exact, trunc, w, src.astype(np.int64))
    return out


@dataclass(frozen=True)
class StraddleReport:
    """Share of children whose death interval crosses a period boundary."""

    fraction_individuals: float
    fraction_deaths: float
    n_individuals: int
    n_deaths: int
    empty: bool


def straddle_fraction_report(records, grid: PeriodGrid) -> StraddleReport:
    """Unweighted fractions of individuals and of deaths straddling a boundary.

    A death interval straddles when a grid boundary lies strictly inside its
    calendar span.  An empty input gives zero fractions and ``empty=True``.
    """
    arr = records if isinstance(records, RecordArrays) else RecordArrays.from_records(records)
    n = len(arr)
    deaths = arr.kind != 0
    nd = int(deaths.sum())
    if n == 0:
        return StraddleReport(0.0, 0.0, 0, 0, True)
    bounds = np.asarray(grid.boundaries)
    c0 = arr.birth + arr.t0
    c1 = arr.birth + arr.t1
    iv = arr.kind == 2
    cross = iv[:, None] & (bounds[None, :] > c0[:, None]) & (bounds[None, :] < c1[:, None])
    s = int(cross.any(axis=1).sum())
    return StraddleReport(s / n, s / nd if nd else 0.0, n, nd, False)
