"""Synthetic birth histories with known period-specific survival.

Children are generated cluster by cluster under a stratified cluster design.
Each child's death age solves ``m_c H_i(t) = E`` with ``E`` standard
exponential, ``H_i`` the period cumulative hazard and ``m_c`` a cluster
hazard multiplier (one for every cluster unless the design is informative).
The resulting ages are recorded the way birth-history surveys record them:
days in the first month, months up to two years and whole years after that,
with optional heaping of deaths onto twelve months.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import DAYS_PER_MONTH, HORIZON, PeriodGrid, year_to_cmc
from .hazards import get_family, period_cumulative_hazard
from .ingestion import RawBirthRow, apply_censoring_rules

__all__ = [
    "SimulationSpec",
    "SimulationTruth",
    "simulate_births",
    "simulate",
    "truth_survival",
    "write_truth",
    "lognormal_two_period_spec",
    "inverse_cumulative_hazard",
]


@dataclass
class SimulationSpec:
    """Settings of a synthetic survey.

    Parameters
    ----------
    family : str
        Hazard family of the data-generating process.
    params : array of shape (n_periods, n_params)
        Natural parameters per period.
    periods : sequence of float
        Period boundaries in CMC units.
    interview : int
        Interview date (CMC), at most the last boundary.
    birth_window : (int, int)
        Births are uniform over the integer CMCs in ``[start, end)``.
    n_strata, clusters_per_stratum, children_per_cluster : int
    design : {"equal", "informative"}
        With ``informative`` a share of clusters carries the hazard multiplier
        ``high_risk_multiplier``; such clusters make up ``high_risk_share`` of
        the population but ``high_risk_sample_share`` of the sample, and
        weights are inverse inclusion probabilities.
    heaping_prob : float
        Probability that a death at ages in ``heaping_window`` is reported at
        ``heaping_month`` months.
    seed : int
    family_kwargs : dict
        Extra family options such as piecewise-exponential cutpoints.
    """

    family: str
    params: np.ndarray
    periods: Sequence[float]
    interview: int
    birth_window: tuple
    n_strata: int = 10
    clusters_per_stratum: int = 5
    children_per_cluster: int = 200
    design: str = "equal"
    high_risk_multiplier: float = 2.0
    high_risk_share: float = 0.5
    high_risk_sample_share: float = 0.75
    heaping_prob: float = 0.0
    heaping_window: tuple = (9.0, 15.0)
    heaping_month: int = 12
    seed: int = 0
    family_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        self.periods = tuple(float(v) for v in self.periods)
        grid = self.grid
        fam = self.hazard_family
        fam.check_natural(self.params)
        if self.params.shape[0] != grid.n_periods:
            raise ValueError("params need one row per period")
        if self.interview > grid.boundaries[-1]:
            raise ValueError("the interview must not follow the end of the grid")
        lo, hi = self.birth_window
        if not (grid.boundaries[0] <= lo < hi <= self.interview):
            raise ValueError("births must fall inside the grid and precede the interview")
        if self.design not in ("equal", "informative"):
            raise ValueError("design must be 'equal' or 'informative'")
        if not 0 <= self.heaping_prob <= 1:
            raise ValueError("heaping_prob must lie in [0, 1]")
        if self.clusters_per_stratum < 2 and self.n_strata > 0:
            raise ValueError("at least two clusters per stratum are needed")

    @property
    def grid(self) -> PeriodGrid:
        return PeriodGrid(self.periods)

    @property
    def hazard_family(self):
        return get_family(self.family, **self.family_kwargs)

    def digest(self) -> str:
        d = asdict(self)
        d["params"] = self.params.tolist()
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def lognormal_two_period_spec(seed: int = 0, **overrides) -> SimulationSpec:
    """Two five-year periods, 2000-2004 and 2005-2009, with log-normal hazards.

    The parameters give neonatal, infant and under-five mortality of about
    30, 56 and 80 per thousand in the first period and lower mortality in the
    second.
    """
    kw = dict(
        family="lognormal",
        params=np.array([[16.2, 8.62], [17.0, 8.62]]),
        periods=(year_to_cmc(2000), year_to_cmc(2005), year_to_cmc(2010)),
        interview=int(year_to_cmc(2010)),
        birth_window=(int(year_to_cmc(2000)), int(year_to_cmc(2010))),
        seed=seed,
    )
    kw.update(overrides)
    return SimulationSpec(**kw)


@dataclass
class SimulationTruth:
    """Known quantities of a simulated population.

    Attributes
    ----------
    ages : ndarray
    survival : ndarray of shape (n_periods, n_ages)
        Synthetic-period survival of the population.
    rates : list of dict
        Neonatal, infant and under-five mortality per period.
    multipliers : dict
        Cluster identifier to hazard multiplier.
    """

    spec: SimulationSpec
    ages: np.ndarray
    survival: np.ndarray
    rates: list
    multipliers: dict


def truth_survival(spec: SimulationSpec, ages) -> np.ndarray:
    """Population synthetic-period survival, mixing over cluster risk types."""
    fam = spec.hazard_family
    ages = np.asarray(ages, dtype=float)
    out = []
    for p in range(spec.grid.n_periods):
        H = fam.cumhaz0(spec.params[p], ages)
        if spec.design == "informative":
            sh = spec.high_risk_share
            s = (1 - sh) * np.exp(-H) + sh * np.exp(-spec.high_risk_multiplier * H)
        else:
            s = np.exp(-H)
        out.append(s)
    return np.vstack(out)


def inverse_cumulative_hazard(fam, params, birth, grid, target, multiplier=1.0,
                              horizon=HORIZON, tol=1e-9):
    """Age ``t`` with ``multiplier * H_i(t) = target`` by bisection on ``[0, horizon]``.

    Children whose cumulative hazard at ``horizon`` stays below the target
    get ``inf``.
    """
    birth = np.asarray(birth, dtype=float)
    target = np.asarray(target, dtype=float)
    mult = np.broadcast_to(np.asarray(multiplier, dtype=float), birth.shape)
    top = mult * period_cumulative_hazard(fam, params, birth, grid, np.full(birth.shape, horizon))
    out = np.full(birth.shape, np.inf)
    live = top >= target
    lo = np.zeros(int(live.sum()))
    hi = np.full(lo.shape, float(horizon))
    b, e, m = birth[live], target[live], mult[live]
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        up = m * period_cumulative_hazard(fam, params, b, grid, mid) >= e
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    out[live] = 0.5 * (lo + hi)
    return out


def _record(t, age_int, heaped):
    if not t < age_int:
        return False, None, None
    if heaped:
        return True, "m", None
    if t < 1.0:
        return True, "d", int(np.floor(t * DAYS_PER_MONTH))
    if t < 24.0:
        return True, "m", int(np.floor(t))
    return True, "y", int(np.floor(t / 12.0))


def simulate_births(spec: SimulationSpec):
    """Generate survey rows and the truth bundle.

    Returns
    -------
    rows : list of RawBirthRow
    truth : SimulationTruth
    """
    grid = spec.grid
    fam = spec.hazard_family
    nh = spec.clusters_per_stratum
    n_high = int(round(spec.high_risk_sample_share * nh)) if spec.design == "informative" else 0
    n_high = min(max(n_high, 0), nh)
    w_high = w_low = 1.0
    if spec.design == "informative":
        if not 0 < n_high < nh:
            raise ValueError("informative design needs both cluster types in every stratum")
        w_high = spec.high_risk_share / (n_high / nh)
        w_low = (1.0 - spec.high_risk_share) / ((nh - n_high) / nh)
    streams = np.random.SeedSequence(int(spec.seed)).spawn(spec.n_strata * nh)
    rows = []
    multipliers = {}
    lo_b, hi_b = spec.birth_window
    for h in range(spec.n_strata):
        for c in range(nh):
            rng = np.random.default_rng(streams[h * nh + c])
            stratum = f"h{h + 1:02d}"
            cluster = f"{stratum}c{c + 1:03d}"
            high = c < n_high
            mult = spec.high_risk_multiplier if high else 1.0
            weight = w_high if high else w_low
            multipliers[cluster] = mult
            n = spec.children_per_cluster
            dob = rng.integers(lo_b, hi_b, size=n)
            E = rng.standard_exponential(n)
            heap_u = rng.random(n)
            t = inverse_cumulative_hazard(fam, spec.params, dob.astype(float), grid, E, mult)
            age_int = spec.interview - dob
            lo_w, hi_w = spec.heaping_window
            heaped = (t >= lo_w) & (t < hi_w) & (heap_u < spec.heaping_prob)
            for i in range(n):
                died, unit, value = _record(t[i], age_int[i], heaped[i])
                if died and heaped[i]:
                    value = spec.heaping_month
                rows.append(RawBirthRow(
                    f"{cluster}i{i + 1:04d}", stratum, cluster, weight, int(dob[i]),
                    int(spec.interview), died, unit, value))
    ages = np.arange(0.0, HORIZON + 1.0)
    surv = truth_survival(spec, ages)
    rates = []
    for p in range(grid.n_periods):
        s = truth_survival(spec, [1.0, 12.0, HORIZON])[p]
        rates.append({"period": p, "nmr": 1 - s[0], "imr": 1 - s[1], "u5mr": 1 - s[2]})
    return rows, SimulationTruth(spec, ages, surv, rates, multipliers)


def simulate(spec: SimulationSpec, heaping_adjust: bool = False, heaping_windows=((6.0, 18.0),)):
    """Simulated child records after the standard censoring rules.

    Returns
    -------
    records : list of ChildRecord
    truth : SimulationTruth
    """
    rows, truth = simulate_births(spec)
    records = apply_censoring_rules(rows, heaping_adjust=heaping_adjust,
                                    heaping_windows=heaping_windows)
    return records, truth


def write_truth(truth: SimulationTruth, curves_path, rates_path, header_lines=()):
    """Write ``period,age_months,S_true`` and ``period,nmr,imr,u5mr`` tables."""
    with open(curves_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "age_months", "S_true"])
        for p in range(truth.survival.shape[0]):
            for a, s in zip(truth.ages, truth.survival[p]):
                w.writerow([p, f"{a:g}", repr(float(s))])
    with open(rates_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "nmr", "imr", "u5mr"])
        for r in truth.rates:
            w.writerow([r["period"], repr(float(r["nmr"])), repr(float(r["imr"])),
                        repr(float(r["u5mr"]))])


def spec_from_mapping(cfg: dict, seed: Optional[int] = None) -> SimulationSpec:
    """Build a spec from ``key=value`` configuration entries.

    Recognised keys: ``family``, ``params`` (periods separated by ``;``,
    values by ``,``), ``periods`` (calendar years), ``interview_year``,
    ``birth_years`` (``start,end``), ``n_strata``, ``clusters_per_stratum``,
    ``children_per_cluster``, ``design``, ``high_risk_multiplier``,
    ``high_risk_share``, ``high_risk_sample_share``, ``heaping_prob``,
    ``heaping_window``, ``heaping_month``, ``cutpoints`` and ``seed``.
    """
    cfg = dict(cfg)
    def floats(s):
        return [float(v) for v in str(s).split(",") if v.strip()]
    years = floats(cfg.pop("periods", "2000,2005,2010"))
    kw = {"family": cfg.pop("family", "lognormal")}
    kw["params"] = np.array([floats(r) for r in str(cfg.pop("params")).split(";")])
    kw["periods"] = tuple(year_to_cmc(y) for y in years)
    kw["interview"] = int(year_to_cmc(float(cfg.pop("interview_year", years[-1]))))
    by = floats(cfg.pop("birth_years", f"{years[0]},{years[-1]}"))
    kw["birth_window"] = (int(year_to_cmc(by[0])), int(year_to_cmc(by[1])))
    for key in ("n_strata", "clusters_per_stratum", "children_per_cluster", "heaping_month"):
        if key in cfg:
            kw[key] = int(cfg.pop(key))
    for key in ("high_risk_multiplier", "high_risk_share", "high_risk_sample_share",
                "heaping_prob"):
        if key in cfg:
            kw[key] = float(cfg.pop(key))
    if "design" in cfg:
        kw["design"] = cfg.pop("design")
    if "heaping_window" in cfg:
        kw["heaping_window"] = tuple(floats(cfg.pop("heaping_window")))
    if "cutpoints" in cfg:
        kw["family_kwargs"] = {"cutpoints": tuple(floats(cfg.pop("cutpoints")))}
    cfg_seed = cfg.pop("seed", None)
    kw["seed"] = int(seed if seed is not None else (cfg_seed if cfg_seed is not None else 0))
    if cfg:
        raise ValueError(f"unknown simulation settings: {', '.join(sorted(cfg))}")
    return SimulationSpec(**kw)
