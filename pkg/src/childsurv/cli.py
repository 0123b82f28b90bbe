"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``turnbull``, ``logquad``, ``dischaz``,
``svd``, ``validate`` and ``report``.  Every output file starts with a comment
line carrying the package version, command, seed and a hash of the resolved
configuration.  Errors are reported as one line on standard error, with exit
code 2 for usage errors, 3 for invalid input files and 4 for estimation
failures.
"""
from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .data import DAYS_PER_MONTH, HORIZON, PeriodGrid, RecordArrays, year_to_cmc

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_ESTIMATOR = 0, 2, 3, 4
FAMILY_CHOICES = ("exponential", "pwexp", "weibull", "gengamma", "lognormal", "gompertz", "etsp")
RATE_COLUMNS = ["method", "period", "period_label", "rate", "estimate", "se", "lo", "hi"]


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


# --- configuration -----------------------------------------------------------

GENERIC_KEYS = ("input", "output_dir", "family", "periods", "heaping_adjust", "heaping_window",
                "k", "seed", "threads", "age_grid")


def read_config(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment.  Keys use ``_`` or ``-``."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(EXIT_USAGE, "config", f"{path}:{n}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise CliError(EXIT_USAGE, "config", f"not a boolean: {text!r}")


def _merge_config(args, extra_allowed=()):
    """Fill unset options from ``--config``; returns unused simulation keys."""
    leftover = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise CliError(EXIT_USAGE, "config", f"config file not found: {args.config}")
        cfg = read_config(args.config)
        for key, val in cfg.items():
            if not hasattr(args, key) or key == "config":
                if key in extra_allowed or "*" in extra_allowed:
                    leftover[key] = val
                    continue
                raise CliError(EXIT_USAGE, "config", f"unknown config key: {key}")
            cur = getattr(args, key)
            if cur not in (None, False, []):
                continue
            if key == "heaping_adjust":
                val = _parse_bool(val)
            elif key == "heaping_window":
                val = [w for w in val.split(";") if w.strip()]
            elif key in ("k", "seed", "threads"):
                try:
                    val = int(val)
                except ValueError:
                    raise CliError(EXIT_USAGE, "config", f"{key} must be an integer") from None
            setattr(args, key, val)
    return leftover


def _settings(args) -> dict:
    skip = {"output_dir", "threads", "config", "func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def config_hash(args, extra=None) -> str:
    blob = dict(_settings(args))
    if extra:
        blob.update(extra)
    for key in ("input", "observed", "basis", "coefficients"):
        path = blob.get(key)
        if isinstance(path, str) and os.path.isfile(path):
            with open(path, "rb") as fh:
                blob[key] = hashlib.sha256(fh.read()).hexdigest()
    return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()[:16]


def header_line(args, extra=None) -> str:
    seed = getattr(args, "seed", None)
    return (f"childsurv version={__version__} command={args.command} "
            f"seed={'none' if seed is None else seed} config={config_hash(args, extra)}")


# --- helpers -----------------------------------------------------------------

def _grid(args) -> PeriodGrid:
    if not args.periods:
        raise CliError(EXIT_USAGE, "usage", "--periods is required")
    try:
        years = _floats(args.periods)
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"bad --periods value {args.periods!r}") from None
    try:
        return PeriodGrid(tuple(year_to_cmc(y) for y in years))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, "usage", f"bad --periods value: {exc}") from None


def _period_labels(years):
    return [f"[{years[i]:g},{years[i + 1]:g})" for i in range(len(years) - 1)]


def _windows(args):
    if not args.heaping_window:
        return ((6.0, 18.0),)
    out = []
    for w in args.heaping_window:
        vals = _floats(w)
        if len(vals) != 2:
            raise CliError(EXIT_USAGE, "usage", f"--heaping-window expects lo,hi, got {w!r}")
        out.append(tuple(vals))
    return tuple(out)


def _ages(args):
    grid = getattr(args, "age_grid", None) or "monthly"
    if grid == "monthly":
        return np.arange(0.0, HORIZON + 1.0)
    if grid == "fine":
        days = np.arange(0, 31) / DAYS_PER_MONTH
        return np.unique(np.concatenate([days, np.arange(0.0, HORIZON + 0.125, 0.25)]))
    raise CliError(EXIT_USAGE, "usage", "--age-grid must be monthly or fine")


def _require_seed(args):
    if args.seed is None:
        raise CliError(EXIT_USAGE, "usage", f"{args.command} requires --seed")


def _load_records(args):
    from .ingestion import BirthHistoryError, apply_censoring_rules, read_birth_history

    if not args.input:
        raise CliError(EXIT_USAGE, "usage", "--input is required")
    if not os.path.exists(args.input):
        raise CliError(EXIT_SCHEMA, "input", f"input file not found: {args.input}")
    try:
        rows = read_birth_history(args.input)
    except BirthHistoryError as exc:
        first = exc.errors[0] if exc.errors else (0, "", str(exc))
        raise CliError(EXIT_SCHEMA, "schema",
                       f"{len(exc.errors)} error(s); row {first[0]} column {first[1]}: {first[2]}"
                       ) from None
    if not rows:
        raise CliError(EXIT_SCHEMA, "schema", "input contains no rows")
    records = apply_censoring_rules(rows, heaping_adjust=bool(args.heaping_adjust),
                                    heaping_windows=_windows(args))
    return RecordArrays.from_records(records)


def _out(args, name):
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path, header, columns, rows, trailer=()):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        for line in trailer:
            fh.write(f"# {line}\n")


def _write_rates(args, path, method, rates, labels, header):
    rows = [[method, r["period"], labels[r["period"]], r["rate"], r["estimate"],
             r.get("se", np.nan), r.get("lo", np.nan), r.get("hi", np.nan)] for r in rates]
    _write_csv(path, header, RATE_COLUMNS, rows)


# --- subcommands -------------------------------------------------------------

def cmd_simulate(args, leftover):
    from .ingestion import write_birth_history
    from .simulate import simulate_births, spec_from_mapping, write_truth

    _require_seed(args)
    cfg = dict(leftover)
    if not cfg:
        src = resources.files("childsurv").joinpath("data", "lognormal_two_period.cfg")
        cfg = read_config(src)
    if args.family and "family" not in cfg:
        cfg["family"] = args.family
    if args.periods and "periods" not in cfg:
        cfg["periods"] = args.periods
    try:
        spec = spec_from_mapping(cfg, seed=args.seed)
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, "config", f"invalid simulation settings: {exc}") from None
    head = header_line(args, {"spec": spec.digest()})
    rows, truth = simulate_births(spec)
    write_birth_history(rows, _out(args, "births.csv"), [head])
    write_truth(truth, _out(args, "truth_curves.csv"), _out(args, "truth_rates.csv"), [head])
    years = _floats(cfg.get("periods", "2000,2005,2010"))
    labels = _period_labels(years)
    rates = [{"period": r["period"], "rate": k, "estimate": r[k]}
             for r in truth.rates for k in ("nmr", "imr", "u5mr")]
    _write_rates(args, _out(args, "truth_long_rates.csv"), "truth", rates, labels, head)


def cmd_fit(args, leftover):
    from .likelihood import ParametricSurvival

    grid = _grid(args)
    arr = _load_records(args)
    family = args.family or "lognormal"
    head = header_line(args)
    try:
        est = ParametricSurvival(family=family, periods=grid).fit(arr)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"{family} fit failed: {exc}") from None
    labels = _period_labels(_floats(args.periods))
    res = est.result_
    fam = est.family_
    se = res.se
    rows = []
    for p in range(grid.n_periods):
        nat = est.natural_params_[p]
        for j, name in enumerate(fam.param_names):
            idx = p * fam.n_params + j
            rows.append([p, labels[p], name, nat[j], res.theta[idx],
                         np.nan if se is None else se[idx], bool(res.at_bound[idx])])
    _write_csv(_out(args, "fit_params.csv"), head,
               ["period", "period_label", "param", "natural", "unconstrained", "se_unconstrained",
                "at_bound"], rows,
               [f"loglik={res.loglik!r} converged={int(res.converged)} iterations={res.iterations}"]
               + [f"diagnostic: {d}" for d in res.diagnostics])
    ages = _ages(args)
    crow = []
    for p in range(grid.n_periods):
        s, lo, hi = est.survival_band(ages, p)
        for a, v, l, h in zip(ages, s, lo, hi):
            crow.append([p, labels[p], f"{a:.6g}", v, l, h])
    _write_csv(_out(args, "fit_curves.csv"), head,
               ["period", "period_label", "age_months", "S", "S_lo", "S_hi"], crow)
    _write_rates(args, _out(args, "fit_rates.csv"), f"parametric:{family}", est.rates(), labels,
                 head)
    if not res.converged:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"{family} fit did not converge")


def cmd_turnbull(args, leftover):
    from .data import SurveyDesign
    from .turnbull import turnbull_by_period
    from .variance import export_replicate_weights, make_bootstrap_plan

    grid = _grid(args)
    arr = _load_records(args)
    K = int(args.k or 0)
    if K < 0:
        raise CliError(EXIT_USAGE, "usage", "--k must be nonnegative")
    if K > 0:
        _require_seed(args)
    head = header_line(args)
    ages = _ages(args)
    try:
        plan = None
        if K > 0:
            design = SurveyDesign.from_arrays(arr.stratum, arr.cluster)
            plan = make_bootstrap_plan(design, K, args.seed)
        res = turnbull_by_period(arr, grid, ages, plan)
    except (ValueError, RuntimeError) as exc:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"Turnbull estimation failed: {exc}") from None
    labels = _period_labels(_floats(args.periods))
    rows, rates = [], []
    for p, tb in res.items():
        for j, a in enumerate(tb.ages):
            lo = np.nan if tb.band_lo is None else tb.band_lo[j]
            hi = np.nan if tb.band_hi is None else tb.band_hi[j]
            rows.append([p, labels[p], f"{a:.6g}", tb.surv[j] if tb.defined[j] else np.nan,
                         bool(tb.defined[j]), lo, hi])
        s, d = tb.estimator.predict_survival(np.array([1.0, 12.0, HORIZON]))
        for k, (name, age) in enumerate((("nmr", 1.0), ("imr", 12.0), ("u5mr", HORIZON))):
            row = {"period": p, "rate": name, "estimate": 1 - s[k] if d[k] else np.nan,
                   "se": np.nan, "lo": np.nan, "hi": np.nan}
            if tb.samples is not None and d[k]:
                hit = np.flatnonzero(np.isclose(tb.ages, age))
                if hit.size:
                    q = 1.0 - tb.samples[:, hit[0]]
                    row["se"] = float(np.std(q, ddof=1))
                    row["lo"], row["hi"] = (float(v) for v in np.percentile(q, [2.5, 97.5]))
            rates.append(row)
    _write_csv(_out(args, "turnbull_curves.csv"), head,
               ["period", "period_label", "age_months", "S", "defined", "S_lo", "S_hi"], rows,
               ["bands: percentile Rao-Wu bootstrap, coverage uncalibrated"])
    _write_rates(args, _out(args, "turnbull_rates.csv"), "turnbull", rates, labels, head)
    if plan is not None and args.export_weights:
        export_replicate_weights(plan, arr.child_id, arr.weight, _out(args, "replicate_weights.csv"),
                                 [head])


def cmd_dischaz(args, leftover):
    from .comparators.dischaz import DEFAULT_GROUPS, HEAPING_GROUPS, dischaz_fit

    grid = _grid(args)
    arr = _load_records(args)
    spec = HEAPING_GROUPS if args.heaping_groups else DEFAULT_GROUPS
    head = header_line(args)
    try:
        res = dischaz_fit(arr, grid, spec)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"discrete hazards failed: {exc}") from None
    labels = _period_labels(_floats(args.periods))
    rows = []
    qse = res.q_se
    for p in range(grid.n_periods):
        for j, g in enumerate(spec.labels):
            rows.append([p, labels[p], g, res.deaths[j, p], res.exposure[j, p], res.at_risk[j, p],
                         res.q[j, p], qse[j, p]])
    _write_csv(_out(args, "dischaz_cells.csv"), head,
               ["period", "period_label", "age_group", "deaths", "trials", "at_risk", "q", "se_q"],
               rows, [f"diagnostic: {d}" for d in res.diagnostics])
    _write_rates(args, _out(args, "dischaz_rates.csv"), "dischaz", res.rates, labels, head)


def cmd_svd(args, leftover):
    from .comparators import svd

    head = header_line(args)
    if args.q5_female is not None or args.q5_male is not None:
        if args.q5_female is None or args.q5_male is None:
            raise CliError(EXIT_USAGE, "usage", "--q5-female and --q5-male go together")
        try:
            out = svd.svd_empirical_predict(args.q5_female, args.q5_male)
        except ValueError as exc:
            raise CliError(EXIT_ESTIMATOR, "estimator", str(exc)) from None
        rows = [[sex, a, q] for sex in ("F", "M") for a, q in zip((0, 12, 24, 36, 48), out[sex])]
        _write_csv(_out(args, "svd_empirical.csv"), head, ["sex", "age_months", "q12"], rows,
                   ["singular vectors are synthetic stand-ins; see the package data notes"])
        return
    grid = _grid(args)
    arr = _load_records(args)
    try:
        basis = svd.load_lsv_basis(args.basis)
        res = svd.svd_lsv_fit(arr, grid, basis, n_components=args.n_components)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"SVD regression failed: {exc}") from None
    labels = _period_labels(_floats(args.periods))
    terms = ["intercept"] + [f"u{i}" for i in range(1, res.beta.shape[1])]
    crow = [[p, labels[p], t, res.beta[p, i], np.sqrt(max(res.covariance[p, i, i], 0.0))]
            for p in range(grid.n_periods) for i, t in enumerate(terms)]
    _write_csv(_out(args, "svd_coef.csv"), head,
               ["period", "period_label", "term", "estimate", "se"], crow,
               [f"diagnostic: {d}" for d in res.diagnostics])
    srow = [[p, labels[p], int(a), res.q[i, p]] for p in range(grid.n_periods)
            for i, a in enumerate((0, 12, 24, 36, 48))]
    _write_csv(_out(args, "svd_schedule.csv"), head, ["period", "period_label", "age_months", "q12"],
               srow)
    _write_rates(args, _out(args, "svd_rates.csv"), "svd", res.rates, labels, head)


def _read_observed(path):
    if not os.path.exists(path):
        raise CliError(EXIT_SCHEMA, "input", f"observed file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
    if not rows or "age_label" not in rows[0] or "q" not in rows[0]:
        raise CliError(EXIT_SCHEMA, "schema", "observed file needs age_label,q columns")
    try:
        return [(r["age_label"], float(r["q"])) for r in rows]
    except ValueError as exc:
        raise CliError(EXIT_SCHEMA, "schema", f"observed file: {exc}") from None


def cmd_logquad(args, leftover):
    from .comparators import logquad as lq
    from .turnbull import turnbull_by_period

    head = header_line(args)
    try:
        coeffs = lq.load_logquad_coefficients(args.coefficients)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_SCHEMA, "schema", f"log-quad coefficients: {exc}") from None
    jobs = []
    if args.q5 is not None:
        observed = _read_observed(args.observed) if args.observed else []
        jobs.append((0, "", args.q5, observed))
    else:
        grid = _grid(args)
        arr = _load_records(args)
        labels = _period_labels(_floats(args.periods))
        skip = [w for w in _windows(args)] if args.heaping_adjust else []
        try:
            tb = turnbull_by_period(arr, grid, lq.AGE_MONTHS)
        except (ValueError, RuntimeError) as exc:
            raise CliError(EXIT_ESTIMATOR, "estimator", f"Turnbull inputs failed: {exc}") from None
        for p, res in tb.items():
            if not res.defined[-1]:
                raise CliError(EXIT_ESTIMATOR, "estimator",
                               f"period {p}: under-five mortality not identified")
            q = 1.0 - res.surv
            obs = [(lbl, q[j]) for j, lbl in enumerate(lq.AGE_LABELS)
                   if res.defined[j] and 0 < q[j] < 1
                   and not any(lo <= lq.AGE_MONTHS[j] < hi for lo, hi in skip)]
            jobs.append((p, labels[p], float(q[-1]), obs))
    crow, krow = [], []
    for p, label, q5, obs in jobs:
        try:
            k, band, var = 0.0, None, None
            if obs:
                fitk = lq.logquad_fit_k(coeffs, q5, obs)
                k, band, var = fitk.k, fitk.band, fitk.variance
                krow += [[p, label, "diagnostic", d] for d in fitk.diagnostics]
            curve = lq.logquad_predict(coeffs, q5, k)
            lo_c = lq.logquad_predict(coeffs, q5, band[0]) if band else np.full(22, np.nan)
            hi_c = lq.logquad_predict(coeffs, q5, band[1]) if band else np.full(22, np.nan)
        except ValueError as exc:
            raise CliError(EXIT_ESTIMATOR, "estimator", f"log-quad failed: {exc}") from None
        krow += [[p, label, "q5", q5], [p, label, "k", k], [p, label, "n_observed", len(obs)],
                 [p, label, "var_k", var], [p, label, "k_lo", band[0] if band else None],
                 [p, label, "k_hi", band[1] if band else None]]
        for j, s in enumerate(lq.AGE_LABELS):
            crow.append([p, label, s, lq.AGE_MONTHS[j], curve[j], lo_c[j], hi_c[j]])
    trailer = ["band: k at -/+ 1.96 sd, reported as computed without a calibrated interpretation",
               "coefficients: " + ("bundled non-official synthetic table"
                                   if args.coefficients is None else args.coefficients)]
    _write_csv(_out(args, "logquad_curve.csv"), head,
               ["period", "period_label", "age_label", "age_months", "q", "q_band_a", "q_band_b"],
               crow, trailer)
    _write_csv(_out(args, "logquad_k.csv"), head, ["period", "period_label", "key", "value"], krow)


def cmd_validate(args, leftover):
    from .likelihood import fit_pseudo_mle
    from .validation import validate_fit

    _require_seed(args)
    grid = _grid(args)
    arr = _load_records(args)
    K = 500 if args.k is None else int(args.k)
    if K < 1:
        raise CliError(EXIT_USAGE, "usage", "--k must be positive for validate")
    family = args.family or "lognormal"
    head = header_line(args)
    try:
        fit = fit_pseudo_mle(arr, grid, family)
        reports = validate_fit(arr, grid, family, K=K, seed=args.seed, fit=fit)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ESTIMATOR, "estimator", f"validation failed: {exc}") from None
    labels = _period_labels(_floats(args.periods))
    summary = []
    for p, rep in reports.items():
        rep.to_csv(_out(args, f"validation_p{p}.csv"), [head])
        summary.append([p, labels[p], family, rep.percentage, len(rep.ages), rep.K])
    _write_csv(_out(args, "validation_summary.csv"), head,
               ["period", "period_label", "family", "percentage", "n_ages", "K"], summary,
               [f"caveat: {reports[0].caveat}" if reports else "caveat:"])


def cmd_report(args, leftover):
    dirs = [args.output_dir] + list(args.inputs or [])
    files = []
    for d in dirs:
        files += sorted(glob.glob(os.path.join(d, "*_rates.csv")))
    files = [f for f in dict.fromkeys(files) if os.path.basename(f) != "truth_rates.csv"]
    if not files:
        raise CliError(EXIT_SCHEMA, "input", "no *_rates.csv files found")
    rows = []
    for f in files:
        with open(f, newline="") as fh:
            reader = csv.DictReader(r for r in fh if not r.startswith("#"))
            if reader.fieldnames != RATE_COLUMNS:
                raise CliError(EXIT_SCHEMA, "schema", f"{f}: not a rates file")
            rows += [[r[c] for c in RATE_COLUMNS] for r in reader]
    # truth first, then methods alphabetically, within rate and period order
    rate_order = {"nmr": 0, "imr": 1, "u5mr": 2}
    rows.sort(key=lambda r: (int(r[1]), rate_order.get(r[3], 9), r[0] != "truth", r[0]))
    _write_csv(_out(args, "report.csv"), f"childsurv version={__version__} command=report "
               f"sources={','.join(os.path.basename(f) for f in files)}", RATE_COLUMNS, rows)


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="childsurv", description="Child survival curves from birth histories")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config")
        p.add_argument("--output-dir", default=".")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        if data:
            p.add_argument("--input")
            p.add_argument("--periods")
            p.add_argument("--heaping-adjust", action="store_true", default=False)
            p.add_argument("--heaping-window", action="append", default=[])
            p.add_argument("--age-grid", choices=("monthly", "fine"))
        return p

    p = common(sub.add_parser("simulate", help="simulate a survey"), data=False)
    p.add_argument("--family", choices=FAMILY_CHOICES)
    p.add_argument("--periods")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("fit", help="parametric pseudo-likelihood fit"))
    p.add_argument("--family", choices=FAMILY_CHOICES)
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("turnbull", help="weighted Turnbull estimate"))
    p.add_argument("--k", type=int)
    p.add_argument("--export-weights", action="store_true", default=False)
    p.set_defaults(func=cmd_turnbull)

    p = common(sub.add_parser("dischaz", help="discrete hazards comparator"))
    p.add_argument("--heaping-groups", action="store_true", default=False)
    p.set_defaults(func=cmd_dischaz)

    p = common(sub.add_parser("svd", help="SVD comparators"))
    p.add_argument("--basis")
    p.add_argument("--n-components", type=int)
    p.add_argument("--q5-female", type=float)
    p.add_argument("--q5-male", type=float)
    p.set_defaults(func=cmd_svd)

    p = common(sub.add_parser("logquad", help="log-quad comparator"))
    p.add_argument("--coefficients")
    p.add_argument("--q5", type=float)
    p.add_argument("--observed")
    p.set_defaults(func=cmd_logquad)

    p = common(sub.add_parser("validate", help="parametric versus Turnbull agreement"))
    p.add_argument("--family", choices=FAMILY_CHOICES)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_validate)

    p = common(sub.add_parser("report", help="merge rate files into one table"), data=False)
    p.add_argument("inputs", nargs="*", help="extra directories holding *_rates.csv files")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None) -> int:
    """Execute a command line; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise CliError(EXIT_USAGE, "usage", "a subcommand is required")
        leftover = _merge_config(args, extra_allowed=("*",) if args.command == "simulate" else ())
        if args.threads is not None and args.threads < 1:
            raise CliError(EXIT_USAGE, "usage", "--threads must be positive")
        if getattr(args, "k", None) is not None and args.k < 0:
            raise CliError(EXIT_USAGE, "usage", "--k must be nonnegative")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args, leftover)
        else:
            args.func(args, leftover)
    except CliError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"childsurv: error code={exc.code} kind={exc.kind} message={msg}", file=sys.stderr)
        return exc.code
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
