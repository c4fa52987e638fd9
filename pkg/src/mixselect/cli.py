"""Command line entry points.

Two subcommands: `analyze` fits one selection engine to a delimited data file
and writes selection tables, coefficient tables, per-exposure response curves
and per-pair surfaces (CSV plus rendered PNG) into an output directory;
`simulate` runs the built-in scenario generators over replicate seeds and
writes replicate, aggregate and failure tables with summary figures.

Exit codes: 0 success, 1 usage error, 2 data problem, 3 numerical failure.
All outputs are deterministic in the arguments, so a rerun into a fresh
directory reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .basis import RawData
from .exceptions import DataError, NumericalError
from .inference import interaction_surface, response_curve
from .plots import save_curve_figure, save_metric_figure, save_surface_figure
from .reports import SCHEMA_VERSION, SelectionReport, Z95
from .sim import METHODS, SCENARIOS, ScenarioSpec, run_experiment, run_method

log = logging.getLogger("mixselect")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _split_names(arg: str) -> list[str]:
    return [part.strip() for part in arg.split(",") if part.strip()]


def _safe(name: str) -> str:
    return re.sub(r"[^\w.-]", "_", name)


def read_table(path: str, outcome_col: str, exposure_cols: list[str],
               covariate_cols: list[str]) -> tuple[RawData, int, int]:
    """Parse a comma or tab delimited file with a header row.

    Rows with a missing or non-numeric value in any used column are dropped;
    the count is logged. Returns (data, n_data_rows, n_dropped).
    """
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read input file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"input file {path} is empty")
    delim = "\t" if lines[0].count("\t") > lines[0].count(",") else ","
    rows = list(csv.reader(lines, delimiter=delim))
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError("input header contains duplicate column names")
    used = [outcome_col] + exposure_cols + covariate_cols
    missing = [c for c in used if c not in header]
    if missing:
        raise DataError(f"columns not found in input: {', '.join(missing)}")
    idx = {c: header.index(c) for c in used}
    kept, dropped = [], 0
    for row in rows[1:]:
        if not row or all(not cell.strip() for cell in row):
            continue
        vals = []
        ok = len(row) == len(header)
        if ok:
            for c in used:
                cell = row[idx[c]].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    ok = False
                    break
            ok = ok and all(np.isfinite(v) for v in vals)
        if ok:
            kept.append(vals)
        else:
            dropped += 1
    if dropped:
        log.info("dropped %d of %d data rows with missing or non-numeric "
                 "values", dropped, dropped + len(kept))
    if not kept:
        raise DataError("no usable rows after dropping incomplete ones")
    arr = np.asarray(kept, dtype=float)
    ne = len(exposure_cols)
    data = RawData(X=arr[:, 1:1 + ne], C=arr[:, 1 + ne:], y=arr[:, 0],
                   exposure_names=tuple(exposure_cols),
                   covariate_names=tuple(covariate_cols))
    return data, len(kept), dropped


def _selection_rows(report: SelectionReport) -> list[list]:
    diag = report.diagnostics
    if report.method == "dbl":
        scores = diag.get("stats", {})
        thr = {"main": diag.get("t0_main"),
               "interaction": diag.get("t0_interaction")}
        score_name = "chi2_stat"
    else:
        scores = diag.get("W", {})
        thr = {"main": diag.get("tau_main"),
               "interaction": diag.get("tau_interaction")}
        score_name = "knockoff_w"
    names = report.transform.exposure_names
    rows = []
    for j in report.selected_mains:
        gid = ("main", j)
        rows.append(["main", names[j - 1], j, "", score_name,
                     scores.get(gid), thr["main"]])
    for a, b in report.selected_pairs:
        gid = ("interaction", a, b)
        rows.append(["interaction", f"{names[a - 1]}:{names[b - 1]}", a, b,
                     score_name, scores.get(gid), thr["interaction"]])
    return rows


def _coefficient_rows(report: SelectionReport) -> list[list]:
    rows = [["intercept", "intercept", "", "", 1, report.intercept, "", "", ""]]
    for name, est, se in zip(report.covariate_names, report.covariate_coef,
                             report.covariate_se):
        rows.append([f"covariate:{name}", "covariate", "", "", 1, est, se,
                     est - Z95 * se, est + Z95 * se])
    for tr in report.term_rows():
        rows.append([tr["group"], tr["kind"], tr["exposure_1"],
                     tr["exposure_2"], tr["term_index"], tr["estimate"],
                     tr["se"], tr["ci_lo"], tr["ci_hi"]])
    return rows


def _analyze_metadata(report: SelectionReport, args, n_rows: int,
                      n_dropped: int) -> list[list]:
    pairs = ";".join(f"{a}-{b}" for a, b in report.selected_pairs)
    mains = ";".join(str(j) for j in report.selected_mains)
    meta = [
        ("schema_version", SCHEMA_VERSION),
        ("command", "analyze"),
        ("method", report.method),
        ("k", report.k),
        ("q", report.q),
        ("seed", report.seed),
        ("offset", args.offset),
        ("split_fraction", args.split_fraction if report.method == "ksplit" else ""),
        ("rule", args.rule),
        ("input", args.input),
        ("outcome_col", args.outcome_col),
        ("exposure_cols", ";".join(report.transform.exposure_names)),
        ("covariate_cols", ";".join(report.covariate_names)),
        ("n_rows_used", n_rows),
        ("n_rows_dropped", n_dropped),
        ("n_fit", report.n_fit),
        ("sigma_hat", report.sigma_hat),
        ("lambda", report.diagnostics.get("lambda")),
        ("intervals_caveat", report.intervals_caveat),
        ("selected_mains", mains),
        ("selected_pairs", pairs),
        ("warnings", " | ".join(report.warnings)),
    ]
    return [list(kv) for kv in meta]


def cmd_analyze(args) -> int:
    exposures = _split_names(args.exposure_cols)
    if not exposures:
        raise DataError("--exposure-cols must name at least one column")
    covariates = _split_names(args.covariate_cols)
    data, n_rows, n_dropped = read_table(args.input, args.outcome_col,
                                         exposures, covariates)
    report = run_method(args.method, data, k=args.k, q=args.q, seed=args.seed,
                        offset=args.offset, split_fraction=args.split_fraction,
                        rule=args.rule)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metadata.csv", ["key", "value"],
               _analyze_metadata(report, args, n_rows, n_dropped))
    _write_csv(out / "selection.csv",
               ["kind", "term", "exposure_1", "exposure_2", "score_name",
                "score", "threshold"],
               _selection_rows(report))
    _write_csv(out / "coefficients.csv",
               ["group", "kind", "exposure_1", "exposure_2", "term_index",
                "estimate", "se", "ci_lo", "ci_hi"],
               _coefficient_rows(report))
    names = report.transform.exposure_names
    for j in report.selected_mains:
        pred = response_curve(report, j)
        name = names[j - 1]
        g = pred.axes["grid"]
        _write_csv(out / f"curve_{_safe(name)}.csv",
                   ["grid_std", "x_raw", "f_hat", "se", "ci_lo", "ci_hi"],
                   zip(g, pred.X[:, j - 1], pred.f_hat, pred.se,
                       pred.ci_lo, pred.ci_hi))
        save_curve_figure(pred, str(out / f"curve_{_safe(name)}.png"), name)
    for a, b in report.selected_pairs:
        pred = interaction_surface(report, (a, b))
        g1, g2 = pred.axes["grid1"], pred.axes["grid2"]
        rows = zip(np.repeat(g1, g2.size), np.tile(g2, g1.size),
                   pred.X[:, a - 1], pred.X[:, b - 1], pred.f_hat, pred.se,
                   pred.ci_lo, pred.ci_hi)
        stem = f"surface_{_safe(names[a - 1])}_{_safe(names[b - 1])}"
        _write_csv(out / f"{stem}.csv",
                   ["grid1_std", "grid2_std", "x1_raw", "x2_raw", "f_hat",
                    "se", "ci_lo", "ci_hi"],
                   rows)
        save_surface_figure(pred, str(out / f"{stem}.png"),
                            names[a - 1], names[b - 1])
    mains_txt = ", ".join(names[j - 1] for j in report.selected_mains) or "none"
    pairs_txt = ", ".join(f"{names[a - 1]}:{names[b - 1]}"
                          for a, b in report.selected_pairs) or "none"
    print(f"method={report.method} n={n_rows} dropped={n_dropped}")
    print(f"selected mains: {mains_txt}")
    print(f"selected interactions: {pairs_txt}")
    if report.intervals_caveat:
        print("note: intervals reuse the selection rows; they are not "
              "selection-adjusted")
    print(f"outputs written to {out}")
    return 0


_REPLICATE_FIELDS = ["fdp", "power", "fdp_int", "power_int", "power_weakest",
                     "mse_f", "coverage95", "o_d", "bound_factor",
                     "n_selected_mains", "n_selected_pairs"]


def _parse_grid(arg: str | None, fallback: int) -> list[int]:
    if not arg:
        return [fallback]
    try:
        vals = [int(v) for v in _split_names(arg)]
    except ValueError as exc:
        raise DataError(f"grid values must be integers: {arg!r}") from exc
    if not vals:
        raise DataError("empty grid argument")
    return vals


def cmd_simulate(args) -> int:
    methods = _split_names(args.method)
    scenarios = [ScenarioSpec(scenario=args.scenario, n=n, p=p,
                              scenario2_typo_fix=args.scenario2_typo_fix)
                 for n in _parse_grid(args.n_grid, args.n)
                 for p in _parse_grid(args.p_grid, args.p)]
    seeds = range(args.seed, args.seed + args.replicates)
    result = run_experiment(scenarios, methods, seeds, k=args.k, q=args.q,
                            offset=args.offset,
                            split_fraction=args.split_fraction, rule=args.rule)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "replicates.csv",
               ["scenario", "n", "p", "method", "seed"] + _REPLICATE_FIELDS,
               ([row[c] for c in ("scenario", "n", "p", "method", "seed")]
                + [row[f] for f in _REPLICATE_FIELDS]
                for row in result.replicates))
    agg_cols = ["scenario", "n", "p", "method", "n_reps", "n_failures"]
    metric_cols = []
    if result.aggregates:
        metric_cols = [c for c in result.aggregates[0] if c not in agg_cols]
    _write_csv(out / "aggregates.csv", agg_cols + metric_cols,
               ([row[c] for c in agg_cols + metric_cols]
                for row in result.aggregates))
    _write_csv(out / "failures.csv", ["scenario", "method", "seed", "error"],
               ([f["scenario"], f["method"], f["seed"], f["error"]]
                for f in result.failures))
    meta = [
        ("schema_version", SCHEMA_VERSION),
        ("command", "simulate"),
        ("scenario", args.scenario),
        ("methods", ";".join(methods)),
        ("k", args.k),
        ("q", args.q),
        ("seed", args.seed),
        ("replicates", args.replicates),
        ("offset", args.offset),
        ("split_fraction", args.split_fraction),
        ("rule", args.rule),
        ("scenario2_typo_fix", args.scenario2_typo_fix),
        ("cells", ";".join(s.label for s in scenarios)),
        ("n_failures", len(result.failures)),
    ]
    _write_csv(out / "metadata.csv", ["key", "value"],
               [list(kv) for kv in meta])
    for metric, ref in (("fdp", args.q), ("power", None), ("fdp_int", args.q),
                        ("power_int", None), ("mse_f", None),
                        ("coverage95", 0.95)):
        save_metric_figure(result.aggregates, metric,
                           str(out / f"metric_{metric}.png"), reference=ref)
    for row in result.aggregates:
        print(f"{row['scenario']} {row['method']}: "
              f"fdr={_fmt(row['fdp_mean'])} power={_fmt(row['power_mean'])} "
              f"fdr_int={_fmt(row['fdp_int_mean'])} "
              f"power_int={_fmt(row['power_int_mean'])} "
              f"reps={row['n_reps']}")
    if result.failures:
        print(f"{len(result.failures)} replicate runs failed; see failures.csv")
    print(f"outputs written to {out}")
    return 0


def _add_common(parser: argparse.ArgumentParser, default_method: str) -> None:
    parser.add_argument("--method", default=default_method,
                        help=f"one of {', '.join(METHODS)}"
                             + (" (comma separated for several)"
                                if "," in default_method else ""))
    parser.add_argument("--k", type=int, default=2,
                        help="basis size per exposure (default 2)")
    parser.add_argument("--q", type=float, default=0.2,
                        help="target FDR level (default 0.2)")
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed (default 0)")
    parser.add_argument("--offset", type=int, choices=(0, 1), default=0,
                        help="knockoff filter offset, 0 or 1 (default 0)")
    parser.add_argument("--split-fraction", type=float, default=0.5,
                        help="selection fraction for ksplit (default 0.5)")
    parser.add_argument("--rule", choices=("min", "1se"), default="min",
                        help="cross-validation rule (default min)")
    parser.add_argument("--out-dir", required=True,
                        help="directory for all outputs (created if absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixselect",
        description="FDR-controlled selection of exposures and pairwise "
                    "interactions in correlated mixtures, with curves and "
                    "surfaces for the selected terms.")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="fit one engine to a delimited file")
    pa.add_argument("--input", required=True,
                    help="CSV or TSV file with a header row")
    pa.add_argument("--outcome-col", required=True)
    pa.add_argument("--exposure-cols", required=True,
                    help="comma separated exposure column names")
    pa.add_argument("--covariate-cols", default="",
                    help="comma separated covariate column names")
    _add_common(pa, default_method="kfull")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="run built-in scenario replicates")
    ps.add_argument("--scenario", required=True, choices=SCENARIOS)
    ps.add_argument("--n", type=int, default=500, help="sample size")
    ps.add_argument("--p", type=int, default=10, help="number of exposures")
    ps.add_argument("--n-grid", default="",
                    help="comma separated sample sizes (overrides --n)")
    ps.add_argument("--p-grid", default="",
                    help="comma separated exposure counts (overrides --p)")
    ps.add_argument("--replicates", type=int, default=100,
                    help="number of replicate seeds (default 100)")
    ps.add_argument("--scenario2-typo-fix", action="store_true",
                    help="use 0.2*x4 for scenario 2's fourth term")
    _add_common(ps, default_method="dbl,kfull,ksplit")
    ps.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        methods = _split_names(args.method)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            log.error("unknown method(s): %s", ", ".join(bad) or "(none)")
            return 1
        if args.command == "analyze" and len(methods) != 1:
            log.error("analyze takes exactly one --method")
            return 1
        return args.func(args)
    except DataError as exc:
        log.error("%s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
