"""Command-line experiment runner.

Two subcommands:

* ``rfim-lab run <config>`` executes one experiment, writes the JSON
  report plus one aggregate CSV row, and prints a summary table.
* ``rfim-lab sweep <config> --grid <file>`` expands a parameter grid,
  runs every point (failures are recorded and do not stop the sweep),
  and writes per-point reports, an aggregate CSV, and a plot-ready
  (x, y, stderr) CSV.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime
failure (including refuted spectral certificates without
``--force-heuristic``, and any failed sweep point).
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .cltlab import (
    CSV_COLUMNS,
    append_csv_row,
    run_clt_experiment,
    write_report,
)
from .config import (
    MODES,
    apply_overrides,
    config_for_point,
    config_from_dict,
    load_grid,
    read_document,
)
from .errors import ConfigError, RfimLabError

PLOT_COLUMNS = ("x", "y", "stderr")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfim-lab",
        description="Experiment runner for quadratic-interaction Gibbs models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("config", help="TOML or JSON experiment config")
    run_p.add_argument("--mode", choices=MODES, help="override the config's mode")
    run_p.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
    run_p.add_argument(
        "--force-heuristic",
        action="store_true",
        help="continue past a refuted spectral-norm certificate",
    )
    run_p.add_argument("--out", help="override the output directory")

    sweep_p = sub.add_parser("sweep", help="run a parameter grid")
    sweep_p.add_argument("config", help="base experiment config")
    sweep_p.add_argument("--grid", required=True, help="grid file ([grid] table of lists)")
    sweep_p.add_argument("--mode", choices=MODES, help="override the config's mode")
    sweep_p.add_argument("--jobs", type=int, help="grid points run in parallel")
    sweep_p.add_argument("--force-heuristic", action="store_true")
    sweep_p.add_argument("--out", help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except RfimLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures keep a stable exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def _cmd_run(args) -> int:
    cfg = load_config_with_flags(args)
    report = run_clt_experiment(cfg, jobs=args.jobs, force_heuristic=args.force_heuristic)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{cfg.tag}.json"
    write_report(report, json_path)
    append_csv_row(out_dir / "results.csv", report.csv_row())
    _print_report_summary(report, json_path)
    return 0


def load_config_with_flags(args):
    from .config import load_config

    return load_config(args.config, overrides={"mode": args.mode, "out_dir": args.out})


def _cmd_sweep(args) -> int:
    base_raw = apply_overrides(
        read_document(args.config), {"mode": args.mode, "out_dir": args.out}
    )
    stem = Path(args.config).stem
    base_cfg = config_from_dict(base_raw, source_name=stem)
    points = load_grid(args.grid)
    out_dir = Path(base_cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid_keys = sorted({key for point in points for key in point})
    x_key = grid_keys[0] if len(grid_keys) == 1 else None

    def run_point(idx):
        point = points[idx]
        try:
            cfg = config_for_point(base_raw, point, source_name=stem)
            report = run_clt_experiment(cfg, jobs=1, force_heuristic=args.force_heuristic)
            return report, None
        except ConfigError as exc:
            return None, "; ".join(exc.errors)
        except Exception as exc:
            return None, f"{type(exc).__name__}: {exc}"

    jobs = args.jobs or 1
    if jobs > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_point, range(len(points))))
    else:
        outcomes = [run_point(i) for i in range(len(points))]

    sweep_csv = out_dir / f"{base_cfg.tag}_sweep.csv"
    plot_csv = out_dir / f"{base_cfg.tag}_plot.csv"
    failures = 0
    with open(sweep_csv, "w", newline="") as agg_fh, open(plot_csv, "w", newline="") as plot_fh:
        agg = csv.DictWriter(agg_fh, fieldnames=list(CSV_COLUMNS), lineterminator="\n")
        agg.writeheader()
        plot = csv.writer(plot_fh, lineterminator="\n")
        plot.writerow(PLOT_COLUMNS)
        for idx, (report, error) in enumerate(outcomes):
            point = points[idx]
            label = ", ".join(f"{k}={point[k]}" for k in sorted(point))
            if error is not None:
                failures += 1
                agg.writerow(_failure_row(point, base_cfg))
                print(f"point {idx:3d}  {label:<32}  FAILED: {error}")
                continue
            write_report(report, out_dir / f"{base_cfg.tag}_point{idx:03d}.json")
            agg.writerow(report.csv_row())
            x_val = point[x_key] if x_key is not None else idx
            y_val, y_se = _headline_metric(report)
            plot.writerow([_plain(x_val), _plain(y_val), _plain(y_se)])
            print(f"point {idx:3d}  {label:<32}  ok  {_headline_text(report)}")
    print(f"sweep: {len(points) - failures}/{len(points)} points succeeded")
    print(f"wrote {sweep_csv} and {plot_csv}")
    return 3 if failures else 0


def _failure_row(point, base_cfg) -> dict:
    row = {key: "" for key in CSV_COLUMNS}
    row["ensemble"] = base_cfg.ensemble.kind
    row["n"] = str(int(point.get("n", base_cfg.ensemble.n)))
    row["theta"] = repr(float(point.get("theta", base_cfg.ensemble.theta)))
    return row


def _headline_metric(report):
    emp = report.empirical or {}
    if report.mode == "quenched":
        return emp.get("ks_quenched"), emp.get("ks_se")
    if report.mode == "annealed":
        return emp.get("ks_annealed"), emp.get("ks_se")
    if report.mode == "lln" and report.lln:
        return report.lln["second_moment"], report.lln["second_moment_se"]
    if report.mode == "contraction" and report.contraction:
        blk = report.contraction
        scale = blk["n_alpha"] or 1.0
        se = blk["mean_sq_se"]
        return blk["mean_sq"] / scale, (se / scale if se is not None else None)
    if report.mode == "norms" and report.norms:
        return report.norms["four_norm_lower"], 0.0
    return None, None


def _headline_text(report) -> str:
    y, _ = _headline_metric(report)
    names = {
        "quenched": "ks_q",
        "annealed": "ks_a",
        "lln": "E[T^2]",
        "contraction": "mean_sq/(n*alpha)",
        "norms": "four_norm_lower",
    }
    if y is None:
        return "no headline metric"
    return f"{names[report.mode]}={y:.6g}"


def _plain(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _print_report_summary(report, json_path) -> None:
    emp = report.empirical or {}
    rows = [
        ("mode", report.mode),
        ("ensemble", report.ensemble_kind),
        ("n", report.n),
        ("theta", report.theta),
        ("seed", report.master_seed),
        ("lambda", report.lam),
        ("upsilon_n", report.upsilon_n),
        ("alpha_n", report.alpha_n),
        ("eps_norm", report.eps_norm),
        ("err_budget", report.err_budget),
        ("pred_var", report.predicted_var),
        ("pred_var_annealed", report.predicted_var_annealed),
        ("emp_mean", emp.get("mean")),
        ("emp_var", emp.get("var")),
        ("ks_quenched", emp.get("ks_quenched")),
        ("ks_annealed", emp.get("ks_annealed")),
        ("samples", report.sample_size),
        ("burn_in_sweeps", report.burn_in_sweeps),
    ]
    if report.norms:
        rows.extend(
            [
                ("two_norm", report.norms["two_norm"]),
                ("four_norm_lower", report.norms["four_norm_lower"]),
                ("inf_norm", report.norms["inf_norm"]),
                ("regime", report.norms["regime"]["moderate"]),
            ]
        )
    if report.lln:
        rows.append(("lln_second_moment", report.lln["second_moment"]))
        rows.append(("lln_bound", report.lln["bound"]))
    if report.contraction:
        rows.append(("contraction_mean_sq", report.contraction["mean_sq"]))
        rows.append(("n_alpha", report.contraction["n_alpha"]))
    print(f"{'metric':<22}  value")
    print(f"{'-' * 22}  {'-' * 22}")
    for name, value in rows:
        print(f"{name:<22}  {_summary_value(value)}")
    for note in report.annotations:
        print(f"note: {note}")
    print(f"report: {json_path}")


def _summary_value(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
