"""Command line entry point: ``doekit {build,solve,stress,sweep,report}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import scenario
from .solver import DesignError, InfeasibleDesign

log = logging.getLogger("doekit")

EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 1, 2, 3


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, default=_jsonable)


def write_json(path: Path, doc) -> None:
    path.write_text(dumps(doc) + "\n")


def write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in cols})


def _config(args) -> scenario.ScenarioConfig:
    cfg = scenario.load_config(args.config)
    extra = {}
    if args.seed is not None:
        extra["seed"] = args.seed
    return cfg.with_overrides(extra) if extra else cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def report_tables(report: dict) -> dict[str, list[dict]]:
    """Flat per-figure tables from a solve report."""
    tables = {}
    sol = report.get("solution") or {}
    if sol:
        tables["intervals"] = sol["intervals"]
        center = sol.get("center_kw") or []
        tables["coordinated"] = [{"customer": c, "center_kw": x, "share_plus_kw": s}
                                 for c, x, s in zip(sol["coordinated"], center,
                                                    sol.get("cohort_split_plus_kw") or [None] * len(center))]
    st = report.get("stress")
    if st:
        tables["stress_nodes"] = st["nodes"]
        tables["stress_lines"] = st["lines"]
    return tables


def cmd_build(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    design = scenario.build_design(cfg)
    write_json(out / "feeder.json", design.feeder.to_document())
    design.cs.dump(out / "constraints.json")
    fam, counts = np.unique(design.cs.family(), return_counts=True)
    print(f"{len(design.cs)} rows ({', '.join(f'{f}: {c}' for f, c in zip(fam, counts))}) -> {out}")
    return 0


def cmd_solve(args, stress: bool | None = None) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    stress = (not args.no_stress) if stress is None else stress
    report = scenario.run_solve(cfg, stress=stress)
    write_json(out / "report.json", report)
    for name, rows in report_tables(report).items():
        write_table(out / f"{name}.csv", rows)
    sol, met = report["solution"], report["metrics"]
    print(f"status {sol['status']}  objective {sol['objective']:.6f}  "
          f"aggregate range [{met['aggregate_range']['min_kw']:.2f}, "
          f"{met['aggregate_range']['max_kw']:.2f}] kW")
    if report["flags"]["nominal_problem"]:
        print("nominal problem (no uncertainty, no fairness)")
    if "stress" in report:
        w = report["stress"]["worst"]
        print(f"AC stress: v in [{w['v_min']:.4f}, {w['v_max']:.4f}] pu, "
              f"max loading {w['loading_max']:.3f}")
    print(f"report -> {out / 'report.json'}")
    return 0


def cmd_stress(args) -> int:
    return cmd_solve(args, stress=True)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    res = scenario.run_sweep(cfg, args.axis, jobs=args.jobs)
    write_json(out / f"sweep_{args.axis}.json", res)
    write_table(out / f"sweep_{args.axis}.csv", res["rows"])
    if "summary" in res:
        write_table(out / f"sweep_{args.axis}_summary.csv", res["summary"])
        for row in res["summary"]:
            print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                            for k, v in row.items()))
    failed = sum(r["status"] == "failed" for r in res["rows"])
    print(f"{len(res['rows'])} cells, {failed} failed -> {out}")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    if src.is_dir():
        src = src / "report.json"
    report = json.loads(src.read_text())
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    if "axis" in report:
        write_table(out / f"sweep_{report['axis']}.csv", report["rows"])
        if "summary" in report:
            write_table(out / f"sweep_{report['axis']}_summary.csv", report["summary"])
        print(f"sweep {report['axis']}: {len(report['rows'])} rows -> {out}")
        return 0
    for name, rows in report_tables(report).items():
        write_table(out / f"{name}.csv", rows)
    met = report["metrics"]
    print(f"{report['scenario']}: span {met['aggregate_range']['span_kw']:.2f} kW, "
          f"gini {met.get('gini', float('nan')):.4f}, size {met.get('size_kw', float('nan')):.4f} kW")
    return 0


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="doekit", description="Network-safe operating envelopes")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", default="basecase",
                           help="scenario YAML or bundled name (default: basecase)")
            p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")

    p = sub.add_parser("build", help="feeder -> constraint dump")
    common(p)
    p.set_defaults(func=cmd_build)
    p = sub.add_parser("solve", help="design envelopes for one scenario")
    common(p)
    p.add_argument("--no-stress", action="store_true", help="skip the AC stress test")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("stress", help="solve and run the AC stress test")
    common(p)
    p.set_defaults(func=cmd_stress)
    p = sub.add_parser("sweep", help="coordination, uncertainty or fairness sweep")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(scenario.SWEEPS))
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("report", help="flat tables from a report or sweep document")
    common(p, config=False)
    p.add_argument("--input", required=True, help="report.json, sweep_*.json or a run directory")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except scenario.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleDesign as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DesignError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
