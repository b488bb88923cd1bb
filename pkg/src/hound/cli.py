"""``hound`` command line: run scenarios, analyse logs, plot summaries.

Exit codes: 0 success, 2 configuration error, 3 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hound.config import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_run(args) -> int:
    from hound.harness.experiments import run_scenario
    from hound.harness.outputs import emit_outputs, plot_summary, write_json
    from hound.harness.records import write_csv
    from hound.harness.scenario import Scenario, scenario_mapping

    try:
        sc = Scenario.load(args.scenario)
        if args.workers:
            sc = sc.with_(workers=args.workers)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / sc.name
    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    try:
        if sc.protocol == "model_compare":
            table = run_scenario(sc)
            out.mkdir(parents=True, exist_ok=True)
            table["scenario"] = scenario_mapping(sc)
            table["schema"] = "v1"
            write_json(table, out / "summary.json")
            if "svg" in formats:
                plot_summary(table, out)
        else:
            logs = out / "logs"
            if "csv" in formats:
                logs.mkdir(parents=True, exist_ok=True)

            def stream(rec):
                if "csv" in formats:
                    write_csv(rec.rows, logs / f"{rec.label}.csv")

            batch = run_scenario(sc, keep_rows=False, on_record=stream)
            rest = tuple(f for f in formats if f != "csv")
            if rest:
                emit_outputs(batch, out, rest, scenario=scenario_mapping(sc))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - anything else is a failed run
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    from hound.harness import metrics
    from hound.harness.records import COLUMNS, read_columns, summarize_rows

    import numpy as np

    results = {}
    for name in args.csv:
        try:
            c = read_columns(name)
            entry = metrics.log_summary(c, q=args.percentile)
            if all(k in c for k in COLUMNS):
                rows = np.column_stack([c[k] for k in COLUMNS])
                entry.update(summarize_rows(rows, args.penalty))
        except (OSError, ValueError, KeyError) as exc:
            print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        results[name] = entry
    if args.json:
        from hound.harness.outputs import dumps_json

        sys.stdout.write(dumps_json(results))
        return EXIT_OK
    keys = ("peak_ay", "peak_vx", "rollovers", "delayed_az", "distance_m")
    print("file," + ",".join(keys))
    for name, e in results.items():
        vals = ["" if e[k] is None or e[k] != e[k] else f"{e[k]:.4g}" for k in keys]
        print(name + "," + ",".join(vals))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from hound.harness.outputs import plot_summary

    path = Path(args.summary)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if doc.get("schema") != "v1":
        print(f"error: unsupported summary schema {doc.get('schema')!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = plot_summary(doc, args.out or path.parent, logs_dir=path.parent / "logs")
    except (KeyError, ValueError, OSError) as exc:
        print(f"plot failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hound", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", help="run directory (default runs/<name>)")
    r.add_argument("--formats", default="csv,json,svg")
    r.add_argument("--workers", type=int, default=0)
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("analyze", help="recompute metrics from CSV logs")
    a.add_argument("csv", nargs="+")
    a.add_argument("--penalty", type=float, default=1.0, help="seconds added per rollover")
    a.add_argument("--percentile", type=float, default=99.7)
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("plot", help="SVG plots from a summary.json")
    p.add_argument("summary")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
