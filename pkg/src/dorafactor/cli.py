"""``dorafactor run`` and ``dorafactor plot-data``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .bench import PLOT_TARGETS, SchemaError, dumps, plot_rows, run_suite
from .config import DTYPES, SHAPE_SETS, SUITES, resolve

FORCE_CHOICES = ("on", "off", "auto")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dorafactor", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a correctness suite and write a JSON artifact")
    # Defaults are None so the environment can fill in whatever is not given.
    r.add_argument("--suite", choices=SUITES)
    r.add_argument("--shapes", choices=SHAPE_SETS)
    r.add_argument("--rank", type=int)
    r.add_argument("--dtype", choices=DTYPES)
    r.add_argument("--repeats", type=int, help="timed runs per kernel (default 20)")
    r.add_argument("--warmup", type=int, help="discarded runs before timing (default 3)")
    r.add_argument("--seed", type=int)
    r.add_argument("--json-out", help="artifact path; stdout when omitted")
    r.add_argument("--fused", choices=FORCE_CHOICES)
    r.add_argument("--fused-backward", choices=FORCE_CHOICES)
    r.add_argument("--norm-chunk-mb", type=int, help="norm chunk budget in MiB (default 256)")
    r.add_argument("--parallel", type=int, help="worker processes for independent cases")

    pd = sub.add_parser("plot-data", help="flatten an artifact into CSV")
    pd.add_argument("artifact")
    pd.add_argument("--target", required=True, choices=tuple(PLOT_TARGETS))
    pd.add_argument("--out", help="CSV path; stdout when omitted")
    return p


def _cmd_run(args) -> int:
    cli = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        cfg = resolve(cli)
        if cfg.suite is None:
            raise ValueError("--suite is required (or set DORAFACTOR_SUITE)")
        artifact = run_suite(cfg)
    except ValueError as exc:
        print(f"dorafactor: {exc}", file=sys.stderr)
        return 2
    text = dumps(artifact)
    if cfg.json_out:
        try:
            with open(cfg.json_out, "w") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"dorafactor: cannot write {cfg.json_out}: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.write(text)
    s = artifact["summary"]
    print(f"{cfg.suite}: {s['passed']}/{s['cases']} cases passed", file=sys.stderr)
    for c in artifact["cases"]:
        if not c["passed"]:
            print(f"  FAIL {c['id']}", file=sys.stderr)
    return 0 if s["all_passed"] else 1


def _cmd_plot(args) -> int:
    try:
        with open(args.artifact) as fh:
            artifact = json.load(fh)
        header, rows = plot_rows(artifact, args.target)
    except (OSError, json.JSONDecodeError, SchemaError) as exc:
        print(f"dorafactor: {exc}", file=sys.stderr)
        return 2
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_plot(args)


if __name__ == "__main__":
    sys.exit(main())
