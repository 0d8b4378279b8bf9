"""Command-line front end.

    robotledger run --scenario two_tasks.yaml --out results/ [--gating off] [--seed 3]
    robotledger issue Org1 salma turtlebot4,husky,optitrack
    robotledger bench --profile 50 --profile 100/2:off --out bench/
    robotledger inspect-blocks results/blocks.log

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .bench import DEFAULT_PROFILES, run_bench
from .errors import ValidationError
from .identity import create_ca, issue_certificate
from .ledger import read_block_log
from .scenario import ScenarioError, load_scenario, two_task_scenario
from .simulation import run_scenario

WORKSPACE_ENV = "ROBOTLEDGER_WORKSPACE"
EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2

logger = logging.getLogger("robotledger")


def workspace() -> Path:
    return Path(os.environ.get(WORKSPACE_ENV, "workspace"))


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def cmd_run(args) -> int:
    from .report import write_run_outputs

    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        print(f"error: {args.scenario}:", file=sys.stderr)
        for line in exc.errors:
            print(f"  {line}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        scenario = scenario.replace(seed=args.seed)
    if args.gating is not None:
        scenario = scenario.replace(gating=args.gating)
    out = Path(args.out) if args.out else workspace() / "run"
    try:
        result = run_scenario(scenario)
        paths = write_run_outputs(scenario, result, out, figures=not args.no_figures)
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write((out / "summary.txt").read_text())
    logger.info("wrote %s", ", ".join(p.name for p in paths))
    return EXIT_OK


def cmd_issue(args) -> int:
    if args.scenario:
        try:
            scenario = load_scenario(args.scenario)
        except (OSError, ScenarioError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    else:
        scenario = two_task_scenario()
    seed = args.seed if args.seed is not None else scenario.seed
    orgs = [o.name for o in scenario.organizations]
    if args.org not in orgs:
        print(f"error: unknown organization {args.org!r} (known: {', '.join(orgs)})", file=sys.stderr)
        return EXIT_INVALID
    attrs = [a.strip() for a in args.attributes.split(",") if a.strip()] if args.attributes else []
    ca = create_ca(args.org, seed=seed)
    try:
        cert = issue_certificate(ca, args.subject, attrs)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out) if args.out else workspace()
    (out / "certs").mkdir(parents=True, exist_ok=True)
    (out / "cas").mkdir(parents=True, exist_ok=True)
    (out / "cas" / f"{args.org}.pub").write_text(ca.verification_key.hex() + "\n")
    cert_path = out / "certs" / f"{args.subject}.cert"
    cert_path.write_bytes(cert.to_bytes())
    (out / "certs" / f"{args.subject}.txt").write_text(cert.to_text())
    print(cert_path)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .report import plot_bench, write_bench_csv

    ledger_cfg = None
    seed = args.seed or 0
    if args.scenario:
        try:
            sc = load_scenario(args.scenario)
        except (OSError, ScenarioError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        ledger_cfg = sc.ledger
        seed = args.seed if args.seed is not None else sc.seed
    try:
        rows = run_bench(args.profile or list(DEFAULT_PROFILES), args.duration, seed, ledger_cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out) if args.out else workspace() / "bench"
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "bench.csv")
    if not args.no_figures:
        plot_bench(rows, out / "bench.png")
    sys.stdout.write((out / "bench.csv").read_text())
    return EXIT_OK


def cmd_inspect_blocks(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "blocks.log"
    try:
        with open(path) as fh:
            records = read_block_log(fh)
    except (OSError, ValidationError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    heights = {r.get("block") for r in records}
    print(f"blocks: {len(heights)}  transactions: {len(records)}")
    for (fn, status), n in sorted(Counter((r["function"], r["status"]) for r in records).items()):
        print(f"  {fn:<10} {status:<12} {n}")
    if args.status or args.tx:
        for r in records:
            if args.status and r["status"] != args.status:
                continue
            print(f"{r['block']:>6} {r['tx_id']} {r['function']:<8} {r['submitter']:<18} {r['status']:<12} "
                  f"{r['submit_ms']:>12} {r['commit_ms']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robotledger", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write metrics, block log, summary and figures")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--gating", type=_on_off, help="on|off; overrides the scenario file")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("issue", help="issue an attribute certificate")
    i.add_argument("org")
    i.add_argument("subject")
    i.add_argument("attributes", nargs="?", default="", help="comma-separated attribute names")
    i.add_argument("--scenario", help="take organizations and seed from this scenario")
    i.add_argument("--seed", type=int)
    i.add_argument("--out")
    i.set_defaults(func=cmd_issue)

    b = sub.add_parser("bench", help="sweep offered publish rates")
    b.add_argument("--profile", action="append", help="RATE[/PUBLISHERS][:on|off]; repeatable")
    b.add_argument("--duration", type=float, default=30.0, help="seconds of offered load per row")
    b.add_argument("--scenario", help="take ledger parameters and seed from this scenario")
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_bench)

    k = sub.add_parser("inspect-blocks", help="summarize a blocks.log")
    k.add_argument("path")
    k.add_argument("--status", choices=["committed", "invalidated"])
    k.add_argument("--tx", action="store_true", help="list every transaction")
    k.set_defaults(func=cmd_inspect_blocks)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
