"""Command-line entry point: testbed, recon, scan, exploit, verify.

Exit status: 0 when a command completes with no findings, 2 when it completes
with at least one finding, 1 on any operational or usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema

from . import __version__
from .detector import TECHNIQUES, CONFIRMED, ScanConfig, scan
from .dialects import load_dialects
from .errors import SqlforgeError
from .exploiter import DEFAULT_LIMIT, Exploiter
from .httpengine import HttpEngine, Target, default_timeout_ms
from .recon import DEFAULT_TIMEOUT_MS as RECON_TIMEOUT_MS, DEFAULT_WIDTH, parse_ports, probe_ports
from .report import ScanReport, parse_json, render_report, verify_patch

log = logging.getLogger("sqlforge")

EXIT_CLEAN, EXIT_ERROR, EXIT_FINDINGS = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _techniques(value: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in value.split(",") if v.strip())
    bad = [n for n in names if n not in TECHNIQUES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"techniques must be drawn from {','.join(TECHNIQUES)}")
    return names


def _pair(value: str) -> tuple[str, str]:
    name, sep, val = value.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {value!r}")
    return name, val


def _add_target_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("target")
    g.add_argument("--url", help="target URL, optionally with its query string")
    g.add_argument("--param", action="append", help="parameter to inject (repeatable)")
    g.add_argument("--value", help="benign value for the injected parameter (default: from URL or 1)")
    g.add_argument("--method", choices=["GET", "POST"], default="GET")
    g.add_argument("--data", action="append", type=_pair, default=None, metavar="NAME=VALUE",
                   help="form field for POST targets (repeatable)")
    g.add_argument("--context", choices=["numeric", "single_quoted", "unknown"], default=None,
                   help="injection context hint")


def _add_http_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("http")
    g.add_argument("--timeout-ms", type=int, default=None,
                   help="request timeout (default 10000, or $SQLFORGE_TIMEOUT_MS)")
    g.add_argument("--max-in-flight", type=int, default=4, help="concurrent requests per host")
    g.add_argument("--delay-ms", type=float, default=0.0, help="fixed delay between requests to a host")
    g.add_argument("--dialects", metavar="PATH", help="JSON file of extra/overriding dialects")


def _add_scan_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("scan")
    g.add_argument("--technique", type=_techniques, default=TECHNIQUES,
                   help="comma list from boolean,error,union,time (default: all)")
    g.add_argument("--fast", action="store_true", help="one probe round; findings are tentative")
    g.add_argument("--time-delay", type=float, default=2.0, help="seconds for time-based probes")
    g.add_argument("--seed", type=int, default=None, help="seed for markers and probe values")
    g.add_argument("--evidence-bodies", action="store_true", help="embed response bodies in evidence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sqlforge", description="SQL injection testbed, scanner and verifier.")
    parser.add_argument("--version", action="version", version=f"sqlforge {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--config", metavar="PATH", help="JSON file pre-populating any flag")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    tb = sub.add_parser("testbed", help="host the bundled vulnerable web service")
    tbsub = tb.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    serve = tbsub.add_parser("serve", help="serve until interrupted")
    serve.add_argument("--mode", choices=["vulnerable", "patched"], default="vulnerable")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--seed-profile", default="ecom-v1")
    serve.add_argument("--greybox", action="store_true", help="announce the SQL dialect in a header")

    rc = sub.add_parser("recon", help="TCP connect probe of a port list")
    rc.add_argument("--host", required=False)
    rc.add_argument("--ports", default="80,3306", help="comma list and ranges, e.g. 80,3306,8000-8010")
    rc.add_argument("--timeout-ms", type=float, default=RECON_TIMEOUT_MS)
    rc.add_argument("--width", type=int, default=DEFAULT_WIDTH, help="parallel probes")
    rc.add_argument("--json", action="store_true")

    sc = sub.add_parser("scan", help="detect SQL injection in the given parameters")
    _add_target_args(sc)
    _add_http_args(sc)
    _add_scan_args(sc)
    sc.add_argument("--report", metavar="PATH", help="write the report here (default stdout)")
    sc.add_argument("--format", choices=["json", "text"], default="json")

    ex = sub.add_parser("exploit", help="enumerate the schema or dump a table")
    exsub = ex.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    for name, help_ in (("enumerate", "list database, tables and columns"), ("dump", "dump one table")):
        p = exsub.add_parser(name, help=help_)
        _add_target_args(p)
        _add_http_args(p)
        p.add_argument("--from-report", metavar="PATH", help="reuse a confirmed finding from a scan report")
        p.add_argument("--force", action="store_true", help="skip the confirmed-finding requirement")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output", metavar="PATH", help="write output here (default stdout)")
        if name == "dump":
            p.add_argument("--table", required=False)
            p.add_argument("--limit", type=int, default=DEFAULT_LIMIT)
            p.add_argument("--format", choices=["json", "csv"], default="json")
            p.add_argument("--channel", choices=["union", "blind"], default="union")

    vf = sub.add_parser("verify", help="rescan a baseline report's targets and compare")
    vf.add_argument("--baseline", required=False, metavar="PATH")
    vf.add_argument("--rescan", metavar="PATH", help="compare against this report instead of scanning")
    vf.add_argument("--report", metavar="PATH", help="write the rescan report here")
    _add_http_args(vf)
    _add_scan_args(vf)
    return parser


def _subparsers(parser: argparse.ArgumentParser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _subparsers(child)


def _parse(argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            cfg = json.loads(Path(known.config).read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        if "technique" in cfg and isinstance(cfg["technique"], str):
            cfg["technique"] = _techniques(cfg["technique"])
        if "param" in cfg and isinstance(cfg["param"], str):
            cfg["param"] = [cfg["param"]]
        if "data" in cfg and isinstance(cfg["data"], dict):
            cfg["data"] = list(cfg["data"].items())
        for p in _subparsers(parser):
            dests = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
    return parser.parse_args(argv)


# helpers

def _engine(args, dialects) -> HttpEngine:
    timeout = args.timeout_ms if args.timeout_ms is not None else default_timeout_ms()
    return HttpEngine(dialects.values(), timeout_ms=timeout, max_in_flight=args.max_in_flight,
                      delay_ms=args.delay_ms)


def _targets(args) -> list[Target]:
    if not args.url:
        raise UsageError("--url is required")
    if not args.param:
        raise UsageError("--param is required")
    return [Target.from_url(args.url, p, args.value, args.method, args.data or (), args.context)
            for p in args.param]


def _scan_config(args, dialects) -> ScanConfig:
    return ScanConfig(techniques=tuple(args.technique), fast=args.fast, time_delay=args.time_delay,
                      seed=args.seed, dialects=dialects, evidence_bodies=args.evidence_bodies)


def _write(data: bytes, path: str | None):
    if path:
        Path(path).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


# commands

def cmd_testbed(args) -> int:
    from .testbed import TestbedConfig, start_testbed

    if args.action != "serve":
        raise UsageError("usage: sqlforge testbed serve [options]")
    config = TestbedConfig(args.mode, args.port, args.seed_profile, greybox=args.greybox, host=args.host)
    tb = start_testbed(config)
    print(f"testbed ({config.mode.value}) listening on {tb.base_url}", file=sys.stderr)
    try:
        tb.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        tb.shutdown()
    return EXIT_CLEAN


def cmd_recon(args) -> int:
    if not args.host:
        raise UsageError("--host is required")
    try:
        ports = parse_ports(args.ports)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = probe_ports(args.host, ports, args.timeout_ms, args.width)
    if args.json:
        print(json.dumps([r.as_dict() for r in results], indent=2))
    else:
        for r in results:
            print(r.line())
    return EXIT_CLEAN


def cmd_scan(args) -> int:
    dialects = load_dialects(args.dialects)
    result = scan(_targets(args), _scan_config(args, dialects), _engine(args, dialects))
    report = ScanReport.from_scan(result)
    _write(render_report(report, args.format), args.report)
    return report.exit_status


def _prior_finding(args, target: Target, engine: HttpEngine, dialects, prefer: tuple[str, ...]):
    if args.from_report:
        report = parse_json(Path(args.from_report).read_bytes())
        candidates = [f for f in report.findings if f.target.key == target.key and f.confidence == CONFIRMED]
    else:
        log.info("no report given; running detection first")
        config = ScanConfig(techniques=("boolean", "error", "union"), seed=args.seed, dialects=dialects)
        candidates = [f for f in scan([target], config, engine).findings if f.confidence == CONFIRMED]
    if not candidates:
        return None
    rank = {t: i for i, t in enumerate(prefer)}
    candidates.sort(key=lambda f: rank.get(f.technique, len(rank)))
    best = candidates[0]
    guess = next((f.dialect_guess for f in candidates if f.dialect_guess), None)
    if guess and not best.dialect_guess:
        best = replace(best, dialect_guess=guess)
    return best


def cmd_exploit(args) -> int:
    if args.action not in ("enumerate", "dump"):
        raise UsageError("usage: sqlforge exploit {enumerate,dump} [options]")
    dialects = load_dialects(args.dialects)
    targets = _targets(args)
    if len(targets) != 1:
        raise UsageError("exploit takes exactly one --param")
    target = targets[0]
    engine = _engine(args, dialects)
    blind = getattr(args, "channel", "union") == "blind"
    prefer = ("boolean", "union", "error") if blind else ("union", "boolean", "error")
    finding = _prior_finding(args, target, engine, dialects, prefer)
    if finding is None and not args.force:
        print("sqlforge: refusing to exploit without a confirmed finding (use --force to override)",
              file=sys.stderr)
        return EXIT_ERROR
    ex = Exploiter(engine, target, finding, dialects, force=args.force, seed=args.seed)
    if args.action == "enumerate":
        schema = ex.enumerate_schema()
        doc = {"database": schema.database_name, "complete": schema.complete,
               "tables": {name: list(cols) for name, cols in schema.tables}}
        _write((json.dumps(doc, indent=2) + "\n").encode("utf-8"), args.output)
        return EXIT_FINDINGS
    if not args.table:
        raise UsageError("--table is required for dump")
    dump = ex.dump_table_blind(args.table, args.limit) if blind else ex.dump_table(args.table, args.limit)
    if dump.partial:
        print(f"sqlforge: warning: dump of {dump.table} is partial", file=sys.stderr)
    if dump.truncated:
        print(f"sqlforge: note: row limit {args.limit} reached", file=sys.stderr)
    if args.format == "csv":
        buf = io.StringIO(newline="")
        writer = csv.writer(buf)
        writer.writerow(dump.columns)
        writer.writerows(dump.rows)
        data = buf.getvalue().encode("utf-8")
    else:
        data = (json.dumps(dump.as_dicts(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    _write(data, args.output)
    return EXIT_FINDINGS


def cmd_verify(args) -> int:
    if not args.baseline:
        raise UsageError("--baseline is required")
    baseline = parse_json(Path(args.baseline).read_bytes())
    if args.rescan:
        rescan = parse_json(Path(args.rescan).read_bytes())
    else:
        dialects = load_dialects(args.dialects)
        targets = [e.target for e in baseline.target_summary]
        result = scan(targets, _scan_config(args, dialects), _engine(args, dialects))
        rescan = ScanReport.from_scan(result)
        if args.report:
            _write(render_report(rescan, "json"), args.report)
    verdict = verify_patch(baseline, rescan)
    print(verdict.summary())
    return rescan.exit_status


COMMANDS = {"testbed": cmd_testbed, "recon": cmd_recon, "scan": cmd_scan,
            "exploit": cmd_exploit, "verify": cmd_verify}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"sqlforge: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        build_parser().print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sqlforge: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SqlforgeError, ValueError, OSError, jsonschema.ValidationError) as exc:
        print(f"sqlforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
