"""Scan reports: JSON/text rendering, schema validation and patch verification."""
from __future__ import annotations

import json
import textwrap
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from importlib import resources

import jsonschema

from . import CWE_SQLI
from .detector import TECHNIQUES, Evidence, Finding, ScanResult, SkippedCheck
from .errors import VerificationError
from .httpengine import Target

SCHEMA_VERSION = 1
TEXT_WIDTH = 100

# Static remediation guidance. Only R1 and R2 are enforced by the testbed's
# patched mode; the rest is documentation.
ADVICE = {
    "R1": ("Input validation",
           "Check every request parameter against the type, length and format the handler expects "
           "and reject anything else before it reaches a query."),
    "R2": ("Parameterized queries",
           "Use prepared statements with bound parameters so user data is always passed as a value "
           "and never becomes part of the SQL text."),
    "R3": ("Least privilege",
           "Connect with a database account that can only perform the operations the application "
           "needs; a read-only page should not hold write or admin rights."),
    "R4": ("Patch management",
           "Keep the web framework, database driver and server software on supported, patched "
           "releases."),
    "R5": ("Web application firewall",
           "Put a WAF with SQL injection rules in front of the application as a second layer, not as "
           "a substitute for fixing the code."),
    "R6": ("Security testing and code review",
           "Include injection tests in regular penetration tests and review data-access code for "
           "string-built queries."),
    "R7": ("Monitoring and logging",
           "Log rejected inputs and database errors centrally and alert on bursts that look like "
           "automated probing."),
    "R8": ("Incident response",
           "Keep a written plan for containing, investigating and disclosing a database breach, "
           "with named owners."),
    "R9": ("Continuous assessment",
           "Re-run scans after every release and review the results against known attack "
           "techniques."),
}


def advice_for(cwe: str) -> tuple[str, ...]:
    return tuple(ADVICE) if cwe == CWE_SQLI else ()


@dataclass(frozen=True)
class TargetEntry:
    target: Target
    reachable: bool = True


@dataclass(frozen=True)
class ScanReport:
    started_at: datetime
    finished_at: datetime
    target_summary: tuple[TargetEntry, ...]
    findings: tuple[Finding, ...] = ()
    skipped_checks: tuple[SkippedCheck, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {self.schema_version}")
        if self.finished_at < self.started_at:
            raise ValueError("finished_at precedes started_at")

    @property
    def exit_status(self) -> int:
        return 2 if self.findings else 0

    @property
    def target_keys(self) -> set[tuple[str, str]]:
        return {e.target.key for e in self.target_summary}

    @classmethod
    def from_scan(cls, result: ScanResult) -> "ScanReport":
        unreachable = {t.key for t in result.unreachable}
        return cls(
            started_at=result.started_at,
            finished_at=result.finished_at,
            target_summary=tuple(TargetEntry(t, t.key not in unreachable) for t in result.targets),
            findings=tuple(result.findings),
            skipped_checks=tuple(result.skipped),
        )


# serialisation

def _ts(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.isoformat(timespec="microseconds")


def _target_dict(t: Target) -> dict:
    return {"url": t.url, "method": t.method, "inject_param": t.inject_param,
            "params": [list(p) for p in t.params], "context_hint": t.context_hint}


def _target_from(d: dict) -> Target:
    return Target(d["url"], d["inject_param"], tuple(tuple(p) for p in d["params"]),
                  d["method"], d["context_hint"])


def _evidence_dict(e: Evidence) -> dict:
    out = {"payload": e.payload, "status": e.status, "body_sha256": e.digest,
           "body_length": e.body_length, "latency_ms": e.latency, "similarity": dict(e.similarity),
           "error_signature": e.error_signature}
    if e.body is not None:
        out["body"] = e.body
    return out


def _evidence_from(d: dict) -> Evidence:
    return Evidence(d["payload"], d["status"], d["body_sha256"], d["body_length"], d["latency_ms"],
                    dict(d["similarity"]), d["error_signature"], d.get("body"))


def _finding_dict(f: Finding) -> dict:
    return {"target": _target_dict(f.target), "technique": f.technique, "cwe": f.cwe,
            "confidence": f.confidence, "dialect_guess": f.dialect_guess, "context": f.context,
            "details": dict(f.details), "evidence": [_evidence_dict(e) for e in f.evidence],
            "advice": list(f.advice)}


def _finding_from(d: dict) -> Finding:
    return Finding(_target_from(d["target"]), d["technique"],
                   tuple(_evidence_from(e) for e in d["evidence"]), d["confidence"],
                   d["dialect_guess"], d["context"], dict(d["details"]), d["cwe"], tuple(d["advice"]))


def to_dict(report: ScanReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "started_at": _ts(report.started_at),
        "finished_at": _ts(report.finished_at),
        "exit_status": report.exit_status,
        "target_summary": [{"target": _target_dict(e.target), "reachable": e.reachable}
                           for e in report.target_summary],
        "findings": [_finding_dict(f) for f in report.findings],
        "skipped_checks": [{"url": s.url, "param": s.param, "technique": s.technique, "reason": s.reason}
                           for s in report.skipped_checks],
        "advice_catalog": {k: {"title": t, "text": x} for k, (t, x) in ADVICE.items()},
    }


def from_dict(data: dict) -> ScanReport:
    validate(data)
    return ScanReport(
        started_at=datetime.fromisoformat(data["started_at"]),
        finished_at=datetime.fromisoformat(data["finished_at"]),
        target_summary=tuple(TargetEntry(_target_from(e["target"]), e["reachable"])
                             for e in data["target_summary"]),
        findings=tuple(_finding_from(f) for f in data["findings"]),
        skipped_checks=tuple(SkippedCheck(**s) for s in data["skipped_checks"]),
        schema_version=data["schema_version"],
    )


@lru_cache(maxsize=1)
def report_schema() -> dict:
    raw = resources.files("sqlforge").joinpath("data/report-v1.schema.json").read_text("utf-8")
    return json.loads(raw)


def validate(data: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``data`` is not a valid v1 report."""
    jsonschema.validate(data, report_schema(), cls=jsonschema.Draft202012Validator)


def render_json(report: ScanReport) -> bytes:
    return (json.dumps(to_dict(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def parse_json(data: bytes | str) -> ScanReport:
    return from_dict(json.loads(data))


def _wrap(text: str, indent: str = "") -> list[str]:
    return textwrap.wrap(text, TEXT_WIDTH, initial_indent=indent, subsequent_indent=indent,
                         break_long_words=True, replace_whitespace=False) or [indent]


def render_text(report: ScanReport) -> bytes:
    lines = [f"sqlforge scan report (schema v{report.schema_version})",
             f"started {_ts(report.started_at)}  finished {_ts(report.finished_at)}", ""]
    lines.append("Targets:")
    for e in report.target_summary:
        state = "" if e.reachable else " (unreachable)"
        lines += _wrap(f"{e.target.method} {e.target.url} param={e.target.inject_param}{state}", "  ")
    lines.append("")
    if not report.findings:
        lines.append("No SQL injection findings.")
    for i, f in enumerate(report.findings, 1):
        head = (f"[{i}] {f.cwe} SQL injection via {f.technique} technique on parameter "
                f"'{f.target.inject_param}' of {f.target.method} {f.target.url} ({f.confidence}")
        head += f", dialect {f.dialect_guess})" if f.dialect_guess else ")"
        lines += _wrap(head)
        for e in f.evidence:
            lines += _wrap(f"payload: {e.payload!r} -> HTTP {e.status}, {e.body_length} bytes, "
                           f"{e.latency:.0f} ms, sha256 {e.digest[:16]}", "    ")
        lines += _wrap("advice: " + ", ".join(f"{a} {ADVICE[a][0]}" for a in f.advice if a in ADVICE), "    ")
        lines.append("")
    if report.skipped_checks:
        lines.append("Skipped checks:")
        for s in report.skipped_checks:
            lines += _wrap(f"{s.technique} on {s.url} [{s.param}]: {s.reason}", "  ")
        lines.append("")
    if report.findings:
        lines.append("Remediation advice:")
        for key, (title, text) in ADVICE.items():
            lines += _wrap(f"{key} {title}: {text}", "  ")
    return ("\n".join(lines).rstrip() + "\n").encode("utf-8")


def render_report(report: ScanReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return render_json(report)
    if fmt == "text":
        return render_text(report)
    raise ValueError(f"unknown report format {fmt!r}")


# verification

class VerdictStatus(str, Enum):
    REMEDIATED = "REMEDIATED"
    NOT_REMEDIATED = "NOT_REMEDIATED"
    NOTHING_TO_VERIFY = "NOTHING_TO_VERIFY"


@dataclass(frozen=True)
class VerificationVerdict:
    status: VerdictStatus
    resolved: tuple[Finding, ...] = ()
    persisting: tuple[Finding, ...] = ()
    new_findings: tuple[Finding, ...] = field(default=())

    def summary(self) -> str:
        def keys(fs):
            return ", ".join(f"{f.target.inject_param}@{f.target.url}/{f.technique}" for f in fs) or "-"
        return (f"{self.status.value}\n  resolved: {keys(self.resolved)}\n"
                f"  persisting: {keys(self.persisting)}\n  new: {keys(self.new_findings)}")


def verify_patch(baseline: ScanReport, rescan: ScanReport) -> VerificationVerdict:
    """Compare findings of a pre-fix and a post-fix scan of the same targets."""
    if baseline.target_keys != rescan.target_keys:
        raise VerificationError("baseline and rescan cover different targets")
    before = {f.key: f for f in baseline.findings}
    after = {f.key: f for f in rescan.findings}
    order = lambda f: (f.target.url, f.target.inject_param, TECHNIQUES.index(f.technique))  # noqa: E731
    resolved = tuple(sorted((f for k, f in before.items() if k not in after), key=order))
    persisting = tuple(sorted((f for k, f in after.items() if k in before), key=order))
    new = tuple(sorted((f for k, f in after.items() if k not in before), key=order))
    if not before:
        status = VerdictStatus.NOTHING_TO_VERIFY if not new else VerdictStatus.NOT_REMEDIATED
    elif resolved and not persisting and not new:
        status = VerdictStatus.REMEDIATED
    else:
        status = VerdictStatus.NOT_REMEDIATED
    return VerificationVerdict(status, resolved, persisting, new)
