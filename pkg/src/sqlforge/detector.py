"""Scan logic: four detection techniques, confirmation policy, CWE-89 tagging."""
from __future__ import annotations

import hashlib
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Sequence

from . import CWE_SQLI
from .dialects import DIALECT_HEADER, SqlDialect, builtin_dialects
from .errors import InconclusiveError, ScanError, TransportError, UnsupportedTechnique
from .httpengine import BaselineProfile, HttpEngine, ResponseSummary, Target, with_param
from .payloads import (InjectionContext, Quoting, boolean_pair, error_probe, new_marker,
                       time_probe, union_payload)
from .similarity import similarity

log = logging.getLogger(__name__)

TECHNIQUES = ("boolean", "error", "union", "time")
THETA_SAME = 0.98
THETA_DIFF = 0.90
CONFIRMED = "confirmed"
TENTATIVE = "tentative"
ADVICE_IDS = tuple(f"R{i}" for i in range(1, 10))


@dataclass(frozen=True)
class Evidence:
    payload: str
    status: int
    digest: str
    body_length: int
    latency: float
    similarity: dict = field(default_factory=dict)
    error_signature: str | None = None
    body: str | None = None

    @classmethod
    def of(cls, payload: str, resp: ResponseSummary, keep_body: bool = False, **scores) -> "Evidence":
        return cls(payload, resp.status, normalized_digest(resp), resp.body_length,
                   round(resp.latency, 3), {k: round(v, 6) for k, v in scores.items()},
                   resp.error_signature, resp.body if keep_body else None)


def normalized_digest(resp: ResponseSummary) -> str:
    """SHA-256 of the response body after dynamic-region stripping."""
    return hashlib.sha256("\n".join(resp.body_tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Finding:
    target: Target
    technique: str
    evidence: tuple[Evidence, ...]
    confidence: str = CONFIRMED
    dialect_guess: str | None = None
    context: str | None = None
    details: dict = field(default_factory=dict)
    cwe: str = CWE_SQLI
    advice: tuple[str, ...] = ADVICE_IDS

    def __post_init__(self):
        if self.cwe != CWE_SQLI:
            raise ValueError("every finding is CWE-89")
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if self.confidence not in (CONFIRMED, TENTATIVE):
            raise ValueError(f"bad confidence {self.confidence!r}")
        if not self.evidence:
            raise ValueError("a finding needs evidence")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.target.url, self.target.inject_param, self.technique)


@dataclass(frozen=True)
class SkippedCheck:
    url: str
    param: str
    technique: str
    reason: str


@dataclass
class ScanConfig:
    techniques: tuple[str, ...] = TECHNIQUES
    fast: bool = False
    theta_same: float = THETA_SAME
    theta_diff: float = THETA_DIFF
    baseline_samples: int = 3
    time_delay: float = 2.0
    seed: int | None = None
    dialects: dict[str, SqlDialect] = field(default_factory=builtin_dialects)
    workers: int = 4
    comment_style: str = "dash_dash"
    evidence_bodies: bool = False

    def __post_init__(self):
        unknown = set(self.techniques) - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"unknown techniques {sorted(unknown)}")
        if not self.theta_diff < self.theta_same:
            raise ValueError("theta_diff must be below theta_same")
        if not self.dialects:
            raise ValueError("at least one dialect is required")

    @property
    def rounds(self) -> int:
        return 1 if self.fast else 2


_SIGNAL, _NONE, _BAND = "signal", "none", "band"


def _contexts(target: Target) -> list[Quoting]:
    if target.context_hint == "numeric":
        return [Quoting.NUMERIC]
    if target.context_hint == "single_quoted":
        return [Quoting.SINGLE_QUOTED]
    return [Quoting.NUMERIC, Quoting.SINGLE_QUOTED]


def new_signature(resp: ResponseSummary, baseline_body: str, dialects) -> tuple[str, str] | None:
    """A dialect error signature present in ``resp`` but not in the baseline page."""
    for d in dialects:
        for sig in d.error_signatures:
            if sig in resp.body and sig not in baseline_body:
                return d.name, sig
    return None


class Detector:
    def __init__(self, engine: HttpEngine, config: ScanConfig | None = None):
        self.engine = engine
        self.config = config or ScanConfig()
        self.rng = random.Random(self.config.seed) if self.config.seed is not None else random.SystemRandom()
        self.skipped: list[SkippedCheck] = []
        self.dialect_hint: dict[tuple[str, str], str] = {}

    # helpers

    def _skip(self, target: Target, technique: str, reason: str):
        log.info("skipped %s on %s[%s]: %s", technique, target.url, target.inject_param, reason)
        self.skipped.append(SkippedCheck(target.url, target.inject_param, technique, reason))

    def dialect_for(self, target: Target) -> SqlDialect:
        name = self.dialect_hint.get(target.key)
        if name in self.config.dialects:
            return self.config.dialects[name]
        for d in self.config.dialects.values():
            if self.config.comment_style in d.comment_styles:
                return d
        return next(iter(self.config.dialects.values()))

    def context(self, target: Target, quoting: Quoting, dialect: SqlDialect | None = None) -> InjectionContext:
        dialect = dialect or self.dialect_for(target)
        style = self.config.comment_style if self.config.comment_style in dialect.comment_styles \
            else dialect.comment_styles[0]
        return InjectionContext(quoting, dialect, style)

    def send(self, target: Target, value: str) -> ResponseSummary:
        return self.engine.send_request(with_param(target, value))

    def sim(self, a: ResponseSummary, b: ResponseSummary) -> float:
        return similarity(a.body_tokens, b.body_tokens)

    def _evidence(self, payload, resp, **scores) -> Evidence:
        return Evidence.of(payload, resp, self.config.evidence_bodies, **scores)

    def observe_baseline(self, target: Target, baseline: BaselineProfile):
        # grey-box: the service may volunteer its dialect
        announced = baseline.reference.headers.get(DIALECT_HEADER)
        if announced and announced in self.config.dialects:
            self.dialect_hint[target.key] = announced

    # boolean

    def _classify(self, sims: tuple[float, float, float]) -> str:
        s_bt, s_bf, s_tf = sims
        same, diff = self.config.theta_same, self.config.theta_diff
        if s_bt <= diff or s_bf >= same or s_tf >= same:
            return _NONE
        if s_bt >= same and s_bf <= diff and s_tf <= diff:
            return _SIGNAL
        return _BAND

    def _boolean_round(self, target, baseline, ctx, k):
        truthy, falsy = boolean_pair(ctx, target.base_value, k)
        t = self.send(target, truthy.text)
        f = self.send(target, falsy.text)
        ref = baseline.reference
        sims = (self.sim(ref, t), self.sim(ref, f), self.sim(t, f))
        verdict = self._classify(sims)
        evidence = (
            self._evidence(truthy.text, t, baseline=sims[0], counterpart=sims[2]),
            self._evidence(falsy.text, f, baseline=sims[1], counterpart=sims[2]),
        )
        return verdict, evidence

    def detect_boolean(self, target: Target, baseline: BaselineProfile) -> Finding | None:
        if baseline.stability < self.config.theta_same:
            raise InconclusiveError(f"unstable baseline (stability {baseline.stability:.3f})")
        rounds = self.config.rounds
        for quoting in _contexts(target):
            ctx = self.context(target, quoting)
            ks = [1] + self.rng.sample(range(2, 10000), rounds - 1)
            evidence: list[Evidence] = []
            for k in ks:
                verdict, ev = self._boolean_round(target, baseline, ctx, k)
                if verdict == _BAND:
                    verdict, ev = self._boolean_round(target, baseline, ctx, k)
                    if verdict == _BAND:
                        self._skip(target, "boolean", f"inconclusive similarity band ({quoting.value})")
                if verdict != _SIGNAL:
                    break
                evidence.extend(ev)
            else:
                return Finding(target, "boolean", tuple(evidence),
                               CONFIRMED if rounds >= 2 else TENTATIVE,
                               self.dialect_hint.get(target.key), quoting.value)
        return None

    # error

    def detect_error(self, target: Target, baseline: BaselineProfile) -> Finding | None:
        need = self.config.rounds
        dialects = list(self.config.dialects.values())
        best: Finding | None = None
        tried: set[str] = set()
        for quoting in _contexts(target):
            ctx = self.context(target, quoting)
            evidence: list[Evidence] = []
            guess = None
            for variant in range(3):
                probe = error_probe(ctx, variant)
                if probe.text in tried:
                    continue
                tried.add(probe.text)
                resp = self.send(target, probe.text)
                hit = new_signature(resp, baseline.reference.body, dialects)
                if hit is None:
                    continue
                guess = guess or hit[0]
                evidence.append(self._evidence(probe.text, resp))
                if len(evidence) >= need:
                    break
            if evidence:
                confirmed = len(evidence) >= 2
                found = Finding(target, "error", tuple(evidence), CONFIRMED if confirmed else TENTATIVE,
                                guess, quoting.value)
                if confirmed:
                    return found
                best = best or found
        return best

    # union

    def detect_union(self, target: Target, baseline: BaselineProfile) -> Finding | None:
        from .exploiter import find_column_count, find_marker_column
        from .errors import ExploitError

        for quoting in _contexts(target):
            ctx = self.context(target, quoting)
            _, falsy = boolean_pair(ctx, target.base_value)
            falsy_ref = self.send(target, falsy.text)
            try:
                n = find_column_count(self.engine, target, ctx, falsy_ref, self.config.theta_same)
                col = find_marker_column(self.engine, target, ctx, n, self.rng)
            except ExploitError:
                continue
            evidence = []
            for _ in range(self.config.rounds):
                marker = new_marker(self.rng)
                spec = union_payload(ctx, n, marker, col)
                resp = self.send(target, spec.text)
                if marker not in resp.body:
                    break
                evidence.append(self._evidence(spec.text, resp))
            else:
                return Finding(target, "union", tuple(evidence),
                               CONFIRMED if len(evidence) >= 2 else TENTATIVE,
                               self.dialect_hint.get(target.key), quoting.value,
                               {"columns": n, "marker_column": col})
        return None

    # time

    def detect_time(self, target: Target, baseline: BaselineProfile) -> Finding | None:
        d = self.config.time_delay
        hinted = self.dialect_hint.get(target.key)
        candidates = [self.config.dialects[hinted]] if hinted in self.config.dialects \
            else list(self.config.dialects.values())
        candidates = [c for c in candidates if c.supports_delay]
        if not candidates:
            raise UnsupportedTechnique("no configured dialect has a delay primitive")
        if baseline.latency_mad > 0.5 * d * 1000:
            raise InconclusiveError(f"baseline latency too noisy (MAD {baseline.latency_mad:.0f} ms)")
        positive_at = baseline.latency_median + 0.8 * d * 1000
        control_below = baseline.latency_median + 0.2 * d * 1000
        seen: set[str] = set()
        with self.engine.exclusive(target.host):
            for quoting in _contexts(target):
                for dialect in candidates:
                    ctx = self.context(target, quoting, dialect)
                    probe = time_probe(ctx, d, target.base_value)
                    if probe.text in seen:
                        continue
                    seen.add(probe.text)
                    evidence = []
                    for _ in range(self.config.rounds):
                        resp = self.send(target, probe.text)
                        if resp.latency < positive_at:
                            break
                        evidence.append(self._evidence(probe.text, resp))
                    else:
                        if self.config.fast:
                            return Finding(target, "time", tuple(evidence), TENTATIVE, dialect.name, quoting.value)
                        control = self.send(target, target.base_value)
                        if control.latency >= control_below:
                            self._skip(target, "time", "control request was slow; timing inconclusive")
                            return None
                        evidence.append(self._evidence(target.base_value, control))
                        return Finding(target, "time", tuple(evidence), CONFIRMED, dialect.name, quoting.value,
                                       {"delay_s": d})
        return None

    def run_target(self, target: Target, baseline: BaselineProfile) -> list[Finding]:
        self.observe_baseline(target, baseline)
        findings = []
        checks = {"boolean": self.detect_boolean, "error": self.detect_error,
                  "union": self.detect_union, "time": self.detect_time}
        for technique in TECHNIQUES:
            if technique not in self.config.techniques:
                continue
            try:
                found = checks[technique](target, baseline)
            except (InconclusiveError, UnsupportedTechnique) as exc:
                self._skip(target, technique, str(exc))
                continue
            except TransportError as exc:
                self._skip(target, technique, f"transport error: {exc}")
                continue
            if found is not None:
                findings.append(found)
                if found.dialect_guess and target.key not in self.dialect_hint:
                    self.dialect_hint[target.key] = found.dialect_guess
        guess = self.dialect_hint.get(target.key)
        if guess:
            findings = [f if f.dialect_guess else replace(f, dialect_guess=guess) for f in findings]
        return findings


@dataclass
class ScanResult:
    targets: list[Target]
    findings: list[Finding]
    skipped: list[SkippedCheck]
    started_at: datetime
    finished_at: datetime
    unreachable: list[Target] = field(default_factory=list)


def _order(f: Finding):
    return (f.target.url, f.target.inject_param, TECHNIQUES.index(f.technique))


def scan(targets: Sequence[Target], config: ScanConfig | None = None,
         engine: HttpEngine | None = None) -> ScanResult:
    """Profile each target, then run the enabled techniques in order."""
    if not targets:
        raise ValueError("scan needs at least one target")
    config = config or ScanConfig()
    engine = engine or HttpEngine(config.dialects.values())
    detector = Detector(engine, config)
    started = datetime.now(timezone.utc)
    unreachable: list[Target] = []

    def one(target: Target) -> list[Finding]:
        try:
            baseline = engine.baseline_profile(target, config.baseline_samples)
        except TransportError as exc:
            unreachable.append(target)
            detector._skip(target, "baseline", f"unreachable: {exc}")
            return []
        return detector.run_target(target, baseline)

    workers = max(1, min(config.workers, len(targets)))
    if workers == 1:
        batches = [one(t) for t in targets]
    else:
        with ThreadPoolExecutor(workers) as pool:
            batches = list(pool.map(one, targets))
    if len(unreachable) == len(targets):
        raise ScanError("no target was reachable")
    unique: dict[tuple, Finding] = {}
    for f in (f for batch in batches for f in batch):
        unique.setdefault(f.key, f)
    findings = sorted(unique.values(), key=_order)
    skipped = sorted(detector.skipped, key=lambda s: (s.url, s.param, s.technique, s.reason))
    return ScanResult(list(targets), findings, skipped, started, datetime.now(timezone.utc), unreachable)
