"""HTTP client layer: targets, parameter mutation, response normalisation.

Every request goes through :class:`HttpEngine`, which bounds in-flight
requests per host and hands out an exclusive token for timing-sensitive work
(baselines and time-based probes).
"""
from __future__ import annotations

import hashlib
import os
import re
import statistics
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence
from urllib.parse import parse_qsl, quote, urlsplit, urlunsplit

import requests
from requests.structures import CaseInsensitiveDict

from .dialects import SqlDialect
from .errors import ConfigurationError, TransportError
from .similarity import similarity

DEFAULT_TIMEOUT_MS = 10000
MAX_REDIRECTS = 3
ISO_8601 = r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:[.,]\d+)?(?:Z|[+-]\d{2}:?\d{2})?"
DEFAULT_STRIP_PATTERNS = (ISO_8601,)


def default_timeout_ms() -> int:
    env = os.environ.get("SQLFORGE_TIMEOUT_MS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigurationError(f"SQLFORGE_TIMEOUT_MS must be an integer, got {env!r}") from None
        if value > 0:
            return value
    return DEFAULT_TIMEOUT_MS


@dataclass(frozen=True)
class Target:
    url: str
    inject_param: str
    params: tuple[tuple[str, str], ...] = ()
    method: str = "GET"
    context_hint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", self.method.upper())
        object.__setattr__(self, "params", tuple((str(k), str(v)) for k, v in self.params))
        if self.method not in ("GET", "POST"):
            raise ValueError(f"unsupported method {self.method}")
        if urlsplit(self.url).scheme not in ("http", "https"):
            raise ValueError(f"not an absolute http(s) URL: {self.url}")
        count = sum(1 for k, _ in self.params if k == self.inject_param)
        if count != 1:
            raise ValueError(f"parameter {self.inject_param!r} must appear exactly once, found {count}")
        if self.context_hint not in (None, "numeric", "single_quoted", "unknown"):
            raise ValueError(f"bad context hint {self.context_hint!r}")

    @classmethod
    def from_url(cls, url: str, param: str, value: str | None = None, method: str = "GET",
                 data: Sequence[tuple[str, str]] = (), context_hint: str | None = None) -> "Target":
        """Build a target from a URL whose query string may already carry parameters.

        For POST targets ``data`` holds the form fields; query-string parameters
        stay on the URL untouched.
        """
        parts = urlsplit(url)
        method = method.upper()
        query = parse_qsl(parts.query, keep_blank_values=True)
        if method == "GET":
            params = list(query)
            base = urlunsplit((parts.scheme, parts.netloc, parts.path, "", ""))
        else:
            params = list(data)
            base = url
        if value is not None:
            if any(k == param for k, _ in params):
                params = [(k, value if k == param else v) for k, v in params]
            else:
                params.append((param, value))
        elif not any(k == param for k, _ in params):
            params.append((param, "1"))
        return cls(base, param, tuple(params), method, context_hint)

    @property
    def base_value(self) -> str:
        return next(v for k, v in self.params if k == self.inject_param)

    @property
    def host(self) -> str:
        return urlsplit(self.url).netloc

    @property
    def key(self) -> tuple[str, str]:
        return (self.url, self.inject_param)

    def wire_params(self) -> str:
        return encode_params(self.params)

    def wire_url(self) -> str:
        if self.method == "GET":
            sep = "&" if urlsplit(self.url).query else "?"
            return f"{self.url}{sep}{self.wire_params()}" if self.params else self.url
        return self.url


def encode_params(params: Iterable[tuple[str, str]]) -> str:
    return "&".join(f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in params)


def with_param(target: Target, value: str, name: str | None = None) -> Target:
    """Copy of ``target`` with one parameter's raw value replaced."""
    name = name or target.inject_param
    if not any(k == name for k, _ in target.params):
        raise KeyError(name)
    params = tuple((k, value if k == name else v) for k, v in target.params)
    return replace(target, params=params)


@dataclass(frozen=True)
class ResponseSummary:
    status: int
    body_tokens: tuple[str, ...]
    body_length: int
    latency: float
    error_signature: str | None = None
    body: str = field(default="", repr=False, compare=False)
    headers: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.body_length < 0 or self.latency < 0:
            raise ValueError("body_length and latency must be non-negative")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BaselineProfile:
    reference: ResponseSummary
    latency_median: float
    latency_mad: float
    stability: float
    n: int
    samples: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.stability <= 1.0:
            raise ValueError("stability must be in [0, 1]")
        if self.n < 3:
            raise ValueError("a baseline needs at least 3 samples")


class Tokenizer:
    def __init__(self, strip_patterns: Sequence[str] = DEFAULT_STRIP_PATTERNS):
        self.patterns = [re.compile(p) for p in strip_patterns]

    def __call__(self, body: str) -> tuple[str, ...]:
        for p in self.patterns:
            body = p.sub(" ", body)
        return tuple(body.split())


def match_signatures(body: str, dialects: Iterable[SqlDialect]) -> tuple[str, str] | None:
    """First (dialect name, signature) whose signature occurs in ``body``."""
    for d in dialects:
        sig = d.match_signature(body)
        if sig:
            return d.name, sig
    return None


class _HostGate:
    """Bounded shared access plus an exclusive mode owned by a single thread."""

    def __init__(self, limit: int):
        self.limit = limit
        self.in_flight = 0
        self.owner: int | None = None
        self.depth = 0
        self.cond = threading.Condition()
        self.last_request = 0.0

    @contextmanager
    def shared(self):
        me = threading.get_ident()
        with self.cond:
            if self.owner == me:
                reentrant = True
            else:
                reentrant = False
                while self.owner is not None or self.in_flight >= self.limit:
                    self.cond.wait()
                self.in_flight += 1
        try:
            yield
        finally:
            if not reentrant:
                with self.cond:
                    self.in_flight -= 1
                    self.cond.notify_all()

    @contextmanager
    def exclusive(self):
        me = threading.get_ident()
        with self.cond:
            if self.owner != me:
                while self.owner is not None:
                    self.cond.wait()
                self.owner = me
                while self.in_flight > 0:
                    self.cond.wait()
            self.depth += 1
        try:
            yield
        finally:
            with self.cond:
                self.depth -= 1
                if self.depth == 0:
                    self.owner = None
                    self.cond.notify_all()


class HttpEngine:
    def __init__(self, dialects: Iterable[SqlDialect] = (), timeout_ms: int | None = None,
                 max_in_flight: int = 4, delay_ms: float = 0.0, retries: int = 1,
                 strip_patterns: Sequence[str] = DEFAULT_STRIP_PATTERNS,
                 headers: dict | None = None):
        if max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        self.dialects = tuple(dialects)
        self.timeout_ms = timeout_ms if timeout_ms is not None else default_timeout_ms()
        self.max_in_flight = max_in_flight
        self.delay_ms = delay_ms
        self.retries = retries
        self.tokenize = Tokenizer(strip_patterns)
        self.headers = dict(headers or {})
        self.request_count = 0
        self._local = threading.local()
        self._gates: dict[str, _HostGate] = {}
        self._lock = threading.Lock()

    # sessions are not thread-safe; keep one per thread
    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = requests.Session()
            s.max_redirects = MAX_REDIRECTS
            s.headers.update({"User-Agent": "sqlforge/0.1"})
            s.headers.update(self.headers)
            self._local.session = s
        return s

    def _gate(self, host: str) -> _HostGate:
        with self._lock:
            gate = self._gates.get(host)
            if gate is None:
                gate = self._gates[host] = _HostGate(self.max_in_flight)
            return gate

    @contextmanager
    def exclusive(self, host: str):
        """Token granting the calling thread sole use of ``host``."""
        with self._gate(host).exclusive():
            yield

    def summarize(self, status: int, body: str, latency_ms: float, headers=None) -> ResponseSummary:
        hit = match_signatures(body, self.dialects)
        return ResponseSummary(
            status=status,
            body_tokens=self.tokenize(body),
            body_length=len(body.encode("utf-8")),
            latency=latency_ms,
            error_signature=f"{hit[0]}:{hit[1]}" if hit else None,
            body=body,
            headers=CaseInsensitiveDict(headers or {}),
        )

    def send_request(self, target: Target) -> ResponseSummary:
        gate = self._gate(target.host)
        attempts = 0
        while True:
            with gate.shared():
                if self.delay_ms:
                    wait = gate.last_request + self.delay_ms / 1000 - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                gate.last_request = time.monotonic()
                try:
                    return self._send(target)
                except (requests.ConnectionError, requests.Timeout, requests.TooManyRedirects) as exc:
                    err = exc
            if attempts >= self.retries or isinstance(err, requests.TooManyRedirects):
                raise TransportError(f"{target.method} {target.url}: {err}", retries=attempts) from err
            attempts += 1
            time.sleep(0.05 * attempts)

    def _send(self, target: Target) -> ResponseSummary:
        session = self._session()
        timeout = self.timeout_ms / 1000
        with self._lock:
            self.request_count += 1
        start = time.perf_counter()
        if target.method == "GET":
            resp = session.get(target.wire_url(), timeout=timeout)
        else:
            resp = session.post(target.url, data=target.wire_params(), timeout=timeout,
                                headers={"Content-Type": "application/x-www-form-urlencoded"})
        body = resp.text
        latency = (time.perf_counter() - start) * 1000
        return self.summarize(resp.status_code, body, latency, resp.headers)

    def baseline_profile(self, target: Target, n: int = 3) -> BaselineProfile:
        if n < 3:
            raise ValueError("baseline_profile needs n >= 3")
        with self.exclusive(target.host):
            samples = [self.send_request(target) for _ in range(n)]
        latencies = [s.latency for s in samples]
        med = statistics.median(latencies)
        mad = statistics.median(abs(x - med) for x in latencies)
        stab = similarity(samples[0].body_tokens, samples[-1].body_tokens)
        return BaselineProfile(samples[0], med, mad, stab, n, tuple(latencies))
