"""TCP connect probing of host/port lists."""
from __future__ import annotations

import errno
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable

from .errors import ResolutionError

DEFAULT_TIMEOUT_MS = 1000
DEFAULT_WIDTH = 16
OPEN, CLOSED, FILTERED = "open", "closed", "filtered"

_REFUSED = {errno.ECONNREFUSED, 10061}


@dataclass(frozen=True)
class PortProbeResult:
    host: str
    port: int
    state: str
    latency: float

    def line(self) -> str:
        return f"{self.host}:{self.port} {self.state} {self.latency:.1f}ms"

    def as_dict(self) -> dict:
        return asdict(self)


def parse_ports(spec: str) -> list[int]:
    """Parse ``80,3306,8000-8010`` into a sorted, de-duplicated port list."""
    ports: set[int] = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = (int(x) for x in part.split("-", 1))
            if a > b:
                a, b = b, a
            ports.update(range(a, b + 1))
        else:
            ports.add(int(part))
    bad = [p for p in ports if not 1 <= p <= 65535]
    if bad:
        raise ValueError(f"ports out of range: {bad[:5]}")
    if not ports:
        raise ValueError("empty port list")
    return sorted(ports)


def _resolve(host: str, port: int):
    try:
        return socket.getaddrinfo(host, port, type=socket.SOCK_STREAM)[0]
    except socket.gaierror as exc:
        raise ResolutionError(f"cannot resolve {host!r}: {exc}") from exc


def probe_port(host: str, port: int, timeout: float = DEFAULT_TIMEOUT_MS) -> PortProbeResult:
    """Connect-scan one port; ``timeout`` is in milliseconds."""
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    family, socktype, proto, _, addr = _resolve(host, port)
    sock = socket.socket(family, socktype, proto)
    sock.settimeout(timeout / 1000)
    start = time.perf_counter()
    try:
        sock.connect(addr)
        state = OPEN
    except socket.timeout:
        state = FILTERED
    except ConnectionRefusedError:
        state = CLOSED
    except OSError as exc:
        if exc.errno in _REFUSED:
            state = CLOSED
        else:
            # host/net unreachable arrives early; hold until the deadline so a
            # filtered verdict always means the timeout elapsed
            state = FILTERED
            remaining = timeout / 1000 - (time.perf_counter() - start)
            if remaining > 0:
                time.sleep(remaining)
    finally:
        sock.close()
    latency = (time.perf_counter() - start) * 1000
    return PortProbeResult(host, port, state, latency)


def probe_ports(host: str, ports: Iterable[int], timeout: float = DEFAULT_TIMEOUT_MS,
                width: int = DEFAULT_WIDTH) -> list[PortProbeResult]:
    ports = list(ports)
    _resolve(host, ports[0] if ports else 80)
    with ThreadPoolExecutor(max(1, min(width, len(ports) or 1))) as pool:
        results = list(pool.map(lambda p: probe_port(host, p, timeout), ports))
    return sorted(results, key=lambda r: (r.host, r.port))
