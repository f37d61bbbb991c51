"""Embedded HTTP service for the e-commerce testbed."""
from __future__ import annotations

import collections
import html
import logging
import secrets
import socket
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

from ..dialects import DIALECT_HEADER, SQLITE_TESTBED
from ..errors import ConfigurationError, StartupError
from .queries import Mode, build_query, validate_input
from .store import KNOWN_PROFILES, Store, seed_store

log = logging.getLogger(__name__)

SITE = "EcoMart"


@dataclass(frozen=True)
class TestbedConfig:
    __test__ = False
    mode: Mode = Mode.VULNERABLE
    port: int = 8080
    seed_profile: str = "ecom-v1"
    leak_errors: bool | None = None
    greybox: bool = False
    host: str = "127.0.0.1"

    def __post_init__(self):
        try:
            mode = Mode(self.mode)
        except ValueError:
            raise ConfigurationError(f"unknown mode {self.mode!r}") from None
        object.__setattr__(self, "mode", mode)
        # error leakage follows the mode, whatever the caller asked for
        object.__setattr__(self, "leak_errors", mode is Mode.VULNERABLE)
        if not 1 <= int(self.port) <= 65535:
            raise ConfigurationError(f"port {self.port} outside [1, 65535]")
        if self.seed_profile not in KNOWN_PROFILES:
            raise ConfigurationError(f"unknown seed profile {self.seed_profile!r}")


def _page(title: str, main: str) -> str:
    stamp = datetime.now(timezone.utc).isoformat(timespec="milliseconds")
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n"
        f"<meta charset=\"utf-8\">\n<title>{SITE} - {html.escape(title)}</title>\n</head>\n<body>\n"
        f"<header><h1>{SITE}</h1>\n"
        "<nav><a href=\"/\">Home</a> | <a href=\"/detail?pro_id=1\">Featured</a> | "
        "<a href=\"/about\">About us</a> | <a href=\"/login\">Staff login</a></nav></header>\n"
        f"<main>\n{main}\n</main>\n"
        f"<footer><p>Page generated {stamp}</p></footer>\n"
        "</body>\n</html>\n"
    )


def _cell(value) -> str:
    return "" if value is None else html.escape(str(value))


def _render_products(rows) -> str:
    parts = []
    for _id, name, description, price in rows:
        parts.append(
            "<article class=\"product\">\n"
            f"<h2 class=\"name\">{_cell(name)}</h2>\n"
            f"<p class=\"description\">{_cell(description)}</p>\n"
            f"<p class=\"price\">Price: ${_cell(price)}</p>\n"
            "<form action=\"/checkout\" method=\"post\"><button>Add to cart</button></form>\n"
            "</article>"
        )
    return "\n".join(parts)


ABOUT = (
    "<h2>About us</h2>\n"
    "<p>We are a small shop selling everyday goods for home, office and travel.</p>\n"
    "<p>Orders ship within two business days. Questions go to support@ecomart.test.</p>"
)
INDEX = (
    "<h2>Welcome</h2>\n<p>Browse the catalogue from the product pages.</p>\n"
    "<ul><li><a href=\"/detail?pro_id=1\">Product 1</a></li>"
    "<li><a href=\"/detail?pro_id=2\">Product 2</a></li></ul>"
)
LOGIN_FORM = (
    "<h2>Staff login</h2>\n<form action=\"/login\" method=\"post\">"
    "<input name=\"username\"><input name=\"password\" type=\"password\">"
    "<button>Sign in</button></form>"
)


class _Handler(BaseHTTPRequestHandler):
    server_version = "EcoMart/1.0"
    sys_version = ""
    protocol_version = "HTTP/1.1"

    @property
    def testbed(self) -> "Testbed":
        return self.server.testbed

    def setup(self):
        super().setup()
        # headers and body go out as separate writes; don't let Nagle hold the body
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def log_message(self, format, *args):
        log.debug("%s %s", self.address_string(), format % args)

    def _send(self, status: int, body: str, headers: dict | None = None):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        if self.testbed.config.greybox:
            self.send_header(DIALECT_HEADER, SQLITE_TESTBED)
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(data)

    def _params(self, query: str) -> dict[str, str]:
        return dict(parse_qsl(query, keep_blank_values=True))

    def do_GET(self):
        parts = urlsplit(self.path)
        self.testbed.record(self.command, self.path, b"")
        self._dispatch(parts.path, self._params(parts.query))

    def do_POST(self):
        parts = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        self.testbed.record(self.command, self.path, raw)
        params = self._params(parts.query)
        params.update(self._params(raw.decode("utf-8", "replace")))
        self._dispatch(parts.path, params)

    def _dispatch(self, path: str, params: dict[str, str]):
        try:
            if path == "/detail":
                self._detail(params)
            elif path == "/login":
                self._login(params)
            elif path == "/about":
                self._send(HTTPStatus.OK, _page("About us", ABOUT))
            elif path == "/":
                self._send(HTTPStatus.OK, _page("Home", INDEX))
            else:
                self._send(HTTPStatus.NOT_FOUND, _page("Not found", "<p class=\"error\">Page not found.</p>"))
        except (sqlite3.Error, sqlite3.Warning) as exc:
            self._db_error(exc)
        except Exception:
            log.exception("unhandled error serving %s", path)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR,
                       _page("Error", "<p class=\"error\">Something went wrong. Please try again later.</p>"))

    def _db_error(self, exc: Exception):
        if self.testbed.config.leak_errors:
            detail = f"{type(exc).__module__}.{type(exc).__name__}: {exc}"
            body = f"<h2>Database error</h2>\n<pre class=\"trace\">{html.escape(detail)}</pre>"
        else:
            body = "<p class=\"error\">Something went wrong. Please try again later.</p>"
        self._send(HTTPStatus.INTERNAL_SERVER_ERROR, _page("Error", body))

    def _detail(self, params):
        raw = params.get("pro_id", "")
        mode = self.testbed.config.mode
        if mode is Mode.PATCHED and not validate_input("detail", raw):
            self._send(HTTPStatus.BAD_REQUEST, _page("Error", "<p class=\"error\">Invalid product id.</p>"))
            return
        query = build_query(mode, "detail", raw)
        rows = self.testbed.execute(query)
        if not rows:
            self._send(HTTPStatus.NOT_FOUND, _page("Not found", "<p class=\"error\">Product not found.</p>"))
            return
        self._send(HTTPStatus.OK, _page("Product detail", _render_products(rows)))

    def _login(self, params):
        if "username" not in params:
            self._send(HTTPStatus.OK, _page("Staff login", LOGIN_FORM))
            return
        username = params.get("username", "")
        password = params.get("password", "")
        mode = self.testbed.config.mode
        if mode is Mode.PATCHED and not (validate_input("login", username) and validate_input("login", password)):
            self._denied()
            return
        rows = self.testbed.execute(build_query(mode, "login", (username, password)))
        if not rows:
            self._denied()
            return
        who = _cell(rows[0][1])
        body = f"<h2>Dashboard</h2>\n<p class=\"welcome\">Welcome back, {who}!</p>"
        token = secrets.token_hex(16)
        self._send(HTTPStatus.OK, _page("Dashboard", body), {"Set-Cookie": f"session={token}; HttpOnly"})

    def _denied(self):
        self._send(HTTPStatus.UNAUTHORIZED, _page("Staff login", "<p class=\"error\">Invalid username or password.</p>"))


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    # SO_REUSEADDR still refuses a port someone is listening on; it only skips TIME_WAIT
    allow_reuse_address = True


class Testbed:
    """A running testbed. Use as a context manager or call :meth:`shutdown`."""
    __test__ = False

    def __init__(self, config: TestbedConfig, store: Store):
        self.config = config
        self.store = store
        self.executed: collections.deque[str] = collections.deque(maxlen=10000)
        self.requests: collections.deque[tuple[str, str, bytes]] = collections.deque(maxlen=10000)
        try:
            self._httpd = _Server((config.host, config.port), _Handler)
        except OSError as exc:
            store.close()
            raise StartupError(f"cannot bind {config.host}:{config.port}: {exc}") from exc
        self._httpd.testbed = self
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="testbed", daemon=True)
        self._stopped = threading.Event()
        self._closing = threading.Lock()
        self._closed = False

    def start(self) -> "Testbed":
        self._thread.start()
        return self

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def url(self, path: str) -> str:
        return self.base_url + path

    def execute(self, query):
        self.executed.append(query.text)
        return self.store.execute(query.text, query.params)

    def record(self, method: str, path: str, body: bytes):
        self.requests.append((method, path, body))

    def serve_forever(self):
        try:
            self._stopped.wait()
        finally:
            self.shutdown()

    def shutdown(self):
        """Stop serving; safe to call more than once and from any thread."""
        with self._closing:
            if self._closed:
                return
            self._closed = True
        self._stopped.set()
        if self._thread.is_alive():
            self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def start_testbed(config: TestbedConfig) -> Testbed:
    store = seed_store(config.seed_profile)
    return Testbed(config, store).start()
