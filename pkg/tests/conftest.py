import socket
import sqlite3
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

import pytest

from sqlforge.detector import ScanConfig
from sqlforge.dialects import builtin_dialects
from sqlforge.httpengine import HttpEngine, Target
from sqlforge.testbed import TestbedConfig, start_testbed


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="session")
def vulnerable():
    tb = start_testbed(TestbedConfig("vulnerable", free_port()))
    yield tb
    tb.shutdown()


@pytest.fixture(scope="session")
def patched():
    tb = start_testbed(TestbedConfig("patched", free_port()))
    yield tb
    tb.shutdown()


@pytest.fixture(scope="session")
def greybox():
    tb = start_testbed(TestbedConfig("vulnerable", free_port(), greybox=True))
    yield tb
    tb.shutdown()


@pytest.fixture
def engine():
    return HttpEngine(builtin_dialects().values(), timeout_ms=5000)


def detail_target(tb, value="1"):
    return Target.from_url(tb.url("/detail"), "pro_id", value)


def login_target(tb):
    return Target.from_url(tb.url("/login"), "username", "admin", method="POST",
                           data=[("username", "admin"), ("password", "wrong")])


def fast_config(**kw):
    kw.setdefault("techniques", ("boolean", "error", "union"))
    kw.setdefault("seed", 7)
    return ScanConfig(**kw)


class FakeApp:
    """Tiny HTTP app whose GET handler is a plain function(params) -> (status, body)."""

    def __init__(self, handler):
        app = self

        class H(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *a):
                pass

            def do_GET(self):
                parts = urlsplit(self.path)
                status, body, headers = app.call(parts.path, dict(parse_qsl(parts.query, keep_blank_values=True)))
                data = body.encode()
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.handler = handler
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def call(self, path, params):
        out = self.handler(path, params)
        if len(out) == 2:
            return (*out, {})
        return out

    def url(self, path):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}{path}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fake_app():
    apps = []

    def make(handler):
        app = FakeApp(handler)
        apps.append(app)
        return app

    yield make
    for a in apps:
        a.close()


def sqlite_route(sql_template, render, rows_setup):
    """Handler executing ``sql_template.format(v)`` against a throwaway sqlite DB."""
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    rows_setup(conn)
    lock = threading.Lock()

    def handler(path, params):
        v = params.get("id", "")
        try:
            with lock:
                rows = conn.execute(sql_template.format(v)).fetchall()
        except sqlite3.Error as exc:
            return 500, f"<p>sqlite3.OperationalError: {exc}</p>"
        if not rows:
            return 404, "<p>nothing here at all, sorry</p>"
        return 200, "<html><body>" + "".join(render(r) for r in rows) + " footer text stays put</body></html>"

    return handler
