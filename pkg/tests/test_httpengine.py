import threading
import time
from urllib.parse import parse_qsl, urlsplit

import pytest
from hypothesis import given, strategies as st

from sqlforge.errors import ConfigurationError, TransportError
from sqlforge.httpengine import (HttpEngine, Target, Tokenizer, _HostGate, default_timeout_ms,
                                 encode_params, with_param)

from conftest import detail_target, free_port, login_target

BASE = Target("http://h/detail", "pro_id", (("pro_id", "1"), ("lang", "en")))


def test_with_param_wire_encoding():
    t = with_param(BASE, "' OR 1=1 -- ")
    assert "pro_id=%27%20OR%201%3D1%20--%20" in t.wire_url()
    assert t.params[1] == ("lang", "en")
    assert BASE.base_value == "1"


def test_target_invariants():
    with pytest.raises(ValueError):
        Target("http://h/x", "a", (("b", "1"),))
    with pytest.raises(ValueError):
        Target("http://h/x", "a", (("a", "1"), ("a", "2")))
    with pytest.raises(ValueError):
        Target("/relative", "a", (("a", "1"),))
    with pytest.raises(ValueError):
        Target("http://h/x", "a", (("a", "1"),), method="PUT")
    with pytest.raises(KeyError):
        with_param(BASE, "x", name="nope")


def test_from_url_keeps_query_params():
    t = Target.from_url("http://h/detail?lang=en&pro_id=3", "pro_id")
    assert t.url == "http://h/detail"
    assert dict(t.params) == {"lang": "en", "pro_id": "3"}
    assert Target.from_url("http://h/detail", "pro_id", "9").base_value == "9"


values = st.text(max_size=30)


@given(values, values)
def test_with_param_idempotent(v, w):
    assert with_param(with_param(BASE, v), v) == with_param(BASE, v)
    assert with_param(with_param(BASE, w), v) == with_param(BASE, v)


@given(values, values)
def test_with_param_commutes_on_distinct_names(v, w):
    a = with_param(with_param(BASE, v, "pro_id"), w, "lang")
    b = with_param(with_param(BASE, w, "lang"), v, "pro_id")
    assert a == b


@given(st.lists(st.tuples(st.text(min_size=1, max_size=8), st.text(max_size=20)), max_size=5))
def test_encode_params_round_trip(pairs):
    assert parse_qsl(encode_params(pairs), keep_blank_values=True) == pairs


def test_tokenizer_strips_timestamps():
    tok = Tokenizer()
    a = tok("<p>hello world</p> rendered 2026-01-02T03:04:05.123456+00:00")
    b = tok("<p>hello world</p> rendered 2027-11-12T13:14:15")
    assert a == b == ("<p>hello", "world</p>", "rendered")
    assert tok("x  y\n z") == tok("x  y\n z")


def test_default_timeout_env(monkeypatch):
    monkeypatch.delenv("SQLFORGE_TIMEOUT_MS", raising=False)
    assert default_timeout_ms() == 10000
    monkeypatch.setenv("SQLFORGE_TIMEOUT_MS", "1234")
    assert default_timeout_ms() == 1234
    assert HttpEngine().timeout_ms == 1234
    monkeypatch.setenv("SQLFORGE_TIMEOUT_MS", "soon")
    with pytest.raises(ConfigurationError):
        default_timeout_ms()


def test_send_request_examples(vulnerable, engine):
    ok = engine.send_request(detail_target(vulnerable))
    assert ok.status == 200 and "Aurora Desk Lamp" in ok.body and ok.error_signature is None
    err = engine.send_request(detail_target(vulnerable, "1'"))
    assert err.status == 500 and err.error_signature.startswith("sqlite-testbed:")
    missing = engine.send_request(Target.from_url(vulnerable.url("/nope"), "x"))
    assert missing.status == 404
    assert ok.body_length == len(ok.body.encode())


def test_post_login(vulnerable, engine):
    r = engine.send_request(with_param(login_target(vulnerable), "' OR 1=1 -- "))
    assert r.status == 200 and "Welcome back" in r.body


def test_transport_error_on_closed_port():
    eng = HttpEngine(timeout_ms=1000, retries=1)
    with pytest.raises(TransportError) as info:
        eng.send_request(Target.from_url(f"http://127.0.0.1:{free_port()}/x", "a"))
    assert info.value.retries == 1


def test_redirects_capped(fake_app):
    def loop(path, params):
        n = int(path.strip("/") or 0)
        return 302, "", {"Location": f"/{n + 1}"}

    app = fake_app(loop)
    with pytest.raises(TransportError):
        HttpEngine(timeout_ms=2000).send_request(Target.from_url(app.url("/0"), "a"))

    def short(path, params):
        n = int(path.strip("/"))
        if n < 3:
            return 302, "", {"Location": f"/{n + 1}?a=1"}
        return 200, "landed"

    app = fake_app(short)
    assert HttpEngine(timeout_ms=2000).send_request(Target.from_url(app.url("/0"), "a")).body == "landed"


def test_baseline_profile(vulnerable, engine):
    with pytest.raises(ValueError):
        engine.baseline_profile(detail_target(vulnerable), n=2)
    prof = engine.baseline_profile(Target.from_url(vulnerable.url("/about"), "x"), n=3)
    assert prof.stability == 1.0 and prof.n == 3 and len(prof.samples) == 3
    assert prof.latency_mad >= 0


def test_only_inject_param_mutated_on_wire(vulnerable, engine):
    t = Target.from_url(vulnerable.url("/detail?lang=en&sort=asc"), "pro_id", "2")
    vulnerable.requests.clear()
    engine.send_request(with_param(t, "2 AND 1=1"))
    method, path, _ = vulnerable.requests[-1]
    got = parse_qsl(urlsplit(path).query, keep_blank_values=True)
    assert got == [("lang", "en"), ("sort", "asc"), ("pro_id", "2 AND 1=1")]

    vulnerable.requests.clear()
    engine.send_request(with_param(login_target(vulnerable), "adm'in"))
    method, path, body = vulnerable.requests[-1]
    assert method == "POST"
    assert parse_qsl(body.decode()) == [("username", "adm'in"), ("password", "wrong")]


def test_host_gate_limit():
    gate = _HostGate(2)
    peak = [0]
    active = [0]
    lock = threading.Lock()

    def work():
        with gate.shared():
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2


def test_host_gate_exclusive_blocks_others():
    gate = _HostGate(4)
    log = []
    entered = threading.Event()

    def holder():
        with gate.exclusive():
            entered.set()
            with gate.shared():  # reentrant for the owner
                log.append("owner")
            time.sleep(0.1)
            log.append("owner-done")

    def other():
        entered.wait()
        with gate.shared():
            log.append("other")

    a = threading.Thread(target=holder)
    b = threading.Thread(target=other)
    a.start()
    b.start()
    a.join()
    b.join()
    assert log == ["owner", "owner-done", "other"]


def test_max_in_flight_validation():
    with pytest.raises(ConfigurationError):
        HttpEngine(max_in_flight=0)
