"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import json
import random
import time

import pytest
import requests
from hypothesis import HealthCheck, given, settings

from sqlforge.cli import run
from sqlforge.detector import scan
from sqlforge.exploiter import Exploiter
from sqlforge.httpengine import HttpEngine
from sqlforge.recon import probe_port
from sqlforge.report import parse_json, render_json, validate
from sqlforge.similarity import similarity
from sqlforge.testbed import TestbedConfig, start_testbed

from conftest import detail_target, fast_config, free_port
from test_report import reports
from test_similarity import brute_force_ratio

REPEATS = 50
FLAGS = ["--technique", "boolean,error,union", "--seed", "11"]
TABLES = {"products", "admins", "customers", "billing_details"}
RESERVED_HOST = "192.0.2.1"  # TEST-NET-1, never routed


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


def _cli(argv):
    return run(argv)


def test_c1_detection_parity(vulnerable, tmp_path, say):
    failures, slowest = [], 0.0
    for i in range(REPEATS):
        out = tmp_path / f"r{i}.json"
        t0 = time.perf_counter()
        code = _cli(["scan", "--url", vulnerable.url("/detail"), "--param", "pro_id", *FLAGS, "--report", str(out)])
        slowest = max(slowest, time.perf_counter() - t0)
        rep = parse_json(out.read_bytes())
        techs = {f.technique for f in rep.findings if f.target.inject_param == "pro_id" and f.cwe == "CWE-89"}
        if code != 2 or not {"boolean", "error"} <= techs:
            failures.append((i, code, sorted(techs)))
    ok = not failures and slowest < 30
    assert say(1, ok, f"{REPEATS - len(failures)}/{REPEATS} runs found boolean+error CWE-89 on pro_id, "
                      f"slowest {slowest:.2f}s"), failures


def test_c2_remediation_parity(tmp_path, say):
    port = free_port()
    good, slowest = 0, 0.0
    problems = []
    for i in range(REPEATS):
        base, after = tmp_path / f"b{i}.json", tmp_path / f"a{i}.json"
        url = f"http://127.0.0.1:{port}/detail"
        with start_testbed(TestbedConfig("vulnerable", port)):
            c_base = _cli(["scan", "--url", url, "--param", "pro_id", *FLAGS, "--report", str(base)])
        with start_testbed(TestbedConfig("patched", port)):
            t0 = time.perf_counter()
            c_after = _cli(["scan", "--url", url, "--param", "pro_id", *FLAGS, "--report", str(after)])
            slowest = max(slowest, time.perf_counter() - t0)
        findings = parse_json(after.read_bytes()).findings
        verdict = _verify(base, after)
        if c_base == 2 and c_after == 0 and not findings and verdict == "REMEDIATED":
            good += 1
        else:
            problems.append((i, c_base, c_after, len(findings), verdict))
    assert say(2, good == REPEATS, f"{good}/{REPEATS} patched rescans clean with exit 0 and verdict REMEDIATED, "
                                   f"slowest {slowest:.2f}s"), problems


def _verify(base, after):
    import contextlib
    import io
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        _cli(["verify", "--baseline", str(base), "--rescan", str(after)])
    return buf.getvalue().split("\n", 1)[0]


def test_c3_exfiltration_parity(vulnerable, tmp_path, say):
    t0 = time.perf_counter()
    target = ["--url", vulnerable.url("/detail"), "--param", "pro_id", "--seed", "3"]
    enum = tmp_path / "enum.json"
    codes = [_cli(["exploit", "enumerate", *target, "--output", str(enum)])]
    doc = json.loads(enum.read_text())
    matches = {}
    for table in ("billing_details", "admins"):
        out = tmp_path / f"{table}.json"
        codes.append(_cli(["exploit", "dump", *target, "--table", table, "--output", str(out)]))
        cols = vulnerable.store.schema.table(table).columns
        oracle = [dict(zip(cols, row)) for row in vulnerable.store.rows_as_text(table)]
        expected = (json.dumps(oracle, indent=2, ensure_ascii=False) + "\n").encode()
        matches[table] = out.read_bytes() == expected
    elapsed = time.perf_counter() - t0
    ok = (codes == [2, 2, 2] and doc["database"] == "ecom" and set(doc["tables"]) == TABLES
          and len(doc["tables"]) == 4 and all(matches.values()) and elapsed < 60)
    assert say(3, ok, f"database {doc['database']!r}, tables {sorted(doc['tables'])}, "
                      f"byte-exact dumps {matches}, {elapsed:.1f}s")


def test_c4_cross_technique(vulnerable, say):
    engine = HttpEngine(timeout_ms=5000)
    res = scan([detail_target(vulnerable)], fast_config(), engine)
    found = {f.technique: f for f in res.findings}
    union = Exploiter(engine, found["union"].target, found["union"])
    blind = Exploiter(engine, found["boolean"].target, found["boolean"])
    schema = union.enumerate_schema()
    mismatches, cells = [], 0
    for table in ("admins", "customers"):
        dumped = union.dump_table(table, 1000, schema)
        for i, row in enumerate(dumped.rows):
            for col, value in zip(dumped.columns, row):
                cells += 1
                got = blind.blind_extract(f"SELECT {col} FROM ecom.{table} LIMIT 1 OFFSET {i}")
                if got != value:
                    mismatches.append((table, i, col, got, value))
    blind._references()
    before = blind.requests
    password = blind.blind_extract("SELECT password FROM ecom.admins ORDER BY id LIMIT 1")
    used = blind.requests - before
    bound = 2 * (7 * 7 + 11)
    ok = not mismatches and password == "s3cr3t!" and used <= bound
    assert say(4, ok, f"{cells - len(mismatches)}/{cells} cells agree; password {password!r} "
                      f"in {used} requests (bound {bound})"), mismatches


def test_c5_similarity_oracle(say):
    rng = random.Random(2024)
    alphabet = list("abcdef")
    exact = 0
    for _ in range(200):
        a = [rng.choice(alphabet) for _ in range(rng.randint(0, 12))]
        b = [rng.choice(alphabet) for _ in range(rng.randint(0, 12))]
        exact += similarity(a, b) == brute_force_ratio(a, b)
    props = 0
    for _ in range(1000):
        a = [rng.choice(alphabet) for _ in range(rng.randint(0, 40))]
        b = [rng.choice(alphabet) for _ in range(rng.randint(0, 40))]
        s = similarity(a, b)
        props += similarity(a, a) == 1.0 and s == similarity(b, a) and 0.0 <= s <= 1.0
    assert say(5, exact == 200 and props == 1000,
               f"{exact}/200 exact vs brute-force LCS; {props}/1000 fuzz cases satisfy properties")


def test_c6_auth_bypass(vulnerable, patched, say):
    payload = {"username": "' OR 1=1 --", "password": "anything"}
    v = requests.post(vulnerable.url("/login"), data=payload, timeout=5)
    p = requests.post(patched.url("/login"), data=payload, timeout=5)
    ok = v.status_code == 200 and "Welcome back" in v.text and p.status_code == 401
    assert say(6, ok, f"vulnerable -> HTTP {v.status_code}, patched -> HTTP {p.status_code}")


def test_c7_read_only(vulnerable, tmp_path, say):
    before = vulnerable.store.checksum()
    target = ["--url", vulnerable.url("/detail"), "--param", "pro_id"]
    rep = tmp_path / "full.json"
    codes = [_cli(["scan", *target, "--seed", "1", "--report", str(rep)])]
    codes.append(_cli(["exploit", "enumerate", *target, "--from-report", str(rep), "--output",
                       str(tmp_path / "e.json")]))
    for table in sorted(TABLES):
        codes.append(_cli(["exploit", "dump", *target, "--from-report", str(rep), "--table", table,
                           "--output", str(tmp_path / f"{table}.json")]))
    after = vulnerable.store.checksum()
    ok = before == after and codes == [2] * 6
    assert say(7, ok, f"checksum {before[:12]} -> {after[:12]}, exit codes {codes}")


def test_c8_recon_parity(vulnerable, say):
    timeout = 1000
    open_r = probe_port("127.0.0.1", vulnerable.port, timeout)
    closed_r = probe_port("127.0.0.1", free_port(), timeout)
    reserved = probe_port(RESERVED_HOST, 80, timeout)
    parts = {
        "open": open_r.state == "open",
        "closed": closed_r.state == "closed",
        "filtered": reserved.state == "filtered" and reserved.latency <= timeout + 200,
    }
    detail = (f"testbed port {open_r.state}; unbound port {closed_r.state}; {RESERVED_HOST}:80 "
              f"{reserved.state} after {reserved.latency:.0f} ms (want filtered within {timeout + 200} ms)")
    assert say(8, all(parts.values()), detail), parts


def test_c9_report_integrity(say):
    results = []

    @settings(max_examples=100, derandomize=True, database=None,
              suppress_health_check=[HealthCheck.too_slow])
    @given(reports)
    def check(r):
        raw = render_json(r)
        data = json.loads(raw)
        validate(data)
        ok = parse_json(raw) == r and render_json(parse_json(raw)) == raw
        ok = ok and all({"R1", "R2"} <= set(f["advice"]) for f in data["findings"] if f["cwe"] == "CWE-89")
        results.append(ok)
        assert ok

    try:
        check()
        passed = all(results)
    except Exception:
        passed = False
    assert say(9, passed and len(results) >= 100,
               f"{sum(results)}/{len(results)} fuzzed reports validated, round-tripped and carried R1+R2")
