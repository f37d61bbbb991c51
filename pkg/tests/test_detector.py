import dataclasses

import pytest

from sqlforge.detector import (ADVICE_IDS, Detector, Finding, ScanConfig, normalized_digest, scan)
from sqlforge.dialects import SQLITE_TESTBED, dialect_from_dict, get_dialect
from sqlforge.errors import ScanError
from sqlforge.httpengine import BaselineProfile, HttpEngine, Target, with_param

from conftest import detail_target, fast_config, free_port, login_target


def by_technique(result):
    return {f.technique: f for f in result.findings}


def test_vulnerable_detail(vulnerable, engine):
    res = scan([detail_target(vulnerable)], fast_config(), engine)
    found = by_technique(res)
    assert set(found) == {"boolean", "error", "union"}
    assert all(f.confidence == "confirmed" for f in found.values())
    assert all(f.dialect_guess == SQLITE_TESTBED for f in found.values())
    assert found["boolean"].context == "numeric"
    assert found["union"].details == {"columns": 4, "marker_column": 2}
    assert all(f.cwe == "CWE-89" and f.advice == ADVICE_IDS for f in found.values())


def test_vulnerable_login(vulnerable, engine):
    found = by_technique(scan([login_target(vulnerable)], fast_config(), engine))
    assert {"error", "union"} <= set(found)
    assert found["union"].details["columns"] == 3
    assert found["error"].context == "single_quoted"


def test_patched_has_no_findings(patched, engine):
    res = scan([detail_target(patched), login_target(patched)], ScanConfig(seed=1), engine)
    assert res.findings == []


def test_static_page_has_no_findings(vulnerable, engine):
    res = scan([Target.from_url(vulnerable.url("/about"), "q")], fast_config(), engine)
    assert res.findings == []


def test_fast_mode_is_tentative(vulnerable, engine):
    res = scan([detail_target(vulnerable)], fast_config(fast=True, techniques=("boolean", "union")), engine)
    assert {f.confidence for f in res.findings} == {"tentative"}


def test_signature_already_on_baseline_is_ignored(fake_app):
    # a help page that always mentions the signature text
    def handler(path, params):
        return 200, "<p>Troubleshooting: an SQLite error means the DB is down.</p>"

    app = fake_app(handler)
    res = scan([Target.from_url(app.url("/p"), "id")], fast_config(techniques=("error",)),
               HttpEngine(timeout_ms=2000))
    assert res.findings == []


def test_time_confirmed_on_vulnerable(vulnerable):
    eng = HttpEngine(timeout_ms=10000)
    res = scan([detail_target(vulnerable)], ScanConfig(techniques=("time",), seed=3), eng)
    f = by_technique(res)["time"]
    assert f.confidence == "confirmed"
    delayed = [e for e in f.evidence if e.payload != "1"]
    assert len(delayed) == 2 and all(e.latency >= 1600 for e in delayed)
    assert f.evidence[-1].latency < 400


def test_time_none_on_patched(patched):
    res = scan([detail_target(patched)], ScanConfig(techniques=("time",), seed=3), HttpEngine(timeout_ms=10000))
    assert res.findings == []


def test_time_mad_guard(vulnerable, engine):
    det = Detector(engine, ScanConfig(techniques=("time",)))
    t = detail_target(vulnerable)
    ref = engine.send_request(t)
    noisy = BaselineProfile(ref, 50.0, 1500.0, 1.0, 3, (10.0, 50.0, 3000.0))
    assert det.run_target(t, noisy) == []
    assert det.skipped[0].technique == "time" and "noisy" in det.skipped[0].reason


def test_time_unsupported_dialect(vulnerable, engine):
    base = get_dialect(SQLITE_TESTBED)
    fields = {k: getattr(base, k) for k in base.__dataclass_fields__ if k != "extra"}
    nodelay = dialect_from_dict({**fields, "name": "nodelay", "delay_expression": None})
    res = scan([detail_target(vulnerable)], ScanConfig(techniques=("time",), dialects={"nodelay": nodelay}), engine)
    assert res.findings == []
    assert [(s.technique, "delay" in s.reason) for s in res.skipped] == [("time", True)]


def test_unstable_baseline_skips_boolean(fake_app, engine):
    import itertools
    counter = itertools.count()

    def handler(path, params):
        n = next(counter)
        return 200, " ".join(f"w{n}x{i}" for i in range(20))

    app = fake_app(handler)
    res = scan([Target.from_url(app.url("/r"), "id")], fast_config(techniques=("boolean",)), engine)
    assert res.findings == []
    assert res.skipped[0].technique == "boolean" and "unstable" in res.skipped[0].reason


def test_scan_ordering_and_dedup(vulnerable, engine):
    t1 = detail_target(vulnerable)
    t2 = login_target(vulnerable)
    res = scan([t2, t1, t1], fast_config(), engine)
    keys = [(f.target.url, f.target.inject_param, f.technique) for f in res.findings]
    assert len(keys) == len(set(keys))
    order = {"boolean": 0, "error": 1, "union": 2, "time": 3}
    assert keys == sorted(keys, key=lambda k: (k[0], k[1], order[k[2]]))


def test_scan_argument_errors(engine):
    with pytest.raises(ValueError):
        scan([], fast_config(), engine)
    dead = Target.from_url(f"http://127.0.0.1:{free_port()}/detail", "pro_id")
    with pytest.raises(ScanError):
        scan([dead], fast_config(), HttpEngine(timeout_ms=500, retries=0))


def test_partially_unreachable(vulnerable):
    dead = Target.from_url(f"http://127.0.0.1:{free_port()}/detail", "pro_id")
    res = scan([dead, detail_target(vulnerable)], fast_config(techniques=("error",)), HttpEngine(retries=0))
    assert res.unreachable == [dead]
    assert any(s.technique == "baseline" for s in res.skipped)
    assert len(res.findings) == 1


def test_evidence_is_replayable(vulnerable, engine):
    res = scan([detail_target(vulnerable)], fast_config(), engine)
    for f in res.findings:
        for ev in f.evidence:
            again = engine.send_request(with_param(f.target, ev.payload))
            assert again.status == ev.status
            assert normalized_digest(again) == ev.digest


def test_evidence_bodies_flag(vulnerable, engine):
    res = scan([detail_target(vulnerable)], fast_config(techniques=("error",), evidence_bodies=True), engine)
    assert "sqlite3.OperationalError" in res.findings[0].evidence[0].body
    res = scan([detail_target(vulnerable)], fast_config(techniques=("error",)), engine)
    assert res.findings[0].evidence[0].body is None


def test_greybox_header_sets_dialect(greybox, engine):
    det = Detector(engine, fast_config())
    t = detail_target(greybox)
    prof = engine.baseline_profile(t)
    det.observe_baseline(t, prof)
    assert det.dialect_hint[t.key] == SQLITE_TESTBED
    found = det.run_target(t, prof)
    assert {f.dialect_guess for f in found} == {SQLITE_TESTBED}


def test_context_hint_restricts_quoting(vulnerable, engine):
    t = Target.from_url(vulnerable.url("/detail"), "pro_id", "1", context_hint="single_quoted")
    res = scan([t], fast_config(techniques=("boolean",)), engine)
    assert res.findings == []


def test_finding_invariants(vulnerable, engine):
    f = scan([detail_target(vulnerable)], fast_config(techniques=("error",)), engine).findings[0]
    with pytest.raises(ValueError):
        dataclasses.replace(f, cwe="CWE-79")
    with pytest.raises(ValueError):
        dataclasses.replace(f, evidence=())
    with pytest.raises(ValueError):
        ScanConfig(theta_same=0.8, theta_diff=0.9)
    with pytest.raises(ValueError):
        ScanConfig(techniques=("psychic",))
