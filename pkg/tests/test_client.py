"""Client SDK behavior against the real service and against fake servers
that exercise reordering, silence, and error lines."""

import json
import socket
import threading

import pytest

from detcount.parsing import Detection, ParsedResponse, serialize_response
from detcount.rewards import RewardConfig
from detcount.service import start_tcp_server
from detcount_client import ClientSession, ScoreTimeout, ScoringError, SessionError

GT = [(50.0, 50.0)]
SIZE = (100.0, 100.0)


def perfect_text():
    d = Detection(bbox=(46, 46, 54, 54), point=(50, 50), label="fish")
    return serialize_response(ParsedResponse(think="one fish", detections=(d,), fish_count=1))


@pytest.fixture
def session():
    with ClientSession.spawn(timeout=60.0) as s:
        yield s


def test_spawned_round_trip_group(session):
    results = session.score_group([perfect_text(), perfect_text()], GT, SIZE)
    assert [r.total for r in results] == [9.0, 9.0]
    assert all(r.format["structure_ok"] for r in results)


def test_parse_failure_total(session):
    results = session.score_group(["no structure here"], GT, SIZE)
    assert [r.total for r in results] == [-2.0]
    assert results[0].context is None


def test_empty_group(session):
    assert session.score_group([], GT, SIZE) == []


def test_single_score_and_overrides(session):
    plain = session.score(perfect_text(), GT, SIZE)
    reweighted = session.score(perfect_text(), GT, SIZE, overrides={"w3": 0.0})
    assert plain.total == 9.0
    assert reweighted.total == 8.0


def test_service_error_line_raises(session):
    # Ground-truth points are validated service-side; a malformed pair must
    # surface as a per-request error, not a crash or a hang.
    with pytest.raises(ScoringError, match="gt point"):
        session.score(perfect_text(), [(1.0, 2.0, 3.0)], SIZE)


def test_ids_are_monotonic_per_session(session):
    results = session.score_group([perfect_text()] * 5, GT, SIZE)
    numbers = [int(r.id[1:]) for r in results]
    assert numbers == sorted(numbers)
    assert len(set(numbers)) == 5
    later = session.score(perfect_text(), GT, SIZE)
    assert int(later.id[1:]) > numbers[-1]


def test_close_is_idempotent(session):
    session.close()
    session.close()
    with pytest.raises(SessionError):
        session.score(perfect_text(), GT, SIZE)


def test_tcp_connect_mode():
    server = start_tcp_server("127.0.0.1", 0, RewardConfig(), max_workers=4)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address
        with ClientSession.connect(host, port, timeout=30.0) as session:
            results = session.score_group([perfect_text(), "junk"], GT, SIZE)
            assert [r.total for r in results] == [9.0, -2.0]
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def _fake_server(handler):
    """One-connection line server running handler(lines, wfile) after EOF-less
    streaming reads; returns (host, port, thread)."""
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)

    def run():
        conn, _ = listener.accept()
        with conn:
            handler(conn.makefile("r", encoding="utf-8"), conn.makefile("w", encoding="utf-8"))
        listener.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return listener.getsockname(), thread


def test_order_preserved_under_wire_reversal():
    # The fake scorer answers each batch of 3 in reverse arrival order; the
    # client must still return results in input order.
    def handler(rfile, wfile):
        batch = [json.loads(rfile.readline()) for _ in range(3)]
        for req in reversed(batch):
            response = {
                "id": req["id"],
                "rewards": {"total": float(len(req["response_text"]))},
                "context": None,
                "format": {"structure_ok": False, "entries_total": 0, "entries_well_formed": 0},
            }
            wfile.write(json.dumps(response) + "\n")
        wfile.flush()

    (host, port), thread = _fake_server(handler)
    with ClientSession.connect(host, port, timeout=30.0) as session:
        results = session.score_group(["a", "bb", "ccc"], GT, SIZE)
    assert [r.total for r in results] == [1.0, 2.0, 3.0]
    thread.join(timeout=5)


def test_timeout_is_per_item():
    release = threading.Event()

    def handler(rfile, wfile):
        rfile.readline()  # swallow the request; stay silent but connected
        release.wait(timeout=10)

    (host, port), thread = _fake_server(handler)
    session = ClientSession.connect(host, port, timeout=0.3)
    try:
        with pytest.raises(ScoreTimeout):
            session.score("anything", GT, SIZE)
    finally:
        release.set()
        session.close()
        thread.join(timeout=5)


def test_close_fails_pending_request():
    release = threading.Event()

    def handler(rfile, wfile):
        rfile.readline()
        release.wait(timeout=10)

    (host, port), thread = _fake_server(handler)
    session = ClientSession.connect(host, port, timeout=30.0)
    errors = []

    def caller():
        try:
            session.score("anything", GT, SIZE)
        except (SessionError, ScoringError) as exc:
            errors.append(exc)

    worker = threading.Thread(target=caller)
    worker.start()
    import time

    time.sleep(0.2)  # let the request reach the wire
    session.close()
    worker.join(timeout=10)
    release.set()
    thread.join(timeout=5)
    assert len(errors) == 1 and isinstance(errors[0], SessionError)
