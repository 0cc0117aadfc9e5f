"""Streaming scoring service speaking newline-delimited JSON.

One request object per line in, one response object per line out. Requests
are independent and scored on a worker pool, so responses may come back in
any order; each line is written whole under a lock and carries the request
id. A bad line produces an error line instead of killing the loop.
"""

import json
import math
import socketserver
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TextIO

from .config import apply_reward_overrides
from .rewards import RewardConfig, score_text

DEFAULT_WORKERS = 8

REQUEST_KEYS = frozenset({"id", "response_text", "gt_points", "image_size", "overrides"})


def _finite_pair(value, what: str) -> tuple[float, float]:
    ok = (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)
        and all(math.isfinite(c) for c in value)
    )
    if not ok:
        raise ValueError(f"{what} must be a pair of finite numbers")
    return float(value[0]), float(value[1])


def score_request(payload: object, cfg: RewardConfig) -> dict:
    """Score one decoded request and return the response payload.

    The service and the in-process path both come through here, so wire
    responses are byte-identical to local scoring by construction.
    """
    if not isinstance(payload, dict):
        raise ValueError("request must be a JSON object")
    unknown = sorted(set(payload) - REQUEST_KEYS)
    if unknown:
        raise ValueError(f"unknown request fields: {unknown}")
    rid = payload.get("id")
    if not isinstance(rid, str):
        raise ValueError("id must be a string")
    text = payload.get("response_text")
    if not isinstance(text, str):
        raise ValueError("response_text must be a string")
    raw_points = payload.get("gt_points")
    if not isinstance(raw_points, list):
        raise ValueError("gt_points must be a list of [x, y] pairs")
    gt = tuple(_finite_pair(p, "each gt point") for p in raw_points)
    size = _finite_pair(payload.get("image_size"), "image_size")
    if min(size) <= 0:
        raise ValueError("image_size must be positive")

    overrides = payload.get("overrides")
    if overrides is not None and not isinstance(overrides, dict):
        raise ValueError("overrides must be an object")
    effective = apply_reward_overrides(cfg, overrides or {})

    breakdown, context, report = score_text(text, gt, effective, image_size=size)
    return {
        "id": rid,
        "rewards": breakdown.as_dict(),
        "context": None
        if context is None
        else {
            "n_gt": context.n_gt,
            "n_pred": context.n_pred,
            "n_count": context.n_count,
            "n_valid": context.n_valid,
        },
        "format": {
            "structure_ok": report.structure_ok,
            "entries_total": report.entries_total,
            "entries_well_formed": report.entries_well_formed,
        },
    }


def encode_line(payload: dict) -> str:
    """Canonical single-line encoding; key order and spacing are fixed."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def handle_line(line: str, cfg: RewardConfig) -> str | None:
    """Turn one raw input line into one output line (None for blank input)."""
    stripped = line.strip()
    if not stripped:
        return None
    try:
        payload = json.loads(stripped)
    except (ValueError, RecursionError):
        return encode_line({"error": "malformed JSON", "id": None})
    rid = payload.get("id") if isinstance(payload, dict) else None
    if not isinstance(rid, str):
        rid = None
    try:
        return encode_line(score_request(payload, cfg))
    except Exception as exc:
        return encode_line({"error": str(exc), "id": rid})


def serve_stream(
    in_stream: Iterable[str],
    out_stream: TextIO,
    cfg: RewardConfig,
    max_workers: int = DEFAULT_WORKERS,
) -> int:
    """Pump requests from in_stream until end-of-input; returns lines written."""
    lock = threading.Lock()
    written = 0

    def emit(line: str) -> None:
        nonlocal written
        with lock:
            out_stream.write(line + "\n")
            out_stream.flush()
            written += 1

    def work(line: str) -> None:
        out = handle_line(line, cfg)
        if out is not None:
            emit(out)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for future in [pool.submit(work, line) for line in in_stream]:
            future.result()
    return written


class _ScoringTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, cfg: RewardConfig, max_workers: int):
        super().__init__(address, _ConnectionHandler)
        self.reward_config = cfg
        self.max_workers = max_workers


class _ConnectionHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: _ScoringTCPServer = self.server
        reader = (raw.decode("utf-8", errors="replace") for raw in self.rfile)
        writer = _Utf8LineWriter(self.wfile)
        try:
            serve_stream(reader, writer, server.reward_config, server.max_workers)
        except (OSError, ValueError):
            pass  # client went away mid-stream


class _Utf8LineWriter:
    """Text facade over a binary socket file; write() takes complete lines."""

    def __init__(self, raw):
        self._raw = raw

    def write(self, text: str) -> None:
        self._raw.write(text.encode("utf-8"))

    def flush(self) -> None:
        self._raw.flush()


def start_tcp_server(
    host: str, port: int, cfg: RewardConfig, max_workers: int = DEFAULT_WORKERS
) -> _ScoringTCPServer:
    """Bind and return a server; the caller drives serve_forever/shutdown."""
    return _ScoringTCPServer((host, port), cfg, max_workers)


def parse_listen_address(listen: str) -> tuple[str, int]:
    """Split "host:port" (host may be empty for all interfaces)."""
    host, sep, port_text = listen.rpartition(":")
    if not sep or not port_text.isdigit():
        raise ValueError("listen address must look like host:port")
    return host or "0.0.0.0", int(port_text)


def run_server(
    cfg: RewardConfig,
    listen: str | None,
    in_stream: TextIO,
    out_stream: TextIO,
    max_workers: int = DEFAULT_WORKERS,
    on_bound: Callable[[tuple[str, int]], None] | None = None,
) -> int:
    """Serve over stdio (listen is None) or a TCP listen address, until EOF
    or termination. Returns a process exit status."""
    if listen is None:
        serve_stream(in_stream, out_stream, cfg, max_workers)
        return 0
    server = start_tcp_server(*parse_listen_address(listen), cfg, max_workers)
    if on_bound is not None:
        on_bound(server.server_address)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
