"""Synchronous client for the newline-delimited JSON scoring service.

A session owns one transport (a spawned scorer child process or a TCP
connection) and a background reader thread. Requests are written one JSON
object per line with session-unique monotonic ids; the reader resolves
responses back to waiting callers by id, so wire responses may arrive in
any order.

No scoring logic lives here: every value comes back over the wire.
"""

import json
import socket
import subprocess
import sys
import threading
from dataclasses import dataclass


class SessionError(RuntimeError):
    """Transport-level failure: session closed or connection lost."""


class ScoringError(RuntimeError):
    """The service answered with an error line for this request."""


class ScoreTimeout(ScoringError):
    """No response arrived within the session timeout."""


@dataclass(frozen=True)
class ScoredResponse:
    """One response line: the echoed id plus the service's three payload
    sections (reward values, match counts, format diagnosis)."""

    id: str
    rewards: dict
    context: dict | None
    format: dict

    @property
    def total(self) -> float:
        return self.rewards["total"]


class _StdioTransport:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, command: list[str]):
        self._proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise SessionError("scorer process is gone") from exc

    def readline(self) -> str:
        return self._proc.stdout.readline()

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc.stdout.close()


class _TcpTransport:
    def __init__(self, host: str, port: int, connect_timeout: float):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("r", encoding="utf-8")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise SessionError("scoring connection lost") from exc

    def readline(self) -> str:
        try:
            return self._reader.readline()
        except (OSError, ValueError):
            return ""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._reader.close()
        self._sock.close()


class _Waiter:
    __slots__ = ("event", "payload", "error")

    def __init__(self):
        self.event = threading.Event()
        self.payload = None
        self.error = None


class ClientSession:
    """One scoring session: issue requests, collect responses by id.

    Use from a single caller; the internal reader thread is the only other
    actor. close() is idempotent and fails any in-flight requests.
    """

    def __init__(self, transport, timeout: float = 30.0):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self._transport = transport
        self._timeout = timeout
        self._lock = threading.Lock()
        self._pending: dict[str, _Waiter] = {}
        self._counter = 0
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    @classmethod
    def spawn(cls, command: list[str] | None = None, timeout: float = 30.0) -> "ClientSession":
        """Start a scorer child process (default: the installed detcount
        service in stdio mode) and attach to it."""
        command = command or [sys.executable, "-m", "detcount", "serve"]
        return cls(_StdioTransport(command), timeout=timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "ClientSession":
        return cls(_TcpTransport(host, port, connect_timeout=timeout), timeout=timeout)

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- wire plumbing ------------------------------------------------

    def _read_loop(self) -> None:
        while True:
            line = self._transport.readline()
            if not line:
                break
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                continue  # not ours to crash on; ids it carried will time out
            rid = obj.get("id") if isinstance(obj, dict) else None
            with self._lock:
                waiter = self._pending.pop(rid, None)
            if waiter is None:
                continue
            if "error" in obj:
                waiter.error = ScoringError(obj["error"])
            else:
                waiter.payload = obj
            waiter.event.set()
        self._fail_pending(SessionError("session closed before a response arrived"))

    def _fail_pending(self, error: Exception) -> None:
        with self._lock:
            waiters = list(self._pending.values())
            self._pending.clear()
        for waiter in waiters:
            waiter.error = error
            waiter.event.set()

    def _submit(self, response_text, gt_points, image_size, overrides) -> tuple[str, _Waiter]:
        request = {
            "id": None,
            "response_text": response_text,
            "gt_points": [list(p) for p in gt_points],
            "image_size": list(image_size),
        }
        if overrides:
            request["overrides"] = dict(overrides)
        waiter = _Waiter()
        with self._lock:
            if self._closed:
                raise SessionError("session is closed")
            self._counter += 1
            rid = f"c{self._counter}"
            request["id"] = rid
            self._pending[rid] = waiter
        try:
            self._transport.send_line(json.dumps(request))
        except SessionError:
            with self._lock:
                self._pending.pop(rid, None)
            raise
        return rid, waiter

    def _await(self, rid: str, waiter: _Waiter) -> ScoredResponse:
        if not waiter.event.wait(self._timeout):
            with self._lock:
                self._pending.pop(rid, None)
            raise ScoreTimeout(f"request {rid} timed out after {self._timeout}s")
        if waiter.error is not None:
            raise waiter.error
        obj = waiter.payload
        return ScoredResponse(
            id=obj["id"],
            rewards=obj["rewards"],
            context=obj["context"],
            format=obj["format"],
        )

    # -- public surface -----------------------------------------------

    def score(self, response_text: str, gt_points, image_size, overrides=None) -> ScoredResponse:
        rid, waiter = self._submit(response_text, gt_points, image_size, overrides)
        return self._await(rid, waiter)

    def score_group(self, responses, gt_points, image_size, overrides=None) -> list[ScoredResponse]:
        """Score a rollout group of candidate texts against one shared scene.

        All requests go out before any response is awaited, so the wire may
        interleave freely; results come back in input order.
        """
        issued = [
            self._submit(text, gt_points, image_size, overrides) for text in responses
        ]
        return [self._await(rid, waiter) for rid, waiter in issued]

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        self._transport.close()
        self._fail_pending(SessionError("session closed with the request pending"))
        self._reader.join(timeout=10)
