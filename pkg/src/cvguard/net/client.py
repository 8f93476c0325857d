"""Line-protocol client with bounded connect retries."""
from __future__ import annotations

import logging
import socket
import time

import numpy as np

from . import protocol

log = logging.getLogger(__name__)

CONNECT_ATTEMPTS = 3
BACKOFF_BASE = 0.1


class RemoteError(RuntimeError):
    """The instrument answered ``ERR <code> <message>``."""

    def __init__(self, code: int, message: str):
        super().__init__(f"ERR {code} {message}")
        self.code = code
        self.message = message


class Unreachable(ConnectionError):
    pass


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = str(text).strip().rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint {text!r} is not host:port")
    try:
        num = int(port)
    except ValueError:
        raise ValueError(f"endpoint {text!r} has a non-numeric port") from None
    if not 0 < num < 65536:
        raise ValueError(f"endpoint {text!r} port out of range")
    return host, num


class InstrumentClient:
    def __init__(self, host: str, port: int, timeout: float = 10.0,
                 attempts: int = CONNECT_ATTEMPTS, backoff: float = BACKOFF_BASE):
        self.host, self.port = host, port
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._sock = None
        self._rfile = None

    @classmethod
    def for_endpoint(cls, endpoint: str, **kw) -> "InstrumentClient":
        host, port = parse_endpoint(endpoint)
        return cls(host, port, **kw)

    def connect(self):
        """Connect, retrying with exponential backoff before giving up."""
        last = None
        for attempt in range(self.attempts):
            try:
                sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            except OSError as exc:
                last = exc
                log.debug("connect %s:%s attempt %d failed: %s", self.host, self.port, attempt + 1, exc)
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * 2 ** attempt)
                continue
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
            self._rfile = sock.makefile("rb")
            return self
        raise Unreachable(f"{self.host}:{self.port} unreachable after {self.attempts} attempts: {last}")

    def close(self):
        if self._rfile is not None:
            self._rfile.close()
        if self._sock is not None:
            self._sock.close()
        self._sock = self._rfile = None

    def __enter__(self):
        if self._sock is None:
            self.connect()
        return self

    def __exit__(self, *exc):
        self.close()

    def send_line(self, line: str | bytes):
        if isinstance(line, str):
            line = line.encode("utf-8")
        self._sock.sendall(line + b"\n")

    def read_line(self) -> str:
        raw = self._rfile.readline()
        if not raw:
            raise ConnectionError("connection closed by instrument")
        return raw.decode("utf-8").rstrip("\n")

    def call(self, line: str) -> str:
        """Send one request; return the OK body or raise :class:`RemoteError`."""
        self.send_line(line)
        reply = self.read_line()
        return _check(reply)

    def command(self, verb: str, *positional, **named) -> dict:
        body = self.call(protocol.request(verb, *positional, **named))
        return protocol.parse_fields(body)

    def run(self, **named):
        """POT:RUN and collect the stream into (t, v, i) arrays."""
        self.send_line(protocol.request("POT:RUN", **named))
        rows = []
        while True:
            line = self.read_line()
            if line.startswith("DATA "):
                rows.append([float(x) for x in line.split()[1:4]])
            elif line.startswith("END "):
                count = int(line.split()[1])
                if count != len(rows):
                    raise RemoteError(500, f"stream declared {count} samples, got {len(rows)}")
                break
            else:
                _check(line)
                raise RemoteError(500, f"unexpected line in stream: {line[:60]!r}")
        data = np.array(rows, dtype=float).reshape(-1, 3)
        return data[:, 0], data[:, 1], data[:, 2]


def _check(reply: str) -> str:
    if reply.startswith("ERR "):
        parts = reply.split(" ", 2)
        try:
            code = int(parts[1])
        except (IndexError, ValueError):
            code = 500
        raise RemoteError(code, parts[2] if len(parts) > 2 else "")
    if reply == "OK" or reply.startswith("OK "):
        return reply[3:]
    raise RemoteError(500, f"unexpected reply {reply[:60]!r}")
