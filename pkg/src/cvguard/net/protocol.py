"""Newline-delimited text protocol spoken by the instrument servers.

A request is ``VERB token token ...`` where each token is either
``key=value`` or a bare positional value.  Responses start with ``OK``,
``DATA``, ``END`` or ``ERR <code> <message>``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

MAX_LINE = 4096

E_UNKNOWN = 400
E_STATE = 409
E_ARG = 422
E_INTERNAL = 500

VERB_RE = re.compile(r"^[A-Z][A-Z0-9_]*(?::[A-Z][A-Z0-9_]*)?$")
KEY_RE = re.compile(r"^[a-z_][a-z0-9_]*$")
VALUE_RE = re.compile(r"^[!-~]+$")  # printable ASCII, no spaces


class ProtocolError(ValueError):
    def __init__(self, code: int, message: str):
        super().__init__(f"{code} {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class WireMessage:
    verb: str
    args: tuple[tuple[str, str], ...] = ()

    def get(self, key, default=None):
        for k, v in self.args:
            if k == key:
                return v
        return default

    @property
    def positional(self) -> list[str]:
        return [v for k, v in self.args if k == ""]

    @property
    def named(self) -> dict[str, str]:
        return {k: v for k, v in self.args if k}


def _check_token(key: str, value: str):
    if key and not KEY_RE.match(key):
        raise ProtocolError(E_ARG, f"bad key {key!r}")
    if not VALUE_RE.match(value):
        raise ProtocolError(E_ARG, "bad value")
    if not key and "=" in value:
        raise ProtocolError(E_ARG, "positional value contains '='")


def format_message(msg: WireMessage) -> str:
    """Serialize without the trailing newline; raises on unencodable content."""
    if not VERB_RE.match(msg.verb):
        raise ProtocolError(E_ARG, f"bad verb {msg.verb!r}")
    parts = [msg.verb]
    for key, value in msg.args:
        _check_token(key, value)
        parts.append(f"{key}={value}" if key else value)
    line = " ".join(parts)
    if len(line.encode()) + 1 > MAX_LINE:
        raise ProtocolError(E_ARG, "line too long")
    return line


def request(verb: str, *positional, **named) -> str:
    args = [("", str(p)) for p in positional]
    args += [(k, _fmt_value(v)) for k, v in named.items()]
    return format_message(WireMessage(verb, tuple(args)))


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_line(raw) -> WireMessage:
    """Parse one request line (bytes or str, trailing CR/LF allowed)."""
    if isinstance(raw, (bytes, bytearray)):
        if len(raw.rstrip(b"\r\n")) + 1 > MAX_LINE:
            raise ProtocolError(E_ARG, "line too long")
        try:
            raw = bytes(raw).decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError(E_ARG, "invalid utf-8") from None
    line = raw.rstrip("\r\n")
    if "\n" in line or "\r" in line:
        raise ProtocolError(E_ARG, "embedded newline")
    if len(line.encode()) + 1 > MAX_LINE:
        raise ProtocolError(E_ARG, "line too long")
    tokens = line.split(" ")
    if not line.strip():
        raise ProtocolError(E_UNKNOWN, "empty request")
    if any(t == "" for t in tokens):
        raise ProtocolError(E_ARG, "tokens must be separated by single spaces")
    verb = tokens[0]
    if not VERB_RE.match(verb):
        raise ProtocolError(E_UNKNOWN, "unknown verb")
    args = []
    for tok in tokens[1:]:
        key, eq, value = tok.partition("=")
        if not eq:
            key, value = "", tok
        elif not key:
            raise ProtocolError(E_ARG, "empty key")
        _check_token(key, value)
        args.append((key, value))
    return WireMessage(verb, tuple(args))


def ok(*parts, **fields) -> str:
    items = [str(p) for p in parts] + [f"{k}={_fmt_value(v)}" for k, v in fields.items()]
    return " ".join(["OK", *items])


def err(code: int, message: str) -> str:
    message = " ".join(str(message).split()) or "error"
    return f"ERR {code} {message}"[:MAX_LINE - 1]


def data_line(t: float, v: float, i: float) -> str:
    return f"DATA {t!r} {v!r} {i!r}"


def parse_fields(text: str) -> dict[str, str]:
    """key=value tokens of an OK response body."""
    out = {}
    for tok in text.split():
        k, eq, v = tok.partition("=")
        if eq:
            out[k] = v
    return out
