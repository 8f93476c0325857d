"""Message generators and a raw socket reader shared by protocol tests."""
import socket
import string

import numpy as np
from hypothesis import strategies as st

from cvguard.net.protocol import WireMessage

UPPER = string.ascii_uppercase
KEY_CHARS = string.ascii_lowercase + string.digits + "_"
VALUE_CHARS = "".join(chr(c) for c in range(0x21, 0x7F))

_verb_part = st.builds(lambda a, b: a + b, st.sampled_from(UPPER),
                       st.text(UPPER + string.digits + "_", max_size=8))
verbs = st.one_of(_verb_part, st.builds(lambda a, b: f"{a}:{b}", _verb_part, _verb_part))
keys = st.builds(lambda a, b: a + b, st.sampled_from(string.ascii_lowercase + "_"),
                 st.text(KEY_CHARS, max_size=10))
named_values = st.text(VALUE_CHARS, min_size=1, max_size=20)
positional_values = st.text(VALUE_CHARS.replace("=", ""), min_size=1, max_size=20)
tokens = st.one_of(st.tuples(keys, named_values), st.tuples(st.just(""), positional_values))
messages = st.builds(lambda v, a: WireMessage(v, tuple(a)), verbs, st.lists(tokens, max_size=8))


def random_message(rng) -> WireMessage:
    """Numpy-driven twin of ``messages`` for fixed-count loops."""
    def word(first, rest, n):
        return rng.choice(list(first)) + "".join(rng.choice(list(rest), size=n))

    verb = word(UPPER, UPPER + string.digits + "_", rng.integers(0, 8))
    if rng.random() < 0.5:
        verb += ":" + word(UPPER, UPPER + string.digits + "_", rng.integers(0, 8))
    args = []
    for _ in range(rng.integers(0, 8)):
        if rng.random() < 0.6:
            key = word(string.ascii_lowercase + "_", KEY_CHARS, rng.integers(0, 10))
            args.append((key, word(VALUE_CHARS, VALUE_CHARS, rng.integers(0, 20))))
        else:
            pos = VALUE_CHARS.replace("=", "")
            args.append(("", word(pos, pos, rng.integers(0, 20))))
    return WireMessage(verb, tuple(args))


KNOWN = [b"HELLO", b"STATUS", b"MFC:SET", b"PUMP:DISPENSE", b"PUMP:WITHDRAW", b"CELL:FAULT",
         b"CELL:SYNC", b"POT:CONFIGURE", b"POT:RUN", b"FROB", b"ERR", b"OK"]


def fuzz_line(rng) -> bytes:
    """One request line (newline excluded) drawn from a mix of garbage and near-valid shapes."""
    kind = rng.integers(0, 6)
    if kind == 0:  # arbitrary bytes, newlines stripped
        raw = rng.integers(0, 256, rng.integers(0, 120), dtype=np.uint8).tobytes()
        return raw.replace(b"\n", b"")
    if kind == 1:  # printable ascii soup
        return bytes(rng.integers(0x20, 0x7F, rng.integers(0, 80), dtype=np.uint8))
    if kind == 2:  # known verb with mangled arguments
        verb = KNOWN[rng.integers(len(KNOWN))]
        junk = [b"ml=" + str(rng.normal() * 100).encode(), b"sccm=-1", b"=x", b"a==b", b"\xff\xfe",
                b"volume_ml=1e400", b"seed=abc", b"x" * int(rng.integers(1, 30)), b"", b"disconnected"]
        picks = [junk[j] for j in rng.integers(0, len(junk), rng.integers(0, 4))]
        return b" ".join([verb, *picks])
    if kind == 3:  # overlong
        return b"A" * int(rng.integers(4090, 9000))
    if kind == 4:  # whitespace-only and separators
        return bytes(rng.choice([0x20, 0x09, 0x0D], size=rng.integers(0, 6)).astype(np.uint8))
    # lower-case or mixed-case verbs
    return bytes(rng.choice(list(b"helloHELLO:stat"), size=rng.integers(1, 12)).astype(np.uint8))


class RawConn:
    """Socket wrapper that reads whole responses, treating a DATA...END stream as one."""

    def __init__(self, port, timeout=10.0):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.rfile = self.sock.makefile("rb")

    def send(self, raw: bytes):
        self.sock.sendall(raw + b"\n")

    def line(self) -> bytes:
        out = self.rfile.readline()
        if not out:
            raise ConnectionError("closed")
        return out.rstrip(b"\n")

    def response(self) -> list[bytes]:
        first = self.line()
        if not first.startswith(b"DATA "):
            return [first]
        lines = [first]
        while not lines[-1].startswith(b"END "):
            lines.append(self.line())
        return lines

    def close(self):
        self.rfile.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
