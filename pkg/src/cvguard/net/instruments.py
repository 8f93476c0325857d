"""Simulated potentiostat, pump and mass-flow controller served over TCP.

Each server is one instrument kind.  Servers hosted in the same process
may share one :class:`CellState`; every mutation goes through the cell's
lock, so concurrent clients never lose an update.
"""
from __future__ import annotations

import enum
import logging
import math
import socketserver
import threading
import time

from .. import voltagram
from ..voltagram import CellCondition, SweepError, SweepProgram
from . import protocol
from .protocol import E_ARG, E_INTERNAL, E_STATE, E_UNKNOWN, MAX_LINE, ProtocolError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
STREAM_CHUNK = 256


class InstrumentKind(str, enum.Enum):
    POTENTIOSTAT = "potentiostat"
    PUMP = "pump"
    MFC = "mfc"

    @classmethod
    def parse(cls, text: str) -> "InstrumentKind":
        key = text.strip().lower()
        if key in ("mass-flow-controller", "massflowcontroller", "mass_flow_controller"):
            key = "mfc"
        return cls(key)


class CellState:
    """Liquid volume, gas flow and injected fault of one electrochemical cell."""

    def __init__(self, capacity_ml=50.0, low_threshold_ml=5.0, volume_ml=0.0, gas_flow_sccm=0.0):
        if not 0 <= volume_ml <= capacity_ml:
            raise ValueError("volume must lie within [0, capacity]")
        self.capacity_ml = float(capacity_ml)
        self.low_threshold_ml = float(low_threshold_ml)
        self._volume = float(volume_ml)
        self._flow = float(gas_flow_sccm)
        self._fault = CellCondition.NORMAL
        self._lock = threading.Lock()

    def transfer(self, direction: str, ml: float):
        """Apply a signed transfer; returns (new volume, clamped?)."""
        if not (ml > 0 and math.isfinite(ml)):
            raise ValueError("ml must be positive")
        sign = {"dispense": 1.0, "withdraw": -1.0}[direction]
        with self._lock:
            target = self._volume + sign * ml
            new = min(max(target, 0.0), self.capacity_ml)
            self._volume = new
            return new, new != target

    def set_flow(self, sccm: float):
        if not sccm >= 0:
            raise ValueError("negative flow")
        with self._lock:
            self._flow = float(sccm)

    def set_fault(self, fault: CellCondition):
        with self._lock:
            self._fault = CellCondition(fault)

    def sync(self, volume_ml=None, gas_flow_sccm=None):
        with self._lock:
            if volume_ml is not None:
                if not 0 <= volume_ml <= self.capacity_ml:
                    raise ValueError("volume outside [0, capacity]")
                self._volume = float(volume_ml)
            if gas_flow_sccm is not None:
                if not gas_flow_sccm >= 0:
                    raise ValueError("negative flow")
                self._flow = float(gas_flow_sccm)

    def _effective(self):
        if self._fault is CellCondition.DISCONNECTED:
            return CellCondition.DISCONNECTED
        if self._volume < self.low_threshold_ml:
            return CellCondition.LOW_VOLUME
        return self._fault

    @property
    def volume_ml(self):
        return self._volume

    @property
    def gas_flow_sccm(self):
        return self._flow

    @property
    def fault(self) -> CellCondition:
        """Condition the potentiostat will measure under right now."""
        with self._lock:
            return self._effective()

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "volume_ml": self._volume,
                "gas_flow_sccm": self._flow,
                "fault": self._effective().value,
            }


class Potentiostat:
    """Configured sweep plus run lifecycle (unconfigured -> idle <-> running)."""

    def __init__(self):
        self.program: SweepProgram | None = None
        self.seed = 0
        self.noise_scale = voltagram.DEFAULT_NOISE
        self.realtime = False
        self.state = "unconfigured"
        self._lock = threading.Lock()


def _number(msg, key, default=None, kind=float):
    raw = msg.get(key)
    if raw is None:
        if default is None:
            raise ProtocolError(E_ARG, f"missing {key}")
        return default
    try:
        val = kind(raw)
    except ValueError:
        raise ProtocolError(E_ARG, f"bad {key}") from None
    if kind is float and not math.isfinite(val):
        raise ProtocolError(E_ARG, f"bad {key}")
    return val


def _flag(msg, key, default=False):
    raw = msg.get(key)
    if raw is None:
        return default
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise ProtocolError(E_ARG, f"bad {key}")


COMMON_VERBS = {"HELLO", "STATUS", "CELL:FAULT", "CELL:SYNC"}
KIND_VERBS = {
    InstrumentKind.POTENTIOSTAT: {"POT:CONFIGURE", "POT:RUN"},
    InstrumentKind.PUMP: {"PUMP:DISPENSE", "PUMP:WITHDRAW"},
    InstrumentKind.MFC: {"MFC:SET"},
}
ALL_VERBS = COMMON_VERBS.union(*KIND_VERBS.values())


class Instrument:
    """Request dispatcher for one instrument kind; transport-independent."""

    def __init__(self, kind: InstrumentKind, cell: CellState):
        self.kind = InstrumentKind(kind)
        self.cell = cell
        self.pot = Potentiostat()

    def handle(self, msg: protocol.WireMessage):
        """Return a response line, or an iterator of lines for a stream."""
        if msg.verb not in ALL_VERBS:
            raise ProtocolError(E_UNKNOWN, "unknown verb")
        if msg.verb not in COMMON_VERBS and msg.verb not in KIND_VERBS[self.kind]:
            raise ProtocolError(E_UNKNOWN, f"verb not supported by {self.kind.value}")
        handler = getattr(self, "do_" + msg.verb.replace(":", "_").lower())
        return handler(msg)

    def do_hello(self, msg):
        return protocol.ok(self.kind.value, PROTOCOL_VERSION)

    def do_status(self, msg):
        fields = {"kind": self.kind.value, **self.cell.snapshot()}
        if self.kind is InstrumentKind.POTENTIOSTAT:
            fields["state"] = self.pot.state
        return protocol.ok(**fields)

    def do_cell_fault(self, msg):
        pos = msg.positional
        raw = pos[0] if len(pos) == 1 else msg.get("fault")
        if raw is None:
            raise ProtocolError(E_ARG, "expected one fault kind")
        try:
            cond = CellCondition.parse(raw)
        except ValueError:
            raise ProtocolError(E_ARG, f"unknown fault {raw}") from None
        self.cell.set_fault(cond)
        return protocol.ok(fault=cond.value)

    def do_cell_sync(self, msg):
        vol = _number(msg, "volume_ml", default=math.nan)
        flow = _number(msg, "gas_flow_sccm", default=math.nan)
        try:
            self.cell.sync(None if math.isnan(vol) else vol, None if math.isnan(flow) else flow)
        except ValueError as exc:
            raise ProtocolError(E_ARG, str(exc)) from None
        return protocol.ok(**self.cell.snapshot())

    def _transfer(self, msg, direction):
        ml = _number(msg, "ml")
        if ml <= 0:
            raise ProtocolError(E_ARG, "ml must be positive")
        volume, clamped = self.cell.transfer(direction, ml)
        return protocol.ok(volume_ml=volume, clamped=clamped)

    def do_pump_dispense(self, msg):
        return self._transfer(msg, "dispense")

    def do_pump_withdraw(self, msg):
        return self._transfer(msg, "withdraw")

    def do_mfc_set(self, msg):
        sccm = _number(msg, "sccm")
        if sccm < 0:
            raise ProtocolError(E_ARG, "negative flow")
        self.cell.set_flow(sccm)
        return protocol.ok(gas_flow_sccm=self.cell.gas_flow_sccm)

    def do_pot_configure(self, msg):
        d = SweepProgram()
        try:
            program = SweepProgram(
                v_min=_number(msg, "v_min", d.v_min),
                v_max=_number(msg, "v_max", d.v_max),
                scan_rate=_number(msg, "scan_rate", d.scan_rate),
                cycles=_number(msg, "cycles", d.cycles, kind=int),
                dt=_number(msg, "dt", d.dt),
            )
        except SweepError as exc:
            raise ProtocolError(E_ARG, f"{exc.field}: {exc}") from None
        seed = _number(msg, "seed", 0, kind=int)
        noise = _number(msg, "noise_scale", voltagram.DEFAULT_NOISE)
        if noise < 0:
            raise ProtocolError(E_ARG, "noise_scale must be >= 0")
        realtime = _flag(msg, "realtime")
        if program.n_samples > 10_000_000:
            raise ProtocolError(E_ARG, "sweep too long")
        pot = self.pot
        with pot._lock:
            if pot.state == "running":
                raise ProtocolError(E_STATE, "run in progress")
            pot.program, pot.seed, pot.noise_scale, pot.realtime = program, seed, noise, realtime
            pot.state = "idle"
        return protocol.ok("configured", samples=program.n_samples)

    def do_pot_run(self, msg):
        pot = self.pot
        with pot._lock:
            if pot.state == "unconfigured":
                raise ProtocolError(E_STATE, "not configured")
            if pot.state == "running":
                raise ProtocolError(E_STATE, "run in progress")
            seed = _number(msg, "seed", pot.seed, kind=int)
            program, noise, realtime = pot.program, pot.noise_scale, pot.realtime
            condition = self.cell.fault
            pot.state = "running"
        try:
            gram = voltagram.simulate(program, condition, seed, noise)
        except BaseException:
            pot.state = "idle"
            raise
        return self._stream(gram, realtime)

    def _stream(self, gram, realtime):
        pot = self.pot
        try:
            n = len(gram)
            for k, (t, v, i) in enumerate(gram.samples):
                if realtime and k:
                    time.sleep(gram.program.dt)
                yield protocol.data_line(t, v, i)
            yield f"END {n}"
        finally:
            with pot._lock:
                pot.state = "idle"


class _Handler(socketserver.StreamRequestHandler):
    timeout = None
    disable_nagle_algorithm = True  # small request/reply lines; avoid delayed-ACK stalls

    def _send(self, lines):
        self.wfile.write("".join(line + "\n" for line in lines).encode("utf-8"))

    def handle(self):
        inst: Instrument = self.server.instrument
        while True:
            try:
                raw = self.rfile.readline(MAX_LINE + 1)
            except (ConnectionError, OSError):
                return
            if not raw:
                return
            try:
                if len(raw) > MAX_LINE:
                    while raw and not raw.endswith(b"\n"):
                        raw = self.rfile.readline(MAX_LINE + 1)
                    raise ProtocolError(E_ARG, "line too long")
                reply = inst.handle(protocol.parse_line(raw))
            except ProtocolError as exc:
                reply = protocol.err(exc.code, exc.message)
            except Exception as exc:  # keep the connection alive on bugs
                log.exception("internal error handling %r", raw[:80])
                reply = protocol.err(E_INTERNAL, f"internal error: {type(exc).__name__}")
            try:
                if isinstance(reply, str):
                    self._send([reply])
                else:
                    self._stream(reply)
            except (ConnectionError, OSError):
                return

    def _stream(self, lines):
        buf = []
        try:
            for line in lines:
                buf.append(line)
                if len(buf) >= STREAM_CHUNK or self.server.instrument.pot.realtime:
                    self._send(buf)
                    buf = []
            self._send(buf)
        finally:
            lines.close()  # on disconnect this resets the potentiostat to idle


class InstrumentServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, kind, port=0, cell: CellState | None = None, host="127.0.0.1"):
        self.instrument = Instrument(InstrumentKind(kind), cell if cell is not None else CellState())
        self._thread = None
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def address(self) -> str:
        return f"{self.server_address[0]}:{self.port}"

    def start(self):
        """Serve from a background thread; returns self for chaining."""
        self._thread = threading.Thread(target=self.serve_forever, name=f"{self.instrument.kind.value}-server",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(kind, port, cell: CellState | None = None, host="127.0.0.1"):
    """Blocking server loop for one instrument."""
    with InstrumentServer(kind, port, cell, host) as server:
        log.info("%s listening on %s", kind, server.address)
        server.serve_forever()
