"""Declarative multi-round CV workflow against remote instruments.

Each round runs the plan steps in order, spools the measured voltammogram
as a CSV and, when a model is given, records the normality verdict.  When
the instruments live in separate processes the orchestrator is the source
of truth for cell volume and gas flow, pushed to the potentiostat with
``CELL:SYNC`` before every run.
"""
from __future__ import annotations

import configparser
import datetime as _dt
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .. import eot, features, voltagram
from ..voltagram import SweepError, SweepProgram, Voltammogram
from .client import InstrumentClient, RemoteError, Unreachable, parse_endpoint

log = logging.getLogger(__name__)

SPOOL_ENV = "CVGUARD_SPOOL"
STEPS = ("gas", "fill", "configure", "run", "withdraw")
STEP_INSTRUMENT = {"gas": "mfc", "fill": "pump", "withdraw": "pump",
                   "configure": "potentiostat", "run": "potentiostat"}
DEFAULT_STEPS = STEPS


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    endpoints: dict[str, str]
    spool_dir: Path
    steps: tuple[str, ...] = DEFAULT_STEPS
    rounds: int = 1
    seed: int = 0
    program: SweepProgram = field(default_factory=SweepProgram)
    noise_scale: float = voltagram.DEFAULT_NOISE
    fill_ml: float = 20.0
    withdraw_ml: float = 20.0
    gas_sccm: float = 20.0
    fault: str | None = None
    model_path: Path | None = None
    manifest_path: Path | None = None
    realtime: bool = False

    def validate(self):
        if self.rounds < 1:
            raise ConfigError("plan.rounds", "must be >= 1")
        for step in self.steps:
            if step not in STEPS:
                raise ConfigError("plan.steps", f"unknown step {step!r}")
            kind = STEP_INSTRUMENT[step]
            if kind not in self.endpoints:
                raise ConfigError(f"endpoints.{kind}", f"missing endpoint (needed by step {step!r})")
        for kind, ep in self.endpoints.items():
            try:
                parse_endpoint(ep)
            except ValueError as exc:
                raise ConfigError(f"endpoints.{kind}", str(exc)) from None
        if "run" in self.steps and "configure" not in self.steps:
            raise ConfigError("plan.steps", "'run' needs a 'configure' step")
        for name in ("fill_ml", "withdraw_ml"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"plan.{name}", "must be positive")
        if not self.gas_sccm >= 0:
            raise ConfigError("plan.gas_sccm", "must be >= 0")
        if self.fault is not None:
            try:
                voltagram.CellCondition.parse(self.fault)
            except ValueError:
                raise ConfigError("plan.fault", f"unknown condition {self.fault!r}") from None
        return self

    @property
    def manifest(self) -> Path:
        return self.manifest_path or self.spool_dir / "manifest.json"


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"bad value {raw!r}") from None


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def load_config(path) -> RunConfig:
    """Read an INI-style config (``[endpoints]``, ``[plan]``, ``[sweep]``, ``[output]``)."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed config: {exc}") from None
    base = path.parent

    endpoints = dict(cp.items("endpoints")) if cp.has_section("endpoints") else {}
    steps_raw = cp.get("plan", "steps", fallback=",".join(DEFAULT_STEPS))
    steps = tuple(s.strip() for s in steps_raw.replace(",", " ").split() if s.strip())

    sweep_defaults = SweepProgram()
    try:
        program = SweepProgram(
            v_min=_get(cp, "sweep", "v_min", float, sweep_defaults.v_min),
            v_max=_get(cp, "sweep", "v_max", float, sweep_defaults.v_max),
            scan_rate=_get(cp, "sweep", "scan_rate", float, sweep_defaults.scan_rate),
            cycles=_get(cp, "sweep", "cycles", int, sweep_defaults.cycles),
            dt=_get(cp, "sweep", "dt", float, sweep_defaults.dt),
        )
    except SweepError as exc:
        raise ConfigError(f"sweep.{exc.field}", str(exc)) from None

    spool = cp.get("output", "spool", fallback=os.environ.get(SPOOL_ENV))
    if not spool:
        raise ConfigError("output.spool", f"no spool directory (set it or ${SPOOL_ENV})")
    model = cp.get("output", "model", fallback=None)
    manifest = cp.get("output", "manifest", fallback=None)

    def rel(p):
        p = Path(p).expanduser()
        return p if p.is_absolute() else base / p

    cfg = RunConfig(
        endpoints=endpoints,
        spool_dir=rel(spool),
        steps=steps,
        rounds=_get(cp, "plan", "rounds", int, 1),
        seed=_get(cp, "plan", "seed", int, 0),
        program=program,
        noise_scale=_get(cp, "plan", "noise_scale", float, voltagram.DEFAULT_NOISE),
        fill_ml=_get(cp, "plan", "fill_ml", float, 20.0),
        withdraw_ml=_get(cp, "plan", "withdraw_ml", float, 20.0),
        gas_sccm=_get(cp, "plan", "gas_sccm", float, 20.0),
        fault=cp.get("plan", "fault", fallback=None) or None,
        model_path=rel(model) if model else None,
        manifest_path=rel(manifest) if manifest else None,
        realtime=_get(cp, "plan", "realtime", _bool, False),
    )
    return cfg.validate()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _write_json_atomic(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


class Orchestrator:
    def __init__(self, config: RunConfig, model: eot.EotModel | None = None):
        self.config = config.validate()
        if model is None and config.model_path is not None:
            model = eot.load(config.model_path)
        self.model = model
        self.volume_ml = None
        self.gas_sccm = None

    def run(self) -> dict:
        """Execute every round; returns the manifest (also written to disk)."""
        cfg = self.config
        cfg.spool_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": "cvguard-manifest",
            "version": 1,
            "plan": {
                "steps": list(cfg.steps),
                "rounds": cfg.rounds if cfg.steps else 0,
                "seed": cfg.seed,
                "fill_ml": cfg.fill_ml,
                "withdraw_ml": cfg.withdraw_ml,
                "gas_sccm": cfg.gas_sccm,
                "noise_scale": cfg.noise_scale,
                "fault": cfg.fault,
                "program": cfg.program.as_dict(),
            },
            "endpoints": dict(sorted(cfg.endpoints.items())),
            "spool": str(cfg.spool_dir),
            "model": str(cfg.model_path) if cfg.model_path else None,
            "started_at": _now(),
            "rounds": [],
        }
        if cfg.steps:
            for k in range(cfg.rounds):
                manifest["rounds"].append(self.run_round(k))
        manifest["finished_at"] = _now()
        _write_json_atomic(cfg.manifest, manifest)
        return manifest

    def _clients(self):
        needed = sorted({STEP_INSTRUMENT[s] for s in self.config.steps})
        clients = {}
        try:
            for kind in needed:
                clients[kind] = InstrumentClient.for_endpoint(self.config.endpoints[kind]).connect()
        except BaseException:
            for c in clients.values():
                c.close()
            raise
        return clients

    def run_round(self, k: int) -> dict:
        cfg = self.config
        seed = cfg.seed + k
        record = {"round": k + 1, "seed": seed, "status": "ok", "file": None, "samples": None,
                  "verdict": None, "error": None, "started_at": _now()}
        clients = {}
        try:
            clients = self._clients()
            if cfg.fault and k == 0:
                clients.get("potentiostat", next(iter(clients.values()))).command(
                    "CELL:FAULT", voltagram.CellCondition.parse(cfg.fault).value)
            for step in cfg.steps:
                getattr(self, "_step_" + step)(clients, seed, record)
        except Unreachable as exc:
            record.update(status="failed", error=f"unreachable: {exc}")
            log.warning("round %d aborted: %s", k + 1, exc)
        except (RemoteError, ConnectionError, OSError, ValueError, features.FeatureError) as exc:
            record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            log.warning("round %d aborted: %s", k + 1, exc)
        finally:
            for c in clients.values():
                c.close()
        record["finished_at"] = _now()
        return record

    def _step_gas(self, clients, seed, record):
        reply = clients["mfc"].command("MFC:SET", sccm=self.config.gas_sccm)
        self.gas_sccm = float(reply["gas_flow_sccm"])

    def _step_fill(self, clients, seed, record):
        reply = clients["pump"].command("PUMP:DISPENSE", ml=self.config.fill_ml)
        self.volume_ml = float(reply["volume_ml"])

    def _step_withdraw(self, clients, seed, record):
        reply = clients["pump"].command("PUMP:WITHDRAW", ml=self.config.withdraw_ml)
        self.volume_ml = float(reply["volume_ml"])

    def _step_configure(self, clients, seed, record):
        cfg = self.config
        clients["potentiostat"].command(
            "POT:CONFIGURE", **cfg.program.as_dict(), seed=seed,
            noise_scale=cfg.noise_scale, realtime=cfg.realtime)

    def _step_run(self, clients, seed, record):
        cfg = self.config
        pot = clients["potentiostat"]
        sync = {}
        if self.volume_ml is not None:
            sync["volume_ml"] = self.volume_ml
        if self.gas_sccm is not None:
            sync["gas_flow_sccm"] = self.gas_sccm
        if sync:
            pot.command("CELL:SYNC", **sync)
        record["cell"] = pot.command("STATUS")
        t, v, i = pot.run()
        gram = Voltammogram(t=t, v=v, i=i, program=cfg.program, seed=seed,
                            condition=None, noise_scale=None)
        name = f"round-{record['round']:03d}-seed-{seed}.csv"
        voltagram.write_csv(gram, cfg.spool_dir / name)
        record["file"] = name
        record["samples"] = len(t)
        if self.model is not None:
            fv = features.extract(gram)
            record["verdict"] = eot.predict(self.model, fv)


def exit_status(manifest: dict) -> int:
    """0 all rounds normal, 1 a round failed, 3 an abnormal verdict."""
    rounds = manifest["rounds"]
    if any(r["status"] != "ok" for r in rounds):
        return 1
    if any(r["verdict"] == 0 for r in rounds):
        return 3
    return 0
