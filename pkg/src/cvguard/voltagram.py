"""Synthetic cyclic-voltammetry measurements and their CSV form.

The Normal model is a capacitive baseline plus a sech^2-shaped Faradaic
peak whose centre shifts by +/- dE/2 between the forward and reverse
branches.  Disconnected runs are piecewise-constant plateaus with rail
spikes; LowVolume runs are an attenuated Normal run with an ohmic slope.
"""
from __future__ import annotations

import enum
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SweepError(ValueError):
    """Invalid sweep program; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


class CellCondition(str, enum.Enum):
    NORMAL = "normal"
    DISCONNECTED = "disconnected"
    LOW_VOLUME = "low-volume"

    @classmethod
    def parse(cls, text: str) -> "CellCondition":
        key = text.strip().lower().replace("_", "-")
        if key == "lowvolume":
            key = "low-volume"
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown condition {text!r}") from None


@dataclass(frozen=True)
class SweepProgram:
    v_min: float = -0.5
    v_max: float = 0.5
    scan_rate: float = 0.1
    cycles: int = 1
    dt: float = 0.01

    def __post_init__(self):
        for name in ("v_min", "v_max", "scan_rate", "dt"):
            if not math.isfinite(getattr(self, name)):
                raise SweepError(name, f"{name} must be finite")
        if not self.v_min < self.v_max:
            raise SweepError("v_max", "v_min must be less than v_max")
        if self.scan_rate <= 0:
            raise SweepError("scan_rate", "scan_rate must be positive")
        if self.dt <= 0:
            raise SweepError("dt", "dt must be positive")
        if int(self.cycles) != self.cycles or self.cycles <= 0:
            raise SweepError("cycles", "cycles must be positive")

    @property
    def period(self) -> float:
        """Duration of one up-and-down cycle in seconds."""
        return 2.0 * (self.v_max - self.v_min) / self.scan_rate

    @property
    def samples_per_cycle(self) -> int:
        # round first so 199.99999999999997 does not become 200 -> 201 drift
        return math.ceil(round(self.period / self.dt, 9))

    @property
    def n_samples(self) -> int:
        return self.samples_per_cycle * int(self.cycles)

    def as_dict(self) -> dict:
        return {
            "v_min": self.v_min,
            "v_max": self.v_max,
            "scan_rate": self.scan_rate,
            "cycles": int(self.cycles),
            "dt": self.dt,
        }


@dataclass(frozen=True)
class NormalParams:
    c_dl: float = 1e-6
    i_peak: float = 5e-6
    e_half: float = 0.0
    delta_e: float = 0.12
    width: float = 0.06


@dataclass(frozen=True)
class DisconnectedParams:
    level_low: float = 2.0e-5
    level_high: float = 3.0e-5
    min_step: float = 4.0e-6
    segments: tuple[int, int] = (3, 8)
    spikes: tuple[int, int] = (1, 3)
    rail: float = 1.0e-4


@dataclass(frozen=True)
class LowVolumeParams:
    attenuation: tuple[float, float] = (0.05, 0.3)
    conductance: tuple[float, float] = (2e-6, 1e-5)


DEFAULT_NOISE = 1e-7


@dataclass
class Voltammogram:
    t: np.ndarray
    v: np.ndarray
    i: np.ndarray
    program: SweepProgram
    seed: int = 0
    condition: CellCondition | None = None
    noise_scale: float | None = None

    def __len__(self):
        return len(self.t)

    @property
    def samples(self):
        return list(zip(self.t.tolist(), self.v.tolist(), self.i.tolist()))

    def __eq__(self, other):
        if not isinstance(other, Voltammogram):
            return NotImplemented
        return (
            self.program == other.program
            and self.seed == other.seed
            and self.condition == other.condition
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.i, other.i)
        )


def _phase_grid(program: SweepProgram):
    """Per-sample cycle index and time within the cycle."""
    n = program.samples_per_cycle
    j = np.arange(n, dtype=float)
    tau = j * program.dt
    cyc = np.repeat(np.arange(int(program.cycles)), n)
    return cyc, np.tile(tau, int(program.cycles))


def _triangle(program: SweepProgram, tau: np.ndarray) -> np.ndarray:
    half = program.period / 2.0
    v = np.where(
        tau <= half,
        program.v_min + program.scan_rate * tau,
        program.v_max - program.scan_rate * (tau - half),
    )
    return np.clip(v, program.v_min, program.v_max)


def sweep_waveform(program: SweepProgram) -> tuple[np.ndarray, np.ndarray]:
    """Triangular potential programme sampled every ``dt``.

    Starts at ``v_min``, rises to ``v_max`` and returns, ``cycles`` times.
    Each cycle contributes ``samples_per_cycle`` samples; the closing
    ``v_min`` of the last cycle is not emitted.
    """
    cyc, tau = _phase_grid(program)
    t = cyc * program.period + tau
    return t, _triangle(program, tau)


def sweep_direction(program: SweepProgram) -> np.ndarray:
    """dv/dt sign per sample: +1 rising, -1 falling, 0 at a vertex."""
    _, tau = _phase_grid(program)
    half = program.period / 2.0
    tol = 1e-9 * program.period
    s = np.where(tau < half, 1.0, -1.0)
    s[np.abs(tau) <= tol] = 0.0
    s[np.abs(tau - half) <= tol] = 0.0
    return s


def normal_current(v, direction, scan_rate: float, params: NormalParams = NormalParams()):
    """Noise-free Normal current for potentials ``v`` and sweep signs ``direction``.

    ``direction`` is +1 on the forward branch, -1 on the reverse branch and
    0 at a turning point (capacitive term vanishes there; the Faradaic
    peak follows the forward position).
    """
    v = np.asarray(v, dtype=float)
    direction = np.asarray(direction, dtype=float)
    branch = np.where(direction < 0, -1.0, 1.0)
    x = (v - params.e_half - branch * params.delta_e / 2.0) / params.width
    faradaic = params.i_peak / np.cosh(x) ** 2
    return params.c_dl * scan_rate * direction + faradaic


def _streams(seed: int):
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    noise, shape = ss.spawn(2)
    return np.random.default_rng(noise), np.random.default_rng(shape)


def low_volume_factors(seed: int, params: LowVolumeParams = LowVolumeParams()):
    """(attenuation, ohmic conductance) drawn for a LowVolume run of ``seed``."""
    _, shape_rng = _streams(seed)
    alpha = shape_rng.uniform(*params.attenuation)
    g = shape_rng.uniform(*params.conductance)
    return alpha, g


def _disconnected_current(n: int, rng: np.random.Generator, p: DisconnectedParams):
    n_seg = int(rng.integers(p.segments[0], p.segments[1] + 1))
    n_seg = min(n_seg, n)
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_seg - 1, replace=False)) if n_seg > 1 else []
    span = p.level_high - p.level_low
    levels = [rng.uniform(p.level_low, p.level_high)]
    for _ in range(n_seg - 1):
        # redraw until the plateau visibly jumps
        while True:
            nxt = rng.uniform(p.level_low, p.level_high)
            if abs(nxt - levels[-1]) >= min(p.min_step, span / 2):
                break
        levels.append(nxt)
    i = np.empty(n)
    bounds = [0, *[int(c) for c in cuts], n]
    for lev, a, b in zip(levels, bounds[:-1], bounds[1:]):
        i[a:b] = lev
    n_spikes = int(rng.integers(p.spikes[0], p.spikes[1] + 1))
    where = rng.choice(n, size=min(n_spikes, n), replace=False)
    i[where] = rng.choice([-p.rail, p.rail], size=len(where))
    return i


def simulate(
    program: SweepProgram = SweepProgram(),
    condition: CellCondition = CellCondition.NORMAL,
    seed: int = 0,
    noise_scale: float = DEFAULT_NOISE,
    normal: NormalParams = NormalParams(),
    disconnected: DisconnectedParams = DisconnectedParams(),
    low_volume: LowVolumeParams = LowVolumeParams(),
) -> Voltammogram:
    """Generate one synthetic voltammogram.

    Noise is zero-mean uniform on ``[-noise_scale, noise_scale]``; bounded
    noise keeps the Normal loop closed to within ``3 * noise_scale``.
    The result is a pure function of the arguments.
    """
    if not (noise_scale >= 0 and math.isfinite(noise_scale)):
        raise ValueError("noise_scale must be a finite value >= 0")
    condition = CellCondition(condition)
    noise_rng, shape_rng = _streams(seed)
    t, v = sweep_waveform(program)
    direction = sweep_direction(program)
    n = len(t)

    if condition is CellCondition.DISCONNECTED:
        i = _disconnected_current(n, shape_rng, disconnected)
    else:
        i = normal_current(v, direction, program.scan_rate, normal)
        if condition is CellCondition.LOW_VOLUME:
            alpha, g = low_volume_factors(seed, low_volume)
            baseline = normal.c_dl * program.scan_rate * direction
            i = baseline + alpha * (i - baseline) + g * v

    if noise_scale > 0:
        i = i + noise_rng.uniform(-noise_scale, noise_scale, size=n)
    return Voltammogram(t=t, v=v, i=i, program=program, seed=int(seed),
                        condition=condition, noise_scale=noise_scale)


# -- CSV ---------------------------------------------------------------------

class CsvFormatError(ValueError):
    pass


def to_csv(gram: Voltammogram) -> str:
    buf = io.StringIO()
    for k, val in gram.program.as_dict().items():
        buf.write(f"# {k}={val!r}\n")
    buf.write(f"# seed={int(gram.seed)}\n")
    if gram.noise_scale is not None:
        buf.write(f"# noise_scale={gram.noise_scale!r}\n")
    if gram.condition is not None:
        buf.write(f"# condition={gram.condition.value}\n")
    buf.write("t,V,I\n")
    for t, v, i in zip(gram.t.tolist(), gram.v.tolist(), gram.i.tolist()):
        buf.write(f"{t!r},{v!r},{i!r}\n")
    return buf.getvalue()


def write_csv(gram: Voltammogram, path) -> Path:
    """Write atomically: a temp file in the target directory, then rename."""
    path = Path(path)
    text = to_csv(gram)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _infer_program(meta: dict, t: np.ndarray, v: np.ndarray) -> SweepProgram:
    if len(v) == 0:
        raise CsvFormatError("no samples")
    kwargs = {}
    kwargs["v_min"] = float(meta["v_min"]) if "v_min" in meta else float(v.min())
    kwargs["v_max"] = float(meta["v_max"]) if "v_max" in meta else float(v.max())
    if "dt" in meta:
        kwargs["dt"] = float(meta["dt"])
    elif len(t) > 1:
        kwargs["dt"] = float(np.median(np.diff(t)))
    if "scan_rate" in meta:
        kwargs["scan_rate"] = float(meta["scan_rate"])
    elif len(t) > 1:
        kwargs["scan_rate"] = float(np.median(np.abs(np.diff(v)) / np.diff(t)))
    if "cycles" in meta:
        kwargs["cycles"] = int(meta["cycles"])
    return SweepProgram(**kwargs)


def parse_csv(text: str) -> Voltammogram:
    meta = {}
    rows = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, _, val = body.partition("=")
                meta[k.strip()] = val.strip()
            continue
        if not header_seen:
            if [c.strip() for c in line.split(",")] != ["t", "V", "I"]:
                raise CsvFormatError(f"line {lineno}: expected header 't,V,I'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise CsvFormatError(f"line {lineno}: expected 3 columns")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CsvFormatError(f"line {lineno}: non-numeric value") from None
    if not header_seen:
        raise CsvFormatError("missing 't,V,I' header")
    data = np.array(rows, dtype=float).reshape(-1, 3)
    t, v, i = data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy()
    if len(t) == 0:
        raise CsvFormatError("no samples")
    try:
        program = _infer_program(meta, t, v)
    except SweepError as exc:
        raise CsvFormatError(f"bad sweep metadata: {exc}") from None
    cond = CellCondition.parse(meta["condition"]) if "condition" in meta else None
    noise = float(meta["noise_scale"]) if "noise_scale" in meta else None
    return Voltammogram(t=t, v=v, i=i, program=program, seed=int(meta.get("seed", 0)),
                        condition=cond, noise_scale=noise)


def read_csv(path) -> Voltammogram:
    return parse_csv(Path(path).read_text(encoding="utf-8"))
