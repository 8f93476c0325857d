"""Ten-point GPR feature vectors for voltammograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gpr
from .voltagram import SweepProgram, Voltammogram

N_PROBES = 10


class FeatureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeGrid:
    probe_v: tuple[float, ...]

    def __post_init__(self):
        if len(self.probe_v) != N_PROBES:
            raise ValueError(f"probe grid needs exactly {N_PROBES} voltages")
        if any(b <= a for a, b in zip(self.probe_v, self.probe_v[1:])):
            raise ValueError("probe voltages must be strictly increasing")

    def check_within(self, program: SweepProgram):
        if self.probe_v[0] < program.v_min or self.probe_v[-1] > program.v_max:
            raise ValueError("probe voltages fall outside the sweep range")


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    grid: ProbeGrid

    def __post_init__(self):
        if len(self.values) != N_PROBES or not all(np.isfinite(self.values)):
            raise ValueError(f"feature vector needs {N_PROBES} finite values")

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def to_csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in self.values)


def default_grid(program: SweepProgram) -> ProbeGrid:
    """Cell midpoints of ten equal slices of the sweep range."""
    step = (program.v_max - program.v_min) / N_PROBES
    return ProbeGrid(tuple(program.v_min + (k + 0.5) * step for k in range(N_PROBES)))


def training_points(gram: Voltammogram, max_points: int = gpr.MAX_POINTS) -> np.ndarray:
    """Canonical (v, i) fitting set for a voltammogram.

    Samples are sorted by (t, v, i) and exact duplicates dropped, so the
    result ignores sample order and wholesale duplication; longer runs
    are thinned uniformly in index to ``max_points``.
    """
    data = np.column_stack([gram.t, gram.v, gram.i]).astype(float)
    if len(data) == 0:
        return np.empty((0, 2))
    data = np.unique(data, axis=0)  # lexicographic sort + dedupe
    if len(data) > max_points:
        idx = np.round(np.linspace(0, len(data) - 1, max_points)).astype(int)
        data = data[idx]
    return data[:, 1:]


def fit_gram(gram: Voltammogram, hyper_grid=gpr.DEFAULT_GRID):
    pts = training_points(gram)
    if len(pts) < 2:
        raise FeatureError("voltammogram needs at least 2 samples")
    try:
        _, model = gpr.select_and_fit(pts, hyper_grid,
                                      v_range=(gram.program.v_min, gram.program.v_max))
    except gpr.GprFitError as exc:
        raise FeatureError(f"GPR fit failed for seed={gram.seed}: {exc}") from exc
    return model


def extract(gram: Voltammogram, grid: ProbeGrid | None = None,
            hyper_grid=gpr.DEFAULT_GRID) -> FeatureVector:
    if grid is None:
        grid = default_grid(gram.program)
    grid.check_within(gram.program)
    model = fit_gram(gram, hyper_grid)
    values = gpr.predict_mean(model, grid.probe_v)
    return FeatureVector(tuple(float(x) for x in values), grid)
