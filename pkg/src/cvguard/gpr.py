"""Gaussian process regression of current on potential.

Squared-exponential kernel, zero-mean prior on standardized targets and a
Cholesky factor computed once per fit.  Potentials are mapped onto [0, 1]
over the sweep range and currents to zero mean / unit variance, so the
hyperparameters below are in standardized units.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

JITTER_STEPS = (1e-10, 1e-8, 1e-6)
MAX_POINTS = 512


class GprFitError(RuntimeError):
    def __init__(self, message, suggested_jitter=None):
        super().__init__(message)
        self.suggested_jitter = suggested_jitter


@dataclass(frozen=True)
class GprHyperparams:
    signal_variance: float = 1.0
    length_scale: float = 0.1
    noise_variance: float = 1e-2

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be >= 0")


DEFAULT_GRID = tuple(
    GprHyperparams(1.0, ell, sn2)
    for ell, sn2 in itertools.product((0.02, 0.05, 0.1, 0.2, 0.4), (1e-4, 1e-2, 1e-1))
)


@dataclass(frozen=True)
class Standardization:
    v_shift: float
    v_scale: float
    i_shift: float
    i_scale: float


@dataclass(frozen=True, eq=False)
class GprModel:
    inputs: np.ndarray
    targets: np.ndarray
    hyper: GprHyperparams
    factor: np.ndarray
    alpha: np.ndarray
    standardization: Standardization
    jitter: float = 0.0

    @property
    def n_components(self) -> int:
        """Number of Gaussian kernel terms in the posterior mean expansion."""
        return len(self.inputs)

    @property
    def noise_used(self) -> float:
        return self.hyper.noise_variance + self.jitter


def se_kernel(a, b, hyper: GprHyperparams) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a[:, None] - b[None, :]
    with np.errstate(over="ignore"):  # far pairs underflow to 0 as they should
        return hyper.signal_variance * np.exp(-0.5 * (d / hyper.length_scale) ** 2)


def _standardize(v, i, v_range):
    if v_range is None:
        lo, hi = float(v.min()), float(v.max())
    else:
        lo, hi = map(float, v_range)
    v_scale = hi - lo if hi > lo else 1.0
    i_shift = float(i.mean())
    i_scale = float(i.std())
    if not (i_scale > 0 and math.isfinite(i_scale)):
        i_scale = 1.0
    return Standardization(lo, v_scale, i_shift, i_scale)


def _as_points(points):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        arr = arr.reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("GPR fit needs at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input to GPR fit")
    return arr[:, 0], arr[:, 1]


def fit(points, hyper: GprHyperparams, v_range=None) -> GprModel:
    """Fit a GP to ``(v, i)`` pairs.

    ``v_range`` is the sweep's ``(v_min, v_max)``; when omitted the data
    range is used.  A failing Cholesky factorization is retried with the
    jitter steps in ``JITTER_STEPS`` added to the noise variance.
    """
    v, i = _as_points(points)
    std = _standardize(v, i, v_range)
    x = (v - std.v_shift) / std.v_scale
    y = (i - std.i_shift) / std.i_scale
    k = se_kernel(x, x, hyper)
    eye = np.eye(len(x))

    factor = None
    jitter = 0.0
    for extra in (0.0, *JITTER_STEPS):
        try:
            factor = np.linalg.cholesky(k + (hyper.noise_variance + extra) * eye)
        except np.linalg.LinAlgError:
            continue
        jitter = extra
        break
    if factor is None:
        raise GprFitError(
            f"kernel matrix not positive definite (n={len(x)}, {hyper}); "
            f"try noise_variance >= {hyper.noise_variance + 1e-4:g}",
            suggested_jitter=1e-4,
        )
    alpha = linalg.cho_solve((factor, True), y)
    for arr in (x, y, factor, alpha):
        arr.setflags(write=False)
    return GprModel(x, y, hyper, factor, alpha, std, jitter)


def _query(model: GprModel, query_v):
    q = np.asarray(query_v, dtype=float).reshape(-1)
    s = model.standardization
    return (q - s.v_shift) / s.v_scale


def predict_mean(model: GprModel, query_v) -> np.ndarray:
    xq = _query(model, query_v)
    if len(xq) == 0:
        return np.empty(0)
    ks = se_kernel(xq, model.inputs, model.hyper)
    s = model.standardization
    return s.i_shift + s.i_scale * (ks @ model.alpha)


def predict_variance(model: GprModel, query_v) -> np.ndarray:
    """Posterior variance of the latent function, in amperes squared."""
    xq = _query(model, query_v)
    if len(xq) == 0:
        return np.empty(0)
    ks = se_kernel(xq, model.inputs, model.hyper)
    w = linalg.solve_triangular(model.factor, ks.T, lower=True)
    var = model.hyper.signal_variance - np.sum(w * w, axis=0)
    var = np.clip(var, 0.0, model.hyper.signal_variance)
    return var * model.standardization.i_scale ** 2


def log_marginal_likelihood(model: GprModel) -> float:
    """Evidence of the standardized targets under the fitted hyperparameters."""
    y = model.targets
    n = len(y)
    return float(
        -0.5 * y @ model.alpha
        - np.sum(np.log(np.diag(model.factor)))
        - 0.5 * n * math.log(2 * math.pi)
    )


def select_hyperparams(points, grid=DEFAULT_GRID, v_range=None) -> GprHyperparams:
    """Grid member with the largest log marginal likelihood (first wins ties)."""
    return select_and_fit(points, grid, v_range)[0]


def select_and_fit(points, grid=DEFAULT_GRID, v_range=None):
    grid = list(grid)
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    best = None
    errors = []
    for hyper in grid:
        try:
            model = fit(points, hyper, v_range)
        except GprFitError as exc:
            errors.append(exc)
            continue
        lml = log_marginal_likelihood(model)
        if best is None or lml > best[2]:
            best = (hyper, model, lml)
    if best is None:
        raise GprFitError(f"every grid member failed to factorize: {errors[-1]}",
                          suggested_jitter=errors[-1].suggested_jitter)
    return best[0], best[1]
