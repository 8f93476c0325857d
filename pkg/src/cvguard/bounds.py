"""Confidence functions for GPR and tree-ensemble generalization, and their inverses.

Both functions have the shape ``prefactor * exp(-eps**2 * l / scale)``.
The plain product is used while every factor is representable; otherwise
the value comes from a single exponentiation of the log-space sum, so huge
prefactors give an explicit ``inf`` rather than garbage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

GPR_SCALE = 512.0
EOT_SCALE = 2048.0


class BoundError(ValueError):
    pass


def _check_common(epsilon, l):
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and epsilon > 0):
        raise BoundError("epsilon must be positive")
    if l < 0 or int(l) != l:
        raise BoundError("l must be a non-negative integer")


@dataclass(frozen=True)
class GprBoundParams:
    epsilon: float
    l: int = 0
    n_k: int = 1
    a_bound: float = 1.0
    c_bound: float = 1.0

    def __post_init__(self):
        _check_common(self.epsilon, self.l)
        if self.n_k < 1 or int(self.n_k) != self.n_k:
            raise BoundError("n_k must be a positive integer")
        if not (self.a_bound > 0 and self.c_bound > 0):
            raise BoundError("A and C must be positive")


@dataclass(frozen=True)
class EotBoundParams:
    epsilon: float
    l: int = 0
    b_bound: float = 1.0
    n_l: int = 1
    g: float = 1.0

    def __post_init__(self):
        _check_common(self.epsilon, self.l)
        if self.n_l < 1 or int(self.n_l) != self.n_l:
            raise BoundError("n_l must be a positive integer")
        if not (self.b_bound > 0 and self.g > 0):
            raise BoundError("B and g must be positive")


@dataclass(frozen=True)
class BoundQuery:
    target_delta: float
    epsilon_hat: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.target_delta) and self.target_delta > 0):
            raise BoundError("target delta must be positive")
        if not 0.0 <= self.epsilon_hat <= 1.0:
            raise BoundError("training error must lie in [0, 1]")


def log_prefactor_gpr(p: GprBoundParams) -> float:
    ratio = 32.0 * max(p.a_bound, p.c_bound) / p.epsilon
    return math.log(8.0) + 2.0 * p.n_k * math.log(ratio)


def log_prefactor_eot(p: EotBoundParams) -> float:
    return math.log(8.0) + math.log(p.g) + math.log1p(256.0 * p.b_bound * p.n_l / p.epsilon)


def log_delta_gpr(p: GprBoundParams) -> float:
    return log_prefactor_gpr(p) - p.epsilon ** 2 * p.l / GPR_SCALE


def log_delta_eot(p: EotBoundParams) -> float:
    return log_prefactor_eot(p) - p.epsilon ** 2 * p.l / EOT_SCALE


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _evaluate(log_value, direct):
    try:
        val = direct()
    except OverflowError:
        return _exp(log_value)
    if not math.isfinite(val) or (val == 0.0 and log_value > -745.0):
        return _exp(log_value)
    return val


def delta_gpr(p: GprBoundParams) -> float:
    """8 (32 max(A,C)/eps)^(2 N_K) exp(-eps^2 l / 512), unclamped."""
    return _evaluate(log_delta_gpr(p), lambda: 8.0 * (32.0 * max(p.a_bound, p.c_bound) / p.epsilon)
                     ** (2 * p.n_k) * math.exp(-p.epsilon ** 2 * p.l / GPR_SCALE))


def delta_eot(p: EotBoundParams) -> float:
    """8 g (1 + 256 B N_L / eps) exp(-eps^2 l / 2048), unclamped."""
    return _evaluate(log_delta_eot(p), lambda: 8.0 * p.g * (1.0 + 256.0 * p.b_bound * p.n_l / p.epsilon)
                     * math.exp(-p.epsilon ** 2 * p.l / EOT_SCALE))


def _min_samples(log_pref, scale, epsilon, target, forward):
    est = scale / epsilon ** 2 * (log_pref - math.log(target))
    l = max(0, math.ceil(est))
    # closed form can land one off after rounding; settle against the forward map
    while forward(l) > target:
        l += 1
    while l > 0 and forward(l - 1) <= target:
        l -= 1
    return l


def min_samples_gpr(p: GprBoundParams, q: BoundQuery) -> int:
    """Smallest l with delta_gpr <= q.target_delta (the ``l`` in ``p`` is ignored)."""
    return _min_samples(log_prefactor_gpr(p), GPR_SCALE, p.epsilon, q.target_delta,
                        lambda l: delta_gpr(replace(p, l=l)))


def min_samples_eot(p: EotBoundParams, q: BoundQuery) -> int:
    return _min_samples(log_prefactor_eot(p), EOT_SCALE, p.epsilon, q.target_delta,
                        lambda l: delta_eot(replace(p, l=l)))


def report(params, target_delta=None, epsilon_hat=None, solved=False) -> str:
    """key=value report echoing every input plus the bound and its status."""
    if isinstance(params, GprBoundParams):
        kind, delta, log_delta = "gpr", delta_gpr(params), log_delta_gpr(params)
    else:
        kind, delta, log_delta = "eot", delta_eot(params), log_delta_eot(params)
    lines = [f"bound={kind}"]
    lines += [f"{k}={v!r}" for k, v in vars(params).items() if k != "l"]
    if epsilon_hat is not None:
        lines.append(f"epsilon_hat={epsilon_hat!r}")
    if target_delta is not None:
        lines.append(f"target_delta={target_delta!r}")
    lines.append(f"{'min_l' if solved else 'l'}={params.l}")
    lines.append(f"delta={delta!r}")
    lines.append(f"log10_delta={log_delta / math.log(10):.6f}")
    if math.isinf(delta):
        status = "overflow"
    elif delta > 1:
        status = "vacuous"
    else:
        status = "meaningful"
    lines.append(f"status={status}")
    lines.append(f"vacuous={'true' if delta > 1 else 'false'}")
    return "\n".join(lines)
