import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvguard import voltagram
from cvguard.voltagram import (
    CellCondition, CsvFormatError, NormalParams, SweepError, SweepProgram,
    low_volume_factors, normal_current, simulate, sweep_direction, sweep_waveform,
)

DEFAULT = SweepProgram()
P = NormalParams()


def scalar_triangle(program):
    """Independent reference: v = v_min + rate * (T/2 - |tau - T/2|), one sample at a time."""
    period = 2 * (program.v_max - program.v_min) / program.scan_rate
    n = math.ceil(round(period / program.dt, 9))
    ts, vs = [], []
    for c in range(program.cycles):
        for j in range(n):
            tau = j * program.dt
            ts.append(c * period + tau)
            vs.append(program.v_min + program.scan_rate * (period / 2 - abs(tau - period / 2)))
    return np.array(ts), np.array(vs)


def test_triangle_small_example():
    t, v = sweep_waveform(SweepProgram(0.0, 1.0, 1.0, 1, 0.5))
    assert v.tolist() == [0.0, 0.5, 1.0, 0.5]
    assert t.tolist() == [0.0, 0.5, 1.0, 1.5]


def test_triangle_two_cycles_matches_scalar_loop():
    prog = SweepProgram(-0.2, 0.8, 0.1, 2, 0.1)
    t, v = sweep_waveform(prog)
    assert len(t) == 400
    rt, rv = scalar_triangle(prog)
    np.testing.assert_allclose(t, rt, rtol=0, atol=1e-12)
    np.testing.assert_allclose(v, rv, rtol=0, atol=1e-12)
    peaks = t[np.isclose(v, 0.8, atol=1e-12)]
    np.testing.assert_allclose(peaks, [10.0, 30.0])


def test_zero_cycles_rejected():
    with pytest.raises(SweepError, match="cycles must be positive") as exc:
        SweepProgram(0.0, 1.0, 1.0, 0, 0.5)
    assert exc.value.field == "cycles"


@pytest.mark.parametrize("kwargs, field", [
    (dict(v_min=1.0, v_max=1.0), "v_max"),
    (dict(v_min=1.0, v_max=0.0), "v_max"),
    (dict(scan_rate=0.0), "scan_rate"),
    (dict(scan_rate=-1.0), "scan_rate"),
    (dict(dt=0.0), "dt"),
    (dict(cycles=-2), "cycles"),
    (dict(v_min=float("nan")), "v_min"),
])
def test_invalid_programs_name_the_field(kwargs, field):
    with pytest.raises(SweepError) as exc:
        SweepProgram(**kwargs)
    assert exc.value.field == field


@settings(max_examples=60, deadline=None)
@given(
    v_min=st.floats(-2, 1),
    span=st.floats(0.05, 2),
    rate=st.floats(0.01, 2),
    cycles=st.integers(1, 3),
    steps=st.integers(8, 600),
)
def test_sample_count_and_range(v_min, span, rate, cycles, steps):
    dt = 2 * span / rate / steps * 1.01
    prog = SweepProgram(v_min, v_min + span, rate, cycles, dt)
    t, v = sweep_waveform(prog)
    assert len(t) == cycles * math.ceil(round(2 * span / (rate * dt), 9))
    assert np.all(np.diff(t) > 0)
    assert np.all(v >= prog.v_min) and np.all(v <= prog.v_max)


def test_direction_is_zero_only_at_vertices():
    prog = SweepProgram(0.0, 1.0, 1.0, 2, 0.25)
    _, v = sweep_waveform(prog)
    s = sweep_direction(prog)
    assert s.tolist() == [0, 1, 1, 1, 0, -1, -1, -1] * 2
    assert np.all(v[s == 0] % 1.0 == 0.0)


def test_forward_peak_value_is_exact():
    v = P.e_half + P.delta_e / 2
    i = normal_current(v, 1.0, DEFAULT.scan_rate, P)
    assert i == P.c_dl * DEFAULT.scan_rate + P.i_peak


def test_noise_free_sampled_peak():
    gram = simulate(DEFAULT, CellCondition.NORMAL, seed=3, noise_scale=0.0)
    fwd = sweep_direction(DEFAULT) > 0
    k = np.argmin(np.abs(gram.v[fwd] - (P.e_half + P.delta_e / 2)))
    assert gram.i[fwd][k] == pytest.approx(P.c_dl * DEFAULT.scan_rate + P.i_peak, rel=1e-9)


def _closure(gram):
    return abs(gram.v[0] - gram.v[-1]), abs(gram.i[0] - gram.i[-1])


def test_closure_seed_7():
    gram = simulate(seed=7)
    dv, di = _closure(gram)
    assert dv <= DEFAULT.dt * DEFAULT.scan_rate * (1 + 1e-9)
    assert di <= 3 * voltagram.DEFAULT_NOISE


def test_closure_over_100_seeds():
    for seed in range(100):
        dv, di = _closure(simulate(seed=seed))
        assert dv <= DEFAULT.dt * DEFAULT.scan_rate * (1 + 1e-9), seed
        assert di <= 3 * voltagram.DEFAULT_NOISE, seed


def _max_jump(gram):
    return np.max(np.abs(np.diff(gram.i)))


def test_disconnected_jump_seed_7():
    normal = simulate(condition=CellCondition.NORMAL, seed=7)
    disc = simulate(condition=CellCondition.DISCONNECTED, seed=7)
    assert _max_jump(disc) > 10 * _max_jump(normal)


def test_discontinuity_separation_100_seeds():
    wins = sum(
        _max_jump(simulate(condition=CellCondition.DISCONNECTED, seed=s))
        > _max_jump(simulate(condition=CellCondition.NORMAL, seed=s))
        for s in range(100)
    )
    assert wins >= 99


def test_hysteresis_noise_free():
    gram = simulate(noise_scale=0.0)
    s = sweep_direction(DEFAULT)
    fwd_v, fwd_i = gram.v[s > 0], gram.i[s > 0]
    rev_v, rev_i = gram.v[s < 0][::-1], gram.i[s < 0][::-1]
    interior = (fwd_v > DEFAULT.v_min + 0.05) & (fwd_v < DEFAULT.v_max - 0.05)
    gap = np.abs(fwd_i[interior] - np.interp(fwd_v[interior], rev_v, rev_i))
    assert gap.max() > P.i_peak / 2


@pytest.mark.parametrize("cond", list(CellCondition))
def test_determinism(cond):
    a = simulate(DEFAULT, cond, 11, 1e-7)
    b = simulate(DEFAULT, cond, 11, 1e-7)
    assert a == b
    assert a.i.tobytes() == b.i.tobytes()
    assert simulate(DEFAULT, cond, 12, 1e-7) != a


def test_low_volume_attenuation_in_range():
    for seed in range(20):
        alpha, g = low_volume_factors(seed)
        assert 0.05 <= alpha <= 0.3
        gram = simulate(condition=CellCondition.LOW_VOLUME, seed=seed, noise_scale=0.0)
        s = sweep_direction(DEFAULT)
        faradaic = gram.i - P.c_dl * DEFAULT.scan_rate * s - g * gram.v
        ratio = faradaic[s > 0].max() / normal_current(P.e_half + P.delta_e / 2, 0.0, 0.0, P)
        assert ratio == pytest.approx(alpha, rel=1e-3)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        simulate(noise_scale=-1.0)


def test_csv_round_trip(tmp_path):
    gram = simulate(condition=CellCondition.DISCONNECTED, seed=5)
    path = voltagram.write_csv(gram, tmp_path / "a.csv")
    text = path.read_text()
    assert text.splitlines()[:8] == [
        "# v_min=-0.5", "# v_max=0.5", "# scan_rate=0.1", "# cycles=1", "# dt=0.01",
        "# seed=5", "# noise_scale=1e-07", "# condition=disconnected",
    ]
    assert "t,V,I" in text.splitlines()
    back = voltagram.read_csv(path)
    assert back == gram
    assert not [p for p in tmp_path.iterdir() if p.name != "a.csv"]


def test_csv_without_metadata_infers_program():
    text = "t,V,I\n0,0,1e-6\n0.5,0.5,2e-6\n1.0,1.0,3e-6\n1.5,0.5,1e-6\n"
    gram = voltagram.parse_csv(text)
    assert gram.condition is None
    assert gram.program.v_min == 0.0 and gram.program.v_max == 1.0
    assert gram.program.dt == 0.5 and gram.program.scan_rate == 1.0


@pytest.mark.parametrize("text, msg", [
    ("# seed=1\n", "header"),
    ("t,V,I\n", "no samples"),
    ("t,V,I\n0,1\n", "3 columns"),
    ("t,V,I\n0,x,1\n", "non-numeric"),
    ("a,b,c\n", "header"),
])
def test_csv_errors(text, msg):
    with pytest.raises(CsvFormatError, match=msg):
        voltagram.parse_csv(text)
