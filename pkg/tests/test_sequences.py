import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrisim.errors import OutOfRange, ValidationError, ZeroVector
from dmrisim.sequences import (GAMMA, CosOGSE, DoublePGSE, GradientSpec, PGSE, Piecewise,
                               SinOGSE, amplitude_from_b, bvalue, bvalue_numeric,
                               direction_set, make_sequence, profile_F, profile_f)


def test_pgse_profile_values():
    s = PGSE(10000.0, 13000.0)
    assert profile_f(s, 5000.0) == 1.0
    assert profile_f(s, 18000.0) == -1.0
    assert profile_f(s, 11000.0) == 0.0
    # right limit at a breakpoint
    assert profile_f(s, 13000.0) == -1.0
    assert profile_f(s, 0.0) == 1.0


def test_pgse_F_values():
    s = PGSE(10000.0, 13000.0)
    assert profile_F(s, 10000.0) == pytest.approx(10000.0)
    assert profile_F(s, s.TE) == pytest.approx(0.0, abs=1e-9)


def test_out_of_range():
    s = PGSE(100.0, 200.0)
    with pytest.raises(OutOfRange):
        profile_f(s, -1.0)
    with pytest.raises(OutOfRange):
        profile_F(s, s.TE + 1.0)


def test_ogse_cos_start_and_period_end():
    s = CosOGSE(3000.0, 4000.0, nperiod=3)
    assert profile_f(s, 0.0) == pytest.approx(1.0)
    assert abs(profile_F(s, s.delta)) < 1e-12 * s.delta


def test_dpgse_gap_is_zero():
    s = DoublePGSE(1000.0, 3000.0, tau=6000.0)
    assert profile_f(s, 5000.0) == 0.0
    assert s.TE == pytest.approx(6000.0 + 4000.0)
    assert abs(profile_F(s, s.TE)) < 1e-9


@pytest.mark.parametrize("seq", [
    PGSE(1000.0, 3000.0), CosOGSE(2000.0, 2500.0, nperiod=2), SinOGSE(2000.0, 2500.0, nperiod=4),
    DoublePGSE(1000.0, 2000.0), Piecewise.from_samples([0, 10, 10, 20], [1, 1, -1, -1]),
])
def test_rephasing(seq):
    t = np.linspace(0, seq.TE, 2001)
    scale = np.abs(profile_F(seq, t)).max()
    assert abs(profile_F(seq, seq.TE)) <= 1e-12 * scale + 1e-12


def test_pgse_b_matches_high_gradient_experiment():
    s = PGSE(10000.0, 13000.0)
    b = bvalue(s, 0.380)
    assert b == pytest.approx(1e4, rel=0.02)


def test_zero_gradient_gives_zero_b():
    assert bvalue(PGSE(10.0, 20.0), 0.0) == 0.0
    assert amplitude_from_b(PGSE(10.0, 20.0), 0.0) == 0.0


def test_sine_ogse_is_three_times_cosine():
    c = CosOGSE(5000.0, 6000.0, nperiod=2)
    s = SinOGSE(5000.0, 6000.0, nperiod=2)
    assert bvalue(s, 0.1) == pytest.approx(3 * bvalue(c, 0.1), rel=1e-9)


def test_b_roundtrip():
    s = CosOGSE(5000.0, 6000.0, nperiod=2)
    g = amplitude_from_b(s, 1000.0)
    assert abs(bvalue(s, g) - 1000.0) <= 1e-10 * 1000.0


@pytest.mark.parametrize("delta,Delta", list(itertools.product([500.0, 5000.0], [5000.0, 20000.0])))
def test_pgse_quadrature_matches_closed_form(delta, Delta):
    s = PGSE(delta, Delta)
    assert bvalue_numeric(s, 0.1) == pytest.approx(bvalue(s, 0.1), rel=1e-8)


def test_piecewise_matches_pgse():
    p = PGSE(10.0, 30.0)
    pw = Piecewise.from_samples([0, 10, 10, 30, 30, 40], [1, 1, 0, 0, -1, -1])
    assert pw.integral_F2() == pytest.approx(p.integral_F2(), rel=1e-9)
    assert pw.F(20.0) == pytest.approx(10.0)


def test_piecewise_validation():
    with pytest.raises(ValidationError):
        Piecewise.from_samples([1, 2], [0, 0])
    with pytest.raises(ValidationError):
        Piecewise.from_samples([0, 2, 1], [0, 0, 0])


def test_invalid_timing():
    with pytest.raises(ValidationError):
        PGSE(20.0, 10.0)
    with pytest.raises(ValidationError):
        CosOGSE(10.0, 20.0, nperiod=0)
    with pytest.raises(ValidationError):
        DoublePGSE(10.0, 20.0, tau=5.0)


def test_make_sequence_codes():
    assert make_sequence(1, 10, 20).kind == "PGSE"
    assert make_sequence(2, 10, 20, 2).kind == "OGSE_sin"
    assert make_sequence(3, 10, 20, 2).kind == "OGSE_cos"
    assert make_sequence(4, 10, 20).kind == "dPGSE"
    assert make_sequence(5, 0, 0, samples=([0, 1, 2], [1, 0, -1])).kind == "piecewise"
    with pytest.raises(ValidationError):
        make_sequence(9, 10, 20)


def test_breakpoints_bound_smooth_pieces():
    s = CosOGSE(1000.0, 1500.0, nperiod=2)
    bp = s.breakpoints()
    for a, b in zip(bp[:-1], bp[1:]):
        t = np.linspace(a, b, 401)[1:-1]
        f = s.f(t)
        d2 = np.diff(f, 2)
        # no jumps inside a piece: second differences stay O(dt^2)
        assert np.abs(d2).max() < 1e-2


def test_direction_set_single():
    d = direction_set(1, (1, 1, 0))
    assert np.allclose(d, [[1 / math.sqrt(2), 1 / math.sqrt(2), 0]])
    with pytest.raises(ZeroVector):
        direction_set(1, (0, 0, 0))


def test_direction_set_spread():
    d = direction_set(20)
    assert d.shape == (20, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    cos = np.clip(d @ d.T, -1, 1)
    np.fill_diagonal(cos, -1)
    assert np.degrees(np.arccos(cos.max())) > 25.0


def test_direction_set_two():
    d = direction_set(2)
    assert d.shape == (2, 3)
    assert not np.allclose(d[0], -d[1])


def test_gradient_spec_const_q():
    seqs = [PGSE(1000.0, 2000.0), PGSE(2000.0, 4000.0)]
    spec = GradientSpec(directions=[[1.0, 0, 0]], values=(0.0, 500.0, 1000.0), const_q=True)
    g = spec.amplitudes(seqs)
    assert np.array_equal(g[0], g[1])
    spec2 = GradientSpec(directions=[[1.0, 0, 0]], values=(0.0, 500.0, 1000.0))
    g2 = spec2.amplitudes(seqs)
    assert bvalue(seqs[1], g2[1][2]) == pytest.approx(1000.0)


def test_gradient_spec_rejects_non_unit():
    with pytest.raises(ValidationError):
        GradientSpec(directions=[[1.0, 1.0, 0]])


@settings(max_examples=40, deadline=None)
@given(st.floats(1e2, 1e4), st.floats(1.0, 5.0), st.floats(0.0, 0.5))
def test_bvalue_quadratic_in_g(delta, ratio, g):
    s = PGSE(delta, delta * ratio)
    assert bvalue(s, 2 * g) == pytest.approx(4 * bvalue(s, g), rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e2, 1e4), st.floats(1.0, 4.0), st.integers(1, 6))
def test_cos_ogse_quadrature(T, ratio, n):
    s = CosOGSE(T, T * ratio, nperiod=n)
    assert s.integral_F2_numeric() == pytest.approx(s.integral_F2(), rel=1e-8)


def test_gamma_units():
    # 2.67513e8 rad/s/T in µs, µm, T/m
    assert GAMMA == pytest.approx(2.67513e-4)
