import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmasym.profiles import (ALPHA0, CubicConnectionParams, DomainError, JumpSet, StaircaseKind,
                             StaircaseParams, canonical_staircase, cubic_connection, eval_cubic_connection,
                             eval_staircase, j_half, lambda_from_V, make_scale, staircase_jumps,
                             staircase_params)


def test_alpha0_value():
    assert ALPHA0 == pytest.approx(16 / math.sqrt(3), abs=1e-15)
    assert ALPHA0 == pytest.approx(9.237604307034012, abs=1e-12)


def test_make_scale_examples():
    assert make_scale(1 / math.e).omega == pytest.approx(1 / math.e, rel=1e-15)
    assert make_scale(0.05).omega == pytest.approx(0.05 * math.sqrt(math.log(20)), rel=1e-15)
    assert make_scale(0.5).coeff2nd == pytest.approx(0.5**10 * math.log(2) ** 2, rel=1e-14)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 2.0])
def test_make_scale_domain(eps):
    with pytest.raises(DomainError):
        make_scale(eps)


def test_staircase_params_examples():
    p = staircase_params(1.0, 1.0)
    assert p.H == pytest.approx(24**0.2, rel=1e-15)
    assert p.H == pytest.approx(1.88818, abs=1e-5)
    assert p.V == p.H
    assert staircase_params(1.0, 0.0).degenerate
    assert staircase_params(2.0, 1.0).H == pytest.approx(6**0.2, rel=1e-15)
    with pytest.raises(DomainError):
        staircase_params(0.0, 1.0)


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_staircase_homogeneity(slope, s):
    p, q = staircase_params(1.0, slope), staircase_params(1.0, s * slope)
    assert q.H == pytest.approx(p.H * s ** (-0.6), rel=1e-13)
    assert q.V == pytest.approx(p.V * s**0.4, rel=1e-13)


def test_eval_staircase_examples():
    p = StaircaseParams(1.0, 1.0)
    assert eval_staircase(p, 0.0) == 0.0
    assert eval_staircase(p, 2.5) == 2.0
    q = StaircaseParams(1.0, 1.0, 0.5, StaircaseKind.VERT)
    assert eval_staircase(q, -0.5) == -1.5
    assert eval_staircase(staircase_params(1.0, 0.0), 3.0) == 0.0


@given(st.floats(-1, 1), st.floats(-20, 20), st.floats(0.2, 5), st.floats(0.2, 5))
def test_translations_cross_evaluation(t, x, H, V):
    S = lambda y: V * 2 * math.floor((y / H + 1) / 2)
    hor = StaircaseParams(H, V, t, StaircaseKind.HOR)
    vert = StaircaseParams(H, V, t, StaircaseKind.VERT)
    obl = StaircaseParams(H, V, t, StaircaseKind.OBL)
    assert eval_staircase(hor, x) == S(x - H * t)
    assert eval_staircase(vert, x) == S(x - H) + V * (1 - t)
    assert eval_staircase(obl, x) == S(x - H * t) + V * t


def test_staircase_jumps_match_discontinuities():
    p = StaircaseParams(1.3, 0.7, 0.4, StaircaseKind.HOR)
    for j in staircase_jumps(p, -10, 10):
        assert eval_staircase(p, j + 1e-9) - eval_staircase(p, j - 1e-9) == pytest.approx(2 * 0.7)


def test_cubic_connection_examples():
    p = CubicConnectionParams(1.0, 1.0)
    assert eval_cubic_connection(p, 0.0) == 0.0
    assert eval_cubic_connection(p, 1.0) == 1.0
    assert eval_cubic_connection(CubicConnectionParams(2.0, 1.0), 1.0) == pytest.approx(0.6875, abs=1e-15)


@pytest.mark.parametrize("L,V", [(1.0, 1.0), (0.7, 2.5), (3.0, 0.2)])
def test_cubic_connection_shape(L, V):
    p = CubicConnectionParams(L, V)
    x = np.linspace(-2 * L, 2 * L, 801)
    np.testing.assert_allclose(eval_cubic_connection(p, -x), -eval_cubic_connection(p, x), atol=1e-15)
    for s in (-1, 1):
        e = 1e-14 * L
        left = eval_cubic_connection(p, s * L - e, 1)
        right = eval_cubic_connection(p, s * L + e, 1)
        assert abs(left - right) < 1e-12
        assert eval_cubic_connection(p, s * L, 1) == pytest.approx(0.0, abs=1e-15)
        assert eval_cubic_connection(p, s * L) == pytest.approx(s * V, abs=1e-15)
    assert np.all(np.diff(eval_cubic_connection(p, np.linspace(-L, L, 201))) > 0)


@given(st.floats(-0.99, 0.99), st.floats(0.1, 5))
@settings(max_examples=50)
def test_graph_translation_shift(t, V):
    p = cubic_connection(V, t)
    # the translated connection crosses zero at x = 0 is not required; the shift solves C(x0) = t V
    assert eval_cubic_connection(CubicConnectionParams(p.Lambda, V), p.x0) == pytest.approx(t * V, abs=1e-12)


@given(st.floats(0.01, 50))
def test_lambda_optimality_identity(V):
    L = lambda_from_V(V)
    lhs = 4 * (2 * L) + 12 * (2 * V) ** 2 / (2 * L) ** 3
    assert lhs == pytest.approx(ALPHA0 * math.sqrt(2 * V), rel=1e-9)


def test_lambda_desk_value():
    assert lambda_from_V(24**0.2) == pytest.approx(1.68293, abs=1e-5)


def test_j_half_examples():
    assert j_half(JumpSet()) == 0.0
    assert j_half(JumpSet.from_pairs([(0.5, 4.0)])) == 2.0
    assert j_half(JumpSet.from_pairs([(0.2, 1.0), (0.7, 1.0)])) == 2.0
    with pytest.raises(DomainError):
        JumpSet.from_pairs([(0.7, 1.0), (0.2, 1.0)])
    with pytest.raises(DomainError):
        j_half(JumpSet.from_pairs([(0.2, 0.0)]))


def test_param_validation():
    with pytest.raises(DomainError):
        StaircaseParams(1.0, 1.0, 1.5)
    with pytest.raises(DomainError):
        CubicConnectionParams(-1.0, 1.0)
    with pytest.raises(DomainError):
        CubicConnectionParams(1.0, 1.0, 1.0)
