import math

import numpy as np
import pytest

from pmasym.asymptotics import (BlowupTrace, blowup, fit_cubic, fit_staircase, flatness_metrics,
                                jump_decomposition, offset_metric, step_geometry, total_variation)
from pmasym.fem import HermiteFunction, Mesh, interpolate
from pmasym.functionals import ClampedCubic, ForcingSpec, Plateau, build_competitor
from pmasym.oracles import check_sqrt_subadditivity
from pmasym.profiles import (CubicConnectionParams, DomainError, StaircaseKind, StaircaseParams,
                             cubic_connection, eval_cubic_connection, eval_staircase, staircase_jumps)

from _helpers import random_function


def steep_staircase(p: StaircaseParams, lo, hi, width=1e-6):
    """Hermite function equal to the staircase ``p`` away from width-sized connectors."""
    jumps = staircase_jumps(p, lo + 2 * width, hi - 2 * width)
    segs, x = [], lo
    for j in jumps:
        left, right = float(eval_staircase(p, j - 2 * width)), float(eval_staircase(p, j + 2 * width))
        segs.append(Plateau(x, j - width, left))
        segs.append(ClampedCubic(j - width, j + width, left, 0.0, right, 0.0))
        x = j + width
    segs.append(Plateau(x, hi, float(eval_staircase(p, x + width))))
    return build_competitor(segs)


def exact_cubic(p: CubicConnectionParams, lo, hi, n=64):
    kinks = np.array([-p.Lambda - p.x0, p.Lambda - p.x0])
    nodes = np.union1d(np.linspace(lo, hi, n + 1), kinks[(kinks > lo) & (kinks < hi)])
    return interpolate(lambda z: eval_cubic_connection(p, z), Mesh(nodes),
                       derivative=lambda z: eval_cubic_connection(p, z, 1))


# -- blow-ups -----------------------------------------------------------------

@pytest.mark.parametrize("s", [-2.0, 0.3, 5.0])
def test_blowup_affine(s):
    u = interpolate(lambda x: 1 + s * x, Mesh.uniform(0, 1, 10), derivative=lambda x: s + 0 * x)
    for scale in (0.01, 0.2):
        tr = blowup(u, 0.4, scale, 1.0)
        y = np.linspace(-1, 1, 41)
        np.testing.assert_allclose(tr.samples(y), s * y, atol=1e-12)


def test_blowup_normalization(rng):
    u = random_function(rng, 0, 1, 15)
    for c in (0.2, 0.5, 0.77):
        tr = blowup(u, c, 0.05, (2.0, 3.0))
        assert tr.samples(0.0) == 0.0
        assert tr.window == (-2.0, 3.0)


def test_blowup_window_contract(rng):
    u = random_function(rng, 0, 1, 5)
    with pytest.raises(DomainError):
        blowup(u, 0.1, 0.1, 2.0)


def test_blowup_composition(rng):
    u = random_function(rng, 0, 1, 15)
    w, e2 = 0.2, 0.01
    first = blowup(u, 0.5, w, 2.0)
    second = blowup(first.samples, 0.0, e2, 1.5)
    direct = blowup(u, 0.5, w * e2, 1.5)
    z = np.linspace(-1.5, 1.5, 301)
    np.testing.assert_allclose(second.samples(z), direct.samples(z), atol=1e-10)


def test_blowup_of_scaled_staircase():
    w = 0.1
    p = StaircaseParams(1.2, 0.8)
    s = steep_staircase(p, -6.0, 6.0)
    u = HermiteFunction(Mesh(w * s.mesh.nodes), w * s.values, s.derivs)
    tr = blowup(u, 0.0, w, 5.0)
    y = np.linspace(-5, 5, 1001)
    far = np.min(np.abs(y[:, None] - staircase_jumps(p, -6, 6)[None, :]), axis=1) > 1e-3
    np.testing.assert_allclose(tr.samples(y)[far], eval_staircase(p, y)[far], atol=1e-12)


# -- jump decompositions ------------------------------------------------------

def test_jump_decomposition_constant():
    v = HermiteFunction(Mesh.uniform(0, 1, 4), np.ones(5), np.zeros(5))
    d = jump_decomposition(v, 1.0)
    assert d.intervals == () and d.total_delta == 0 and d.big_index is None


def test_jump_decomposition_cubic():
    v = exact_cubic(CubicConnectionParams(1.0, 1.0), -2, 2)
    d = jump_decomposition(v, 1.0)
    assert len(d.intervals) == 1
    a, b = d.intervals[0]
    assert a == pytest.approx(-1 / math.sqrt(3), abs=1e-12) and b == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert d.A_measure == pytest.approx(2 / math.sqrt(3), abs=1e-12)
    assert d.deltas[0] == pytest.approx(8 / (3 * math.sqrt(3)), abs=1e-12)


def test_jump_decomposition_two_transitions():
    segs = [Plateau(0, 1, 0.0), ClampedCubic(1, 1.2, 0.0, 0.0, 1.0, 0.0), Plateau(1.2, 3, 1.0),
            ClampedCubic(3, 3.2, 1.0, 0.0, 3.0, 0.0), Plateau(3.2, 4, 3.0)]
    v = build_competitor(segs)
    d = jump_decomposition(v, 1.0)
    assert len(d.intervals) == 2 and d.big_index == 1


def test_decomposition_properties(rng):
    for _ in range(50):
        v = random_function(rng, 0, 2, 12, amp=3.0)
        M = float(rng.uniform(0.2, 3))
        d = jump_decomposition(v, M)
        comp = total_variation(v)
        inside = sum(total_variation(v, a, b) for a, b in d.intervals)
        # on each superlevel interval v is monotone, so its variation is its delta
        assert inside == pytest.approx(d.total_delta, rel=1e-10, abs=1e-12)
        assert comp >= d.total_delta - 1e-10
        for D, Dh in zip(d.deltas, d.hat_deltas):
            assert 0 <= Dh <= D
        if d.hat_deltas:
            assert check_sqrt_subadditivity(d.hat_deltas).holds


# -- staircase fits -----------------------------------------------------------

@pytest.mark.parametrize("t", [-0.6, 0.0, 0.35])
def test_fit_exact_hor(t):
    pred = StaircaseParams(1.5, 1.0)
    p = pred.translated(StaircaseKind.HOR, t)
    v = steep_staircase(p, -7.0, 7.0)
    fit = fit_staircase(BlowupTrace(0.0, 1.0, v), pred)
    assert fit.params.kind is StaircaseKind.HOR
    assert fit.params.tau0 == pytest.approx(t, abs=1e-6)
    assert fit.sup_error < 1e-9


def test_fit_exact_vert():
    pred = StaircaseParams(1.5, 1.0)
    p = pred.translated(StaircaseKind.VERT, 0.4)
    v = steep_staircase(p, -7.0, 7.0)
    fit = fit_staircase(BlowupTrace(0.0, 1.0, v), pred)
    assert fit.params.kind is StaircaseKind.VERT
    assert fit.kind_confidence == "Vert"
    assert fit.params.V * (1 - fit.params.tau0) == pytest.approx(1.0 * (1 - 0.4), abs=1e-9)
    assert fit.sup_error < 1e-9


@pytest.mark.parametrize("t", [-1.0, 1.0])
def test_fit_boundary(t):
    pred = StaircaseParams(1.5, 1.0)
    v = steep_staircase(pred.translated(StaircaseKind.HOR, t), -7.0, 7.0)
    fit = fit_staircase(BlowupTrace(0.0, 1.0, v), pred)
    assert fit.kind_confidence == "Boundary"
    assert fit.sup_error < 1e-9


def test_fit_degenerate_contract():
    v = HermiteFunction(Mesh.uniform(0, 1, 2), np.zeros(3), np.zeros(3))
    with pytest.raises(DomainError):
        fit_staircase(BlowupTrace(0.0, 1.0, v), StaircaseParams(math.nan, 0.0, degenerate=True))


def test_step_geometry_exact():
    pred = StaircaseParams(1.5, 1.0)
    v = steep_staircase(pred.translated(StaircaseKind.HOR, 0.0), -7.0, 7.0)
    # with forcing y the plateau 2kV crosses it at the step midpoints
    g = ForcingSpec.polynomial([0.0, 1.0 / 1.5])
    geo = step_geometry(v, g, 1.0, 0.5)
    assert geo.half_length == pytest.approx(1.5, abs=1e-5)
    assert geo.half_height == pytest.approx(1.0, abs=1e-9)


# -- cubic fits ---------------------------------------------------------------

@pytest.mark.parametrize("L,V,t", [(1.0, 1.0, 0.0), (1.7, 1.9, 0.3), (0.8, 0.5, -0.5)])
def test_fit_cubic_exact(L, V, t):
    p = CubicConnectionParams(L, V, t)
    w = exact_cubic(p, -2 * L, 2 * L)
    fit = fit_cubic(BlowupTrace(0.0, 1.0, w), cubic_connection(1.2 * V, 0.0))
    assert fit.params.Lambda == pytest.approx(L, rel=1e-8)
    assert fit.params.V == pytest.approx(V, rel=1e-8)
    assert fit.params.tau0 == pytest.approx(t, abs=1e-8)
    assert fit.sup_error < 1e-9 and fit.deriv_sup_error < 1e-8 and fit.second_deriv_L2_error < 1e-7


def test_fit_cubic_decreasing():
    p = CubicConnectionParams(1.0, 1.0)
    w = exact_cubic(p, -2, 2)
    neg = HermiteFunction(w.mesh, -w.values, -w.derivs)
    fit = fit_cubic(BlowupTrace(0.0, 1.0, neg), p)
    assert fit.sign == -1.0 and fit.sup_error < 1e-9


def test_fit_cubic_perturbed():
    p = CubicConnectionParams(1.0, 1.0)
    pert = lambda z: 1e-3 * np.sin(3 * z)
    nodes = np.union1d(np.linspace(-2, 2, 257), [-1.0, 1.0])
    w = interpolate(lambda z: eval_cubic_connection(p, z) + pert(z), Mesh(nodes),
                    derivative=lambda z: eval_cubic_connection(p, z, 1) + 3e-3 * np.cos(3 * z))
    fit = fit_cubic(BlowupTrace(0.0, 1.0, w), p)
    assert 0.5e-3 <= fit.sup_error <= 2e-3


# -- flatness and offsets -----------------------------------------------------

def test_flatness_zero():
    v = HermiteFunction(Mesh.uniform(0, 1, 4), np.zeros(5), np.zeros(5))
    assert flatness_metrics(BlowupTrace(0.0, 1.0, v), (0, 1), 0.3) == (0, 0, 0, 0)


def test_flatness_sin():
    w = 0.3
    v = interpolate(lambda y: w**2 * np.sin(y), Mesh.uniform(0, 1, 64), derivative=lambda y: w**2 * np.cos(y))
    _, _, rv, rdv = flatness_metrics(BlowupTrace(0.0, 1.0, v), (0, 1), w)
    assert rv == pytest.approx(math.sin(1), abs=1e-9)
    assert rdv == pytest.approx(1.0, abs=1e-9)


def test_flatness_affine():
    w, s = 0.2, 0.7
    v = interpolate(lambda y: s * y, Mesh.uniform(-1, 1, 4), derivative=lambda y: s + 0 * y)
    assert flatness_metrics(BlowupTrace(0.0, 1.0, v), (-0.5, 0.5), w)[3] == pytest.approx(s / w**2, rel=1e-13)
    with pytest.raises(DomainError):
        flatness_metrics(BlowupTrace(0.0, 1.0, v), (-2, 0.5), w)


def test_offset_metric():
    f = ForcingSpec.polynomial([0.1, 1.0, 0.5])
    m = Mesh.uniform(0, 1, 16)
    u = interpolate(f, m)
    assert offset_metric(u, f, 0.5, 0.2) == pytest.approx(0.0, abs=1e-15)
    u2 = HermiteFunction(m, u.values + 0.2, u.derivs)
    assert offset_metric(u2, f, 0.5, 0.2) == pytest.approx(1.0, abs=1e-13)
