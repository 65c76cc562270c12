"""Blow-ups, derivative-superlevel decompositions, staircase and cubic fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .fem import HermiteFunction, Mesh, gauss01
from .functionals import ForcingSpec
from .profiles import (CubicConnectionParams, DomainError, StaircaseKind, StaircaseParams,
                       eval_cubic_connection, eval_staircase, staircase_jumps)


@dataclass(frozen=True)
class BlowupTrace:
    center: float
    scale: float
    samples: HermiteFunction
    vertical_scale: float | None = None

    @property
    def window(self) -> tuple[float, float]:
        return self.samples.mesh.a, self.samples.mesh.b


def blowup(u: HermiteFunction, center: float, scale: float, half_width,
           out_mesh: Mesh | None = None, vertical_scale: float | None = None) -> BlowupTrace:
    """``v(y) = (u(center + scale*y) - u(center)) / vertical_scale`` on ``|y| <= half_width``.

    ``half_width`` may be a pair ``(left, right)`` for an asymmetric window
    ``[-left, right]``.  ``vertical_scale`` defaults to ``scale``.  Without
    ``out_mesh`` the trace lives on the image of ``u``'s nodes, so it is exact.
    """
    vs = scale if vertical_scale is None else vertical_scale
    left, right = (half_width, half_width) if np.isscalar(half_width) else map(float, half_width)
    lo, hi = center - scale * left, center + scale * right
    tol = 1e-12 * max(1.0, abs(u.mesh.a), abs(u.mesh.b))
    if lo < u.mesh.a - tol or hi > u.mesh.b + tol:
        raise DomainError(f"window [{lo}, {hi}] leaves the domain [{u.mesh.a}, {u.mesh.b}]")
    if out_mesh is None:
        inner = (u.mesh.nodes[(u.mesh.nodes > lo) & (u.mesh.nodes < hi)] - center) / scale
        ys = np.concatenate([[-left], inner, [right]])
        # drop near-duplicates produced by rounding at the window ends
        keep = np.concatenate([[True], np.diff(ys) > 1e-13 * max(left, right)])
        ys = ys[keep]
        if ys[-1] != right:
            ys[-1] = right
        out_mesh = Mesh(ys)
    if not np.any(out_mesh.nodes == 0.0) and out_mesh.a < 0.0 < out_mesh.b:
        out_mesh = out_mesh.with_nodes([0.0])
    y = out_mesh.nodes
    x = np.clip(center + scale * y, u.mesh.a, u.mesh.b)
    u0 = float(u(center))
    vals = (u(x) - u0) / vs
    ders = u.derivative(x) * scale / vs
    vals[y == 0.0] = 0.0
    return BlowupTrace(center, scale, HermiteFunction(out_mesh, vals, ders), vs)


# -- superlevel sets of |v'| --------------------------------------------------

def _derivative_poly(v: HermiteFunction):
    """Coefficients (A, B, C) with h*v'(t) = A t^2 + B t + C on each element."""
    c = v.element_coeffs()
    A = 6 * c[:, 0] + 3 * c[:, 1] - 6 * c[:, 2] + 3 * c[:, 3]
    B = -6 * c[:, 0] - 4 * c[:, 1] + 6 * c[:, 2] - 2 * c[:, 3]
    return A, B, c[:, 1]


def _quad_roots(a, b, c):
    """Real roots in (0,1) of a t^2 + b t + c."""
    out = []
    if a == 0.0:
        if b != 0.0:
            out.append(-c / b)
    else:
        disc = b * b - 4 * a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            qq = -0.5 * (b + math.copysign(sq, b)) if b != 0 else -0.5 * math.copysign(sq, a) * 1.0
            if qq != 0:
                out += [qq / a, c / qq]
            else:
                out.append(0.0)
    return sorted(t for t in out if 0.0 < t < 1.0)


def superlevel_intervals(v: HermiteFunction, M: float) -> list[tuple[float, float]]:
    """Maximal open intervals where |v'| > M, with endpoints from exact quadratic roots."""
    A, B, C = _derivative_poly(v)
    h = v.mesh.h
    x0 = v.mesh.nodes[:-1]
    candidates = np.flatnonzero(v.max_abs_derivative_per_element() > M)
    intervals: list[list[float]] = []
    for e in candidates:
        ts = sorted(set([0.0, 1.0] + _quad_roots(A[e], B[e], C[e] - M * h[e])
                        + _quad_roots(A[e], B[e], C[e] + M * h[e])))
        for t0, t1 in zip(ts, ts[1:]):
            tm = 0.5 * (t0 + t1)
            if abs(A[e] * tm * tm + B[e] * tm + C[e]) / h[e] > M:
                lo, hi = x0[e] + h[e] * t0, x0[e] + h[e] * t1
                if t1 == 1.0:
                    hi = v.mesh.nodes[e + 1]
                if t0 == 0.0:
                    lo = v.mesh.nodes[e]
                if intervals and intervals[-1][1] == lo:
                    intervals[-1][1] = hi
                else:
                    intervals.append([lo, hi])
    return [(a, b) for a, b in intervals]


def total_variation(v: HermiteFunction, lo: float | None = None, hi: float | None = None) -> float:
    """Exact total variation of a piecewise cubic (monotone pieces between roots of v')."""
    w = v if lo is None and hi is None else v.restrict(v.mesh.a if lo is None else lo,
                                                       v.mesh.b if hi is None else hi)
    A, B, C = _derivative_poly(w)
    pts = []
    for e in range(w.mesh.element_count):
        for t in _quad_roots(A[e], B[e], C[e]):
            pts.append(w.mesh.nodes[e] + w.mesh.h[e] * t)
    xs = np.union1d(w.mesh.nodes, pts)
    return float(np.abs(np.diff(w(xs))).sum())


@dataclass(frozen=True)
class JumpDecomposition:
    M: float
    intervals: tuple[tuple[float, float], ...]
    deltas: tuple[float, ...]
    hat_deltas: tuple[float, ...]
    A_measure: float
    total_delta: float
    big_index: int | None

    @property
    def big_interval(self):
        return None if self.big_index is None else self.intervals[self.big_index]

    def as_dict(self):
        return {"M": self.M, "intervals": [list(i) for i in self.intervals],
                "deltas": list(self.deltas), "hat_deltas": list(self.hat_deltas),
                "A_measure": self.A_measure, "total_delta": self.total_delta,
                "big_index": self.big_index}


def jump_decomposition(v: HermiteFunction, M: float) -> JumpDecomposition:
    """Split {|v'| > M} into intervals with their variation and excess variation."""
    if not M > 0:
        raise DomainError("threshold M must be positive")
    iv = superlevel_intervals(v, M)
    deltas = [abs(float(v(b) - v(a))) for a, b in iv]
    hats = [max(d - M * (b - a), 0.0) for d, (a, b) in zip(deltas, iv)]
    big = int(np.argmax(hats)) if hats else None
    return JumpDecomposition(M, tuple(iv), tuple(deltas), tuple(hats),
                             float(sum(b - a for a, b in iv)), float(sum(deltas)), big)


# -- staircase fit ----------------------------------------------------------

@dataclass(frozen=True)
class StaircaseFit:
    params: StaircaseParams
    sup_error: float
    kind_confidence: str
    hor_error: float
    vert_error: float
    measured_H: float
    measured_V: float
    jump_locations: tuple[float, ...]
    jump_heights: tuple[float, ...]

    def as_dict(self):
        return {"H": self.params.H, "V": self.params.V, "tau0": self.params.tau0,
                "kind": self.params.kind.value, "sup_error": self.sup_error,
                "kind_confidence": self.kind_confidence, "hor_error": self.hor_error,
                "vert_error": self.vert_error, "measured_H": self.measured_H,
                "measured_V": self.measured_V, "jump_locations": list(self.jump_locations),
                "jump_heights": list(self.jump_heights)}


EXCLUDE_FRACTION = 0.05
BOUNDARY_RATIO = 0.10


def detect_jumps(v: HermiteFunction, M: float, min_height: float):
    """Jump intervals of height >= min_height: (location, signed height, interval).

    The location is where v crosses the midpoint of the interval's end values.
    """
    dec = jump_decomposition(v, M)
    out = []
    for (a, b), d in zip(dec.intervals, dec.deltas):
        if d < min_height:
            continue
        va, vb = float(v(a)), float(v(b))
        out.append((_crossing(v, a, b, 0.5 * (va + vb)), vb - va, (a, b)))
    return out


def _crossing(v: HermiteFunction, a: float, b: float, level: float) -> float:
    from scipy.optimize import brentq
    fa, fb = float(v(a)) - level, float(v(b)) - level
    if fa == 0:
        return a
    if fb == 0 or fa * fb > 0:
        return b if abs(fb) < abs(fa) else a
    return brentq(lambda x: float(v(x)) - level, a, b, xtol=1e-15 * max(1.0, abs(a)), rtol=1e-15)


def _grid(lo, hi, n):
    return np.linspace(lo, hi, n)


def _excluded_mask(y, jumps, radius):
    mask = np.ones_like(y, dtype=bool)
    for j in jumps:
        mask &= np.abs(y - j) > radius
    return mask


def fit_staircase(trace: BlowupTrace, predicted: StaircaseParams, n_samples: int = 4001,
                  jump_threshold: float = 1.0) -> StaircaseFit:
    """Best Hor and Vert graph translations of the predicted (H, V) staircase.

    The sup distance ignores +-5% (of the step length 2H) neighbourhoods of
    the model's jump points.  ``kind_confidence`` is ``Boundary`` when the two
    errors are within 10% of each other.
    """
    if predicted.degenerate:
        raise DomainError("cannot fit a degenerate staircase")
    v = trace.samples
    lo, hi = trace.window
    y = _grid(lo, hi, n_samples)
    y = np.union1d(y, v.mesh.nodes)
    vy = v(y)
    H, V = predicted.H, predicted.V
    radius = EXCLUDE_FRACTION * 2 * H

    def hor_err(t):
        p = predicted.translated(StaircaseKind.HOR, t)
        m = _excluded_mask(y, staircase_jumps(p, lo - H, hi + H), radius)
        return float(np.max(np.abs(vy[m] - eval_staircase(p, y[m])))) if m.any() else 0.0

    # Hor: grid + bounded refinement, plus a crossing-based estimate
    grid = np.linspace(-1, 1, 201)
    errs = np.array([hor_err(t) for t in grid])
    k = int(np.argmin(errs))
    lo_t, hi_t = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(hor_err, bounds=(lo_t, hi_t), method="bounded", options={"xatol": 1e-10})
    cands = [(float(errs[k]), float(grid[k])), (float(res.fun), float(res.x))]
    jumps = detect_jumps(v, jump_threshold, 0.5 * abs(V))
    est = _tau_from_crossings(v, jumps, H, V)
    if est is not None:
        cands.append((hor_err(est), est))
    best = min(e for e, _ in cands)
    tol = 1e-12 + 1e-9 * abs(V)
    # prefer the crossing estimate when it is as good as the searched optimum
    e_h, t_h = next(c for c in reversed(cands) if c[0] <= best + tol)

    # Vert: tau0 enters as a vertical offset, the sup-optimal offset is the midrange
    pv = predicted.translated(StaircaseKind.VERT, 1.0)
    m = _excluded_mask(y, staircase_jumps(pv, lo - H, hi + H), radius)
    r = vy[m] - eval_staircase(pv, y[m])
    off = 0.5 * (r.max() + r.min())
    t_v = float(np.clip(1.0 - off / V, -1.0, 1.0))
    e_v = float(np.max(np.abs(vy[m] - eval_staircase(predicted.translated(StaircaseKind.VERT, t_v), y[m]))))

    if abs(e_h - e_v) <= BOUNDARY_RATIO * max(e_h, e_v) + 1e-12:
        conf = "Boundary"
    else:
        conf = "Hor" if e_h < e_v else "Vert"
    if e_h <= e_v:
        params, err = predicted.translated(StaircaseKind.HOR, t_h), e_h
    else:
        params, err = predicted.translated(StaircaseKind.VERT, t_v), e_v
    mH, mV = measured_step_geometry(jumps)
    return StaircaseFit(params, err, conf, e_h, e_v, mH, mV,
                        tuple(j[0] for j in jumps), tuple(j[1] for j in jumps))


def _tau_from_crossings(v, jumps, H, V):
    """Hor shift from the crossings of the odd levels (2k+1)V."""
    taus = []
    for loc, height, (a, b) in jumps:
        va, vb = float(v(a)), float(v(b))
        k = round((0.5 * (va + vb) / V - 1) / 2)
        level = (2 * k + 1) * V
        if not min(va, vb) < level < max(va, vb):
            continue
        yk = _crossing(v, a, b, level)
        t = yk / H - (2 * k + 1)
        if -1.0 <= t <= 1.0:
            taus.append(t)
    return float(np.mean(taus)) if taus else None


def measured_step_geometry(jumps) -> tuple[float, float]:
    """Half step length (mean half spacing of consecutive jumps) and half height."""
    if not jumps:
        return math.nan, math.nan
    heights = np.abs([j[1] for j in jumps])
    locs = np.array([j[0] for j in jumps])
    mH = float(np.mean(np.diff(locs)) / 2) if locs.size >= 2 else math.nan
    return mH, float(np.mean(heights) / 2)


@dataclass(frozen=True)
class StepGeometry:
    """Measured staircase geometry of a solution against its forcing.

    ``half_length`` averages, over every jump and each adjacent plateau, the
    distance from the jump to the point where the plateau meets the forcing
    (for an exact staircase tracking an affine forcing this is H).
    ``half_height`` is half the mean absolute jump height.  ``spacing_half``
    is half the mean distance between consecutive jumps (nan below two jumps).
    """
    jumps: tuple[float, ...]
    heights: tuple[float, ...]
    steps: tuple[tuple[float, float], ...]
    half_length: float
    half_height: float
    spacing_half: float

    def as_dict(self):
        return {"jumps": list(self.jumps), "heights": list(self.heights),
                "steps": [list(s) for s in self.steps], "half_length": self.half_length,
                "half_height": self.half_height, "spacing_half": self.spacing_half}


def _sign_change(fun, lo, hi, n=401):
    xs = np.linspace(lo, hi, n)
    r = fun(xs)
    idx = np.flatnonzero(np.sign(r[:-1]) * np.sign(r[1:]) <= 0)
    if idx.size == 0:
        return None
    from scipy.optimize import brentq
    # the crossing nearest the plateau centre
    mid = 0.5 * (lo + hi)
    i = idx[np.argmin(np.abs(xs[idx] - mid))]
    if r[i] == 0:
        return float(xs[i])
    return brentq(lambda x: float(fun(x)), xs[i], xs[i + 1], xtol=1e-14)


def step_geometry(v: HermiteFunction, forcing, M: float = 1.0, min_height: float = 0.5) -> StepGeometry:
    """Jumps, steps (maximal jump-free intervals) and measured H, V of ``v``."""
    jumps = detect_jumps(v, M, min_height)
    a, b = v.mesh.a, v.mesh.b
    steps = []
    lo = a
    for _, _, (ja, jb) in jumps:
        steps.append((lo, ja))
        lo = jb
    steps.append((lo, b))
    dists = []

    def resid(x):
        return v(x) - forcing(x)

    for k, (loc, _, _) in enumerate(jumps):
        for s_lo, s_hi in (steps[k], steps[k + 1]):
            if s_hi - s_lo <= 0:
                continue
            c = _sign_change(resid, s_lo, s_hi)
            if c is not None:
                dists.append(abs(loc - c))
    locs = [j[0] for j in jumps]
    heights = [j[1] for j in jumps]
    mH, mV = measured_step_geometry(jumps)
    half_length = float(np.mean(dists)) if dists else math.nan
    return StepGeometry(tuple(locs), tuple(heights), tuple(steps), half_length, mV, mH)


# -- cubic fit --------------------------------------------------------------

@dataclass(frozen=True)
class CubicFit:
    params: CubicConnectionParams
    sup_error: float
    deriv_sup_error: float
    second_deriv_L2_error: float
    sign: float = 1.0

    def as_dict(self):
        return {"Lambda": self.params.Lambda, "V": self.params.V, "tau0": self.params.tau0,
                "x0": self.params.x0, "sign": self.sign, "sup_error": self.sup_error,
                "deriv_sup_error": self.deriv_sup_error,
                "second_deriv_L2_error": self.second_deriv_L2_error}


def _cubic_errors(w: HermiteFunction, p: CubicConnectionParams, sign: float, n_gauss: int = 8):
    lo, hi = w.mesh.a, w.mesh.b
    kinks = np.array([-p.Lambda - p.x0, p.Lambda - p.x0])
    kinks = kinks[(kinks > lo) & (kinks < hi)]
    # a kink within rounding of a node would only add a sub-ulp sliver
    near = np.min(np.abs(kinks[:, None] - w.mesh.nodes[None, :]), axis=1) <= 1e-12 * (hi - lo)
    brk = np.union1d(w.mesh.nodes, kinks[~near])
    t, wt = gauss01(n_gauss)
    h = np.diff(brk)[:, None]
    xq = brk[:-1, None] + h * t[None, :]
    d2 = w.derivative(xq, 2) - sign * eval_cubic_connection(p, xq, 2)
    l2 = math.sqrt(float((d2 * d2 * wt[None, :] * h).sum()))
    ys = np.union1d(np.linspace(lo, hi, 4001), brk)
    ys = np.union1d(ys, xq.ravel())
    e0 = float(np.max(np.abs(w(ys) - sign * eval_cubic_connection(p, ys))))
    e1 = float(np.max(np.abs(w.derivative(ys) - sign * eval_cubic_connection(p, ys, 1))))
    return e0, e1, l2


def fit_cubic(trace: BlowupTrace, predicted: CubicConnectionParams) -> CubicFit:
    """Least-squares fit of (Lambda, V, tau0) seeded at ``predicted``.

    A decreasing transition is fitted as the reflection of an increasing one
    (``sign = -1``).
    """
    w = trace.samples
    lo, hi = w.mesh.a, w.mesh.b
    sign = 1.0 if float(w(hi) - w(lo)) >= 0 else -1.0
    ys = np.union1d(np.linspace(lo, hi, 2001), w.mesh.nodes)
    target = sign * w(ys)

    def model(theta):
        L, V, t = math.exp(theta[0]), math.exp(theta[1]), math.tanh(theta[2])
        return CubicConnectionParams(L, V, t)

    def resid(theta):
        return eval_cubic_connection(model(theta), ys) - target

    t0 = float(np.clip(predicted.tau0, -0.999, 0.999))
    theta0 = np.array([math.log(predicted.Lambda), math.log(predicted.V), math.atanh(t0)])
    sol = least_squares(resid, theta0, xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    best = model(sol.x)
    e0, e1, l2 = _cubic_errors(w, best, sign)
    return CubicFit(best, e0, e1, l2, sign)


# -- flatness and offsets -----------------------------------------------------

def flatness_metrics(trace: BlowupTrace, interval: tuple[float, float], omega: float,
                     n_samples: int = 2001):
    """(max|v|, max|v'|, max|v|/omega^2, max|v'|/omega^2) on ``interval``."""
    a, b = interval
    lo, hi = trace.window
    if a < lo - 1e-12 or b > hi + 1e-12 or not a < b:
        raise DomainError(f"interval {interval} is not inside the trace window {trace.window}")
    v = trace.samples
    inner = v.mesh.nodes[(v.mesh.nodes > a) & (v.mesh.nodes < b)]
    y = np.union1d(np.linspace(a, b, n_samples), inner)
    mv = float(np.max(np.abs(v(y))))
    mdv = float(np.max(np.abs(v.derivative(y))))
    part = v.restrict(a, b)
    mdv = max(mdv, float(part.max_abs_derivative_per_element().max()))
    return mv, mdv, mv / omega**2, mdv / omega**2


def offset_metric(u: HermiteFunction, forcing: ForcingSpec, center: float, omega: float) -> float:
    """(u(center) - f(center)) / omega."""
    return float((u(center) - forcing(center)) / omega)
