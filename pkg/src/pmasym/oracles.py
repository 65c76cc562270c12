"""Closed-form and small-search checks for the auxiliary inequalities.

These are independent of the finite element solvers and serve as
cross-validators for them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .asymptotics import jump_decomposition
from .fem import ContractError, HermiteFunction, integrate
from .profiles import DomainError

#: 8 * 2^(1/4) / sqrt(3), the square-root coefficient in c(L, J).
C_LJ_COEFF = 8.0 * 2.0**0.25 / math.sqrt(3.0)


@dataclass(frozen=True)
class ClampedCubicSolution:
    a: float
    b: float
    c0: float
    c1: float
    c2: float
    c3: float
    min_value: float
    sup_bound_w: float
    sup_bound_dw: float

    def __call__(self, y, order: int = 0):
        x = np.asarray(y, dtype=float) - 0.5 * (self.a + self.b)
        c = np.array([self.c0, self.c1, self.c2, self.c3])
        c = np.polynomial.polynomial.polyder(c, order) if order else c
        return np.polynomial.polynomial.polyval(x, c)


def optimal_clamped_cubic(a, b, A0, A1, B0, B1) -> ClampedCubicSolution:
    """Minimizer of the integral of w''^2 on (a,b) given w, w' at both ends."""
    if not a < b:
        raise DomainError("need a < b")
    L = b - a
    c0 = (A0 + B0) / 2 - (B1 - A1) * L / 8
    c1 = 3 * (B0 - A0) / (2 * L) - (A1 + B1) / 4
    c2 = (B1 - A1) / (2 * L)
    c3 = -2 * (B0 - A0) / L**3 + (A1 + B1) / L**2
    m = (B1 - A1) ** 2 / L + 12 / L**3 * ((B0 - A0) - (A1 + B1) * L / 2) ** 2
    bw = 1.5 * (abs(A0) + abs(B0)) + (abs(A1) + abs(B1)) * L / 2
    bdw = 3 * abs(B0 - A0) / L + 1.5 * (abs(A1) + abs(B1))
    return ClampedCubicSolution(a, b, c0, c1, c2, c3, m, bw, bdw)


@dataclass(frozen=True)
class SubadditivityCheck:
    S: float
    R: float
    M: float
    lhs: float
    rhs: float
    holds: bool


def check_sqrt_subadditivity(f: Sequence[float], slack: float = 1e-12) -> SubadditivityCheck:
    """sqrt(S - M) <= 3 (R - sqrt(S)) for nonnegative f."""
    f = np.asarray(f, dtype=float)
    if f.size == 0:
        raise DomainError("need a nonempty list")
    if np.any(f < 0):
        raise DomainError("entries must be nonnegative")
    S, R, M = float(f.sum()), float(np.sqrt(f).sum()), float(f.max())
    lhs = math.sqrt(max(S - M, 0.0))
    rhs = 3 * (R - math.sqrt(S))
    return SubadditivityCheck(S, R, M, lhs, rhs, lhs <= rhs + slack)


@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool


def check_log_lipschitz(b: float, d: float, x: float, slack: float = 1e-12) -> InequalityCheck:
    """|log(1 + ((1+b)x + d)^2) - log(1 + x^2)| <= 4|b| + |d| for |b| <= 1/2."""
    if abs(b) > 0.5:
        raise DomainError("b must satisfy |b| <= 1/2")
    y = (1 + b) * x + d
    # log1p(y^2) - log1p(x^2) = log((1+y^2)/(1+x^2)), stable for large |x|
    lhs = abs(math.log1p((y - x) * (y + x) / (1 + x * x)))
    rhs = 4 * abs(b) + abs(d)
    return InequalityCheck(lhs, rhs, lhs <= rhs + slack)


@dataclass(frozen=True)
class LowerBoundCheck:
    F_on_A: float
    bound: float
    holds: bool
    A_measure: float
    delta: float


def transition_lower_bound(alpha, beta, gamma, M, w: HermiteFunction, slack: float = 1e-9) -> LowerBoundCheck:
    """Energy of alpha w''^2 + beta log(1+gamma w'^2) on {|w'| > M} against its lower bound."""
    if min(alpha, beta, gamma, M) <= 0:
        raise DomainError("alpha, beta, gamma, M must be positive")
    if abs(float(w.derivative(w.mesh.a))) > M or abs(float(w.derivative(w.mesh.b))) > M:
        raise ContractError("need |w'| <= M at both endpoints")
    dec = jump_decomposition(w, M)
    F = integrate(w, lambda x, u, p, q: alpha * q * q + beta * np.log1p(gamma * p * p),
                  dec.intervals)
    excess = max(dec.total_delta - M * dec.A_measure, 0.0)
    bound = (4 * math.sqrt(2 / 3) * alpha**0.25 * beta**0.75
             * math.log1p(gamma * M * M) ** 0.75 * math.sqrt(excess))
    return LowerBoundCheck(F, bound, F >= bound - slack, dec.A_measure, dec.total_delta)


def _golden_min(fun, lo, hi, tol):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def c_constant(L: float, J: float, tol: float = 1e-10) -> float:
    """min of k*sqrt(A) + C^2/L subject to A + C >= J, A, C >= 0.

    Both terms are nondecreasing, so the constraint is active and the
    problem reduces to one variable C in [0, J].  The objective need not be
    unimodal, so golden-section runs on each bracket of a coarse scan and the
    endpoints are included.
    """
    if not L > 0:
        raise DomainError("L must be positive")
    if J < 0:
        raise DomainError("J must be nonnegative")
    if J == 0:
        return 0.0

    def obj(C):
        return C_LJ_COEFF * math.sqrt(max(J - C, 0.0)) + C * C / L

    cs = np.linspace(0.0, J, 65)
    vals = [obj(c) for c in cs]
    best = min(vals[0], vals[-1])
    for i in range(1, cs.size - 1):
        if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]:
            _, fv = _golden_min(obj, cs[i - 1], cs[i + 1], tol)
            best = min(best, fv)
    return float(best)


def c_constant_grid(L: float, J: float, n: int = 200) -> float:
    """Coarse 2D grid search over A, C in [0, J+2], feasible points only.

    Infeasible grid points (A + C < J) are projected onto the constraint
    line, once by raising C and once by raising A, so the active boundary is
    sampled at both coordinates' grid values.
    """
    g = np.linspace(0.0, J + 2.0, n)
    A, C = np.meshgrid(g, g, indexing="ij")
    best = math.inf
    for AA, CC in ((A, np.maximum(C, J - A)), (np.maximum(A, J - C), C)):
        val = C_LJ_COEFF * np.sqrt(AA) + CC * CC / L
        best = min(best, float(val.min()))
    return best


@dataclass(frozen=True)
class TransitionEnergy:
    ell_star: float
    energy: float


def optimal_transition_energy(J: float) -> TransitionEnergy:
    """Minimize 4 l + 12 J^2 / l^3 over l > 0 by root-finding on the derivative."""
    if not J > 0:
        raise DomainError("J must be positive")

    def dg(ell):
        return 4.0 - 36.0 * J * J / ell**4

    lo, hi = 1e-6 * math.sqrt(J), 1e6 * math.sqrt(J)
    ell = brentq(dg, lo, hi, xtol=1e-15 * math.sqrt(J), rtol=1e-15, maxiter=500)
    return TransitionEnergy(ell, 4 * ell + 12 * J * J / ell**3)
