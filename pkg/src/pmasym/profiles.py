"""Analytic reference profiles: scales, staircases, cubic connections.

Everything here is a closed-form object the numerical pipeline is compared
against. Functions are vectorized over ``x`` where that makes sense.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

#: Energy cost per unit square-root jump of the rescaled functional.
ALPHA0 = 16.0 / math.sqrt(3.0)


class DomainError(ValueError):
    """Argument outside the set where a formula is defined."""


@dataclass(frozen=True)
class ScaleParams:
    eps: float
    omega: float
    eps2: float
    coeff2nd: float


def make_scale(eps: float) -> ScaleParams:
    """Return omega(eps) = eps*|log eps|^(1/2) and the derived coefficients."""
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0,1), got {eps!r}")
    log_eps = abs(math.log(eps))
    omega = eps * math.sqrt(log_eps)
    return ScaleParams(eps=eps, omega=omega, eps2=eps * eps,
                       coeff2nd=eps**6 * omega**4)


class StaircaseKind(str, enum.Enum):
    CANONICAL = "Canonical"
    HOR = "Hor"
    VERT = "Vert"
    OBL = "Obl"


@dataclass(frozen=True)
class StaircaseParams:
    H: float
    V: float
    tau0: float = 0.0
    kind: StaircaseKind = StaircaseKind.CANONICAL
    degenerate: bool = False

    def __post_init__(self):
        if not self.degenerate and not self.H > 0:
            raise DomainError("H must be positive for a non-degenerate staircase")
        if not -1.0 <= self.tau0 <= 1.0:
            raise DomainError("tau0 must lie in [-1,1]")

    def translated(self, kind: StaircaseKind | str, tau0: float) -> "StaircaseParams":
        return replace(self, kind=StaircaseKind(kind), tau0=float(tau0))


def staircase_params(beta: float, slope: float, tau0: float = 0.0,
                     kind: StaircaseKind | str = StaircaseKind.CANONICAL) -> StaircaseParams:
    """Predicted half step length H and half step height V for a forcing slope."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    kind = StaircaseKind(kind)
    if slope == 0:
        return StaircaseParams(H=math.nan, V=0.0, tau0=tau0, kind=kind, degenerate=True)
    H = (24.0 / (beta**2 * abs(slope) ** 3)) ** 0.2
    return StaircaseParams(H=H, V=slope * H, tau0=tau0, kind=kind)


def _S(x):
    return 2.0 * np.floor((np.asarray(x, dtype=float) + 1.0) / 2.0)


def canonical_staircase(H: float, V: float, x):
    return V * _S(np.asarray(x, dtype=float) / H)


def eval_staircase(p: StaircaseParams, x):
    """Evaluate the staircase translation selected by ``p.kind``."""
    x = np.asarray(x, dtype=float)
    if p.degenerate:
        return np.zeros_like(x)
    H, V, t = p.H, p.V, p.tau0
    if p.kind is StaircaseKind.CANONICAL:
        out = canonical_staircase(H, V, x)
    elif p.kind is StaircaseKind.HOR:
        out = canonical_staircase(H, V, x - H * t)
    elif p.kind is StaircaseKind.VERT:
        out = canonical_staircase(H, V, x - H) + V * (1.0 - t)
    else:
        out = canonical_staircase(H, V, x - H * t) + V * t
    return out


def staircase_jumps(p: StaircaseParams, lo: float, hi: float) -> np.ndarray:
    """Jump locations of the selected translation inside ``[lo, hi]``."""
    if p.degenerate or p.V == 0:
        return np.empty(0)
    if p.kind is StaircaseKind.VERT:
        shift = 0.0
    elif p.kind is StaircaseKind.CANONICAL:
        shift = p.H
    else:
        shift = p.H * (p.tau0 + 1.0)
    period = 2.0 * p.H
    k0 = math.ceil((lo - shift) / period)
    k1 = math.floor((hi - shift) / period)
    return shift + period * np.arange(k0, k1 + 1)


def lambda_from_V(V: float) -> float:
    """Half transition length of the optimal cubic for a jump of height 2V."""
    if not V > 0:
        raise DomainError("V must be positive")
    return math.sqrt(3.0) / 2.0 * math.sqrt(2.0 * V)


def _C(s, order=0):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    if order == 0:
        return np.where(inside, 1.5 * s - 0.5 * s**3, np.sign(s))
    if order == 1:
        return np.where(inside, 1.5 - 1.5 * s**2, 0.0)
    if order == 2:
        return np.where(inside, -3.0 * s, 0.0)
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True)
class CubicConnectionParams:
    Lambda: float
    V: float
    tau0: float = 0.0
    x0: float = field(default=math.nan)

    def __post_init__(self):
        if not (self.Lambda > 0 and self.V > 0):
            raise DomainError("Lambda and V must be positive")
        if not -1.0 < self.tau0 < 1.0:
            raise DomainError("graph translation needs |tau0| < 1")
        if math.isnan(self.x0):
            object.__setattr__(self, "x0", _solve_shift(self.Lambda, self.tau0))


def _solve_shift(Lambda: float, tau0: float) -> float:
    if tau0 == 0.0:
        return 0.0
    # C is strictly increasing on (-1, 1), so the root is unique.
    s = bisect(lambda s: 1.5 * s - 0.5 * s**3 - tau0, -1.0, 1.0, xtol=1e-15, rtol=1e-15,
               maxiter=200)
    return Lambda * s


def cubic_connection(V: float, tau0: float = 0.0, Lambda: float | None = None) -> CubicConnectionParams:
    """Cubic connection for half height ``V``; ``Lambda`` defaults to the optimal length."""
    if Lambda is None:
        Lambda = lambda_from_V(V)
    return CubicConnectionParams(Lambda=Lambda, V=V, tau0=tau0)


def eval_cubic_connection(p: CubicConnectionParams, x, order: int = 0):
    """Value (or derivative of given order) of C_{Lambda,V}(x + x0) - tau0*V."""
    s = (np.asarray(x, dtype=float) + p.x0) / p.Lambda
    out = p.V * _C(s, order) / p.Lambda**order
    if order == 0:
        out = out - p.tau0 * p.V
    return out


@dataclass(frozen=True)
class JumpSet:
    jumps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        locs = [loc for loc, _ in self.jumps]
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise DomainError("jump locations must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "JumpSet":
        return cls(tuple((float(a), float(b)) for a, b in pairs))


def j_half(j: JumpSet) -> float:
    """Sum of square roots of absolute jump heights."""
    total = 0.0
    for loc, height in j.jumps:
        if height == 0:
            raise DomainError(f"zero jump height at {loc}")
        total += math.sqrt(abs(height))
    return total
