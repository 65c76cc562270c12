"""The singularly perturbed Perona-Malik energy family and its convexification.

All energies share the separable form ``c2*u''^2 + phi(u') + F(x, u)`` and are
integrated by :func:`pmasym.fem.assemble`.  The three addends are reported
as ``second_order``, ``perona_malik`` and ``fidelity``; for ``Fn``/``Gn`` the
zeroth-order addend ``beta*(omega^2 u^2 - 2 g u)`` is reported as fidelity
and may be negative.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .fem import ContractError, EnergyBreakdown, HermiteFunction, Mesh, assemble
from .profiles import DomainError, make_scale


class Kind(str, enum.Enum):
    PMF = "PMF"
    RPM = "RPM"
    RPMF = "RPMF"
    RPMV = "RPMV"
    RPMH = "RPMH"
    Fn = "Fn"
    Gn = "Gn"


# -- forcing ----------------------------------------------------------------

@dataclass(frozen=True)
class ForcingSpec:
    """A forcing term: ``polynomial``, ``sampled`` or ``blowup`` (affine trace).

    ``blowup`` wraps a base forcing as ``g(y) = (f(x_n + scale*y) - offset)/scale``.
    """
    form: str
    coeffs: tuple = ()
    nodes: tuple = ()
    values: tuple = ()
    base: "ForcingSpec | None" = None
    x_n: float = 0.0
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.form == "polynomial":
            if len(self.coeffs) == 0 or len(self.coeffs) > 9:
                raise ContractError("polynomial forcing needs 1..9 coefficients (degree <= 8)")
        elif self.form == "sampled":
            if len(self.nodes) < 2 or np.any(np.diff(self.nodes) <= 0):
                raise ContractError("sampled forcing needs strictly increasing nodes")
            if len(self.values) != len(self.nodes):
                raise ContractError("sampled forcing needs one value per node")
        elif self.form == "blowup":
            if self.base is None or not self.scale > 0:
                raise ContractError("blow-up forcing needs a base forcing and a positive scale")
        else:
            raise ContractError(f"unknown forcing form {self.form!r}")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "ForcingSpec":
        """Coefficients in increasing degree: ``f(x) = sum c_k x^k``."""
        return cls("polynomial", coeffs=tuple(float(c) for c in coeffs))

    @classmethod
    def sampled(cls, nodes, values) -> "ForcingSpec":
        return cls("sampled", nodes=tuple(map(float, nodes)), values=tuple(map(float, values)))

    @classmethod
    def blowup(cls, base: "ForcingSpec", x_n: float, scale: float, offset: float = 0.0) -> "ForcingSpec":
        return cls("blowup", base=base, x_n=float(x_n), scale=float(scale), offset=float(offset))

    def _spline(self):
        from scipy.interpolate import CubicSpline
        return CubicSpline(np.array(self.nodes), np.array(self.values))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "polynomial":
            return np.polynomial.polynomial.polyval(x, self.coeffs) * np.ones_like(x)
        if self.form == "sampled":
            return self._spline()(x)
        return (self.base(self.x_n + self.scale * x) - self.offset) / self.scale

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.form == "polynomial":
            d = np.polynomial.polynomial.polyder(self.coeffs) if len(self.coeffs) > 1 else [0.0]
            return np.polynomial.polynomial.polyval(x, d) * np.ones_like(x)
        if self.form == "sampled":
            return self._spline()(x, 1)
        return self.base.derivative(self.x_n + self.scale * x)

    def to_dict(self) -> dict:
        if self.form == "polynomial":
            return {"form": "polynomial", "coeffs": list(self.coeffs)}
        if self.form == "sampled":
            return {"form": "sampled", "nodes": list(self.nodes), "values": list(self.values)}
        return {"form": "blowup", "base": self.base.to_dict(), "x_n": self.x_n,
                "scale": self.scale, "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "ForcingSpec":
        if d["form"] == "polynomial":
            return cls.polynomial(d["coeffs"])
        if d["form"] == "sampled":
            return cls.sampled(d["nodes"], d["values"])
        return cls.blowup(cls.from_dict(d["base"]), d["x_n"], d["scale"], d.get("offset", 0.0))


# -- convexified Lagrangian ------------------------------------------------

def psi_switch_point(omega: float) -> float:
    """sigma* > 0 where phi_n'' = 1: omega^-2 * sqrt(sqrt(5) - 2)."""
    return math.sqrt(math.sqrt(5.0) - 2.0) / omega**2


def _phi_n(omega, sigma):
    w4 = omega**4
    t = w4 * sigma * sigma
    return np.log1p(t) / w4, 2 * sigma / (1 + t), 2 * (1 - t) / (1 + t) ** 2


def psi_n(omega: float, sigma):
    """Value, first and second derivative of the convexified Lagrangian.

    Equal to ``phi_n(s) = omega^-4 log(1 + omega^4 s^2)`` for ``|s| <= sigma*``
    and continued as the C^2 quadratic with unit curvature beyond.
    """
    if not 0.0 < omega < 1.0:
        raise DomainError("omega must lie in (0,1)")
    sigma = np.asarray(sigma, dtype=float)
    s_star = psi_switch_point(omega)
    p0, p1, _ = _phi_n(omega, s_star)
    a = np.abs(sigma)
    inner = a <= s_star
    f, df, d2f = _phi_n(omega, np.where(inner, sigma, 0.0))
    r = a - s_star
    sgn = np.sign(sigma)
    val = np.where(inner, f, p0 + p1 * r + 0.5 * r * r)
    d1 = np.where(inner, df, sgn * (p1 + r))
    d2 = np.where(inner, d2f, 1.0)
    return val, d1, d2


# -- Lagrangians -----------------------------------------------------------

@dataclass(frozen=True)
class _LogLagrangian:
    kappa: float
    gamma: float

    def __call__(self, p):
        t = self.gamma * p * p
        return (self.kappa * np.log1p(t), self.kappa * 2 * self.gamma * p / (1 + t),
                self.kappa * 2 * self.gamma * (1 - t) / (1 + t) ** 2)

    def delta(self, p1, p0):
        # log(1+g p1^2) - log(1+g p0^2) without cancellation
        return self.kappa * np.log1p(self.gamma * (p1 - p0) * (p1 + p0) / (1 + self.gamma * p0 * p0))


@dataclass(frozen=True)
class _PsiLagrangian:
    omega: float

    def __call__(self, p):
        return psi_n(self.omega, p)


@dataclass(frozen=True)
class _Zeroth:
    """F(x,u) = beta*(u - f)^2 or beta*(w2*u^2 - 2*g*u)."""
    beta: float
    forcing: ForcingSpec | None
    linear: bool = False
    w2: float = 0.0

    def __call__(self, x, u):
        if self.forcing is None or self.beta == 0:
            z = np.zeros_like(u)
            return z, z, z
        f = self.forcing(x)
        b = self.beta
        if self.linear:
            return b * (self.w2 * u * u - 2 * f * u), b * (2 * self.w2 * u - 2 * f), 2 * b * self.w2 * np.ones_like(u)
        r = u - f
        return b * r * r, 2 * b * r, 2 * b * np.ones_like(u)

    def delta(self, x, u1, u0):
        if self.forcing is None or self.beta == 0:
            return np.zeros_like(u1)
        f = self.forcing(x)
        du = u1 - u0
        if self.linear:
            return self.beta * du * (self.w2 * (u1 + u0) - 2 * f)
        return self.beta * du * (u1 + u0 - 2 * f)


@dataclass(frozen=True)
class Lagrangian:
    c2: float
    phi: object
    zeroth: object


@dataclass(frozen=True)
class FunctionalSpec:
    kind: Kind
    domain: tuple[float, float]
    eps: float | None = None
    delta: float | None = None
    beta: float = 0.0
    forcing: ForcingSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        a, b = self.domain
        if not a < b:
            raise ContractError("domain must be a nonempty interval")
        object.__setattr__(self, "domain", (float(a), float(b)))
        k = self.kind
        if k is Kind.RPMH:
            if self.delta is None or not 0 < self.delta < 1:
                raise ContractError("RPMH needs delta in (0,1)")
        elif self.eps is None or not 0 < self.eps < 1:
            raise ContractError(f"{k.value} needs eps in (0,1)")
        if k in (Kind.PMF, Kind.RPMF, Kind.Fn, Kind.Gn) and self.forcing is None:
            raise ContractError(f"{k.value} needs a forcing term")
        if self.beta < 0:
            raise ContractError("beta must be nonnegative")

    @property
    def omega(self) -> float:
        return make_scale(self.eps).omega

    @property
    def second_order(self) -> bool:
        return self.kind is not Kind.Gn

    def on(self, a: float, b: float) -> "FunctionalSpec":
        return replace(self, domain=(a, b))

    def lagrangian(self) -> Lagrangian:
        k = self.kind
        if k is Kind.RPMH:
            d = self.delta
            return Lagrangian(d**6 / abs(math.log(d)) ** 3, _LogLagrangian(1 / d**2, d**2),
                              _Zeroth(0.0, None))
        sc = make_scale(self.eps)
        e, w = sc.eps, sc.omega
        fid = _Zeroth(self.beta, self.forcing)
        if k is Kind.PMF:
            return Lagrangian(sc.coeff2nd, _LogLagrangian(1.0, 1.0), fid)
        if k is Kind.RPM:
            return Lagrangian(e**6, _LogLagrangian(1 / w**2, 1.0), _Zeroth(0.0, None))
        if k is Kind.RPMF:
            return Lagrangian(e**6, _LogLagrangian(1 / w**2, 1.0), fid)
        if k is Kind.RPMV:
            return Lagrangian(1.0, _LogLagrangian(1 / abs(math.log(e)), 1 / e**4), _Zeroth(0.0, None))
        lin = _Zeroth(self.beta, self.forcing, linear=True, w2=w * w)
        if k is Kind.Fn:
            return Lagrangian(e**6 * w**2, _LogLagrangian(1 / w**4, w**4), lin)
        return Lagrangian(0.0, _PsiLagrangian(w), lin)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "domain": list(self.domain), "eps": self.eps,
                "delta": self.delta, "beta": self.beta,
                "forcing": None if self.forcing is None else self.forcing.to_dict()}


def eval_energy(spec: FunctionalSpec, u: HermiteFunction) -> EnergyBreakdown:
    """Integrate the three addends of ``spec`` for ``u`` with 4-point Gauss per element."""
    return assemble(spec, u, gradient=False)


def rescaled_forcing(f: ForcingSpec, omega: float, x_n: float = 0.0, offset: float = 0.0) -> ForcingSpec:
    return ForcingSpec.blowup(f, x_n, omega, offset)


def rescale_to_blowup(spec: FunctionalSpec, x_n: float = 0.0, offset: float = 0.0) -> FunctionalSpec:
    """PMF on (a,b) -> RPMF in blow-up coordinates ``y = (x - x_n)/omega``.

    With ``v(y) = (u(x_n + omega y) - offset)/omega`` one has
    ``PMF(u) = omega**3 * RPMF(v)``.
    """
    if spec.kind is not Kind.PMF:
        raise ContractError("rescale_to_blowup expects a PMF functional")
    w = spec.omega
    a, b = spec.domain
    return FunctionalSpec(Kind.RPMF, ((a - x_n) / w, (b - x_n) / w), eps=spec.eps, beta=spec.beta,
                          forcing=rescaled_forcing(spec.forcing, w, x_n, offset))


def to_blowup(u: HermiteFunction, omega: float, x_n: float = 0.0, offset: float = 0.0) -> HermiteFunction:
    mesh = Mesh((u.mesh.nodes - x_n) / omega)
    return HermiteFunction(mesh, (u.values - offset) / omega, u.derivs)


def from_blowup(v: HermiteFunction, omega: float, x_n: float = 0.0, offset: float = 0.0) -> HermiteFunction:
    mesh = Mesh(x_n + omega * v.mesh.nodes)
    return HermiteFunction(mesh, offset + omega * v.values, v.derivs)


# -- competitor construction ------------------------------------------------

@dataclass(frozen=True)
class ClampedCubic:
    """Cubic on [a,b] with prescribed end values/derivatives (the optimal connector)."""
    a: float
    b: float
    A0: float
    A1: float
    B0: float
    B1: float


@dataclass(frozen=True)
class Plateau:
    a: float
    b: float
    value: float


@dataclass(frozen=True)
class AffineCorrectedCopy:
    """``v(y) + B*(v(y) + (c - y) v'(c) - v(c))`` on [a, c]; ``B = 0`` copies ``v``."""
    source: HermiteFunction
    a: float
    c: float
    B: float = 0.0


SegmentSpec = Union[ClampedCubic, Plateau, AffineCorrectedCopy]


def _segment_piece(seg: SegmentSpec):
    """Nodes, values, derivatives of one segment."""
    if isinstance(seg, ClampedCubic):
        if not seg.a < seg.b:
            raise ContractError("segment needs a < b")
        return (np.array([seg.a, seg.b]), np.array([seg.A0, seg.B0]), np.array([seg.A1, seg.B1]))
    if isinstance(seg, Plateau):
        if not seg.a < seg.b:
            raise ContractError("segment needs a < b")
        return (np.array([seg.a, seg.b]), np.full(2, float(seg.value)), np.zeros(2))
    if isinstance(seg, AffineCorrectedCopy):
        part = seg.source.restrict(seg.a, seg.c)
        x = part.mesh.nodes
        vc, dc = float(seg.source(seg.c)), float(seg.source.derivative(seg.c))
        vals = part.values + seg.B * (part.values + (seg.c - x) * dc - vc)
        ders = (1 + seg.B) * part.derivs - seg.B * dc
        return x, vals, ders
    raise ContractError(f"unknown segment {seg!r}")


def build_competitor(segments: Sequence[SegmentSpec], tol: float = 1e-12) -> HermiteFunction:
    """Glue segments into one C^1 Hermite function; joints must match exactly."""
    if not segments:
        raise ContractError("no segments")
    xs, vs, ds = _segment_piece(segments[0])
    xs, vs, ds = list(xs), list(vs), list(ds)
    for k, seg in enumerate(segments[1:], start=1):
        x, v, d = _segment_piece(seg)
        scale = max(1.0, abs(vs[-1]), abs(ds[-1]))
        if abs(x[0] - xs[-1]) > tol * max(1.0, abs(x[0])):
            raise ContractError(f"segment {k} starts at {x[0]}, previous ends at {xs[-1]}")
        if abs(v[0] - vs[-1]) > tol * scale or abs(d[0] - ds[-1]) > tol * scale:
            raise ContractError(f"C^1 mismatch at joint {x[0]} before segment {k}")
        xs += list(x[1:])
        vs += list(v[1:])
        ds += list(d[1:])
    return HermiteFunction(Mesh(np.array(xs)), np.array(vs), np.array(ds))


def affine_correction_coefficient(v: HermiteFunction, a: float, b: float, c: float,
                                  min_denominator: float = 1e-12) -> float:
    """(v(b) - v(a)) / (v(c) - v(b) - (c - b) v'(c))."""
    den = float(v(c) - v(b) - (c - b) * v.derivative(c))
    if abs(den) < min_denominator:
        raise ContractError(f"affine correction denominator {den:.3e} is too small")
    return float(v(b) - v(a)) / den


def flattened_competitor(v: HermiteFunction, a: float, b: float, c: float, eta: float) -> HermiteFunction:
    """Competitor flat on ``(a+eta, b-eta)`` and an affine-corrected copy of ``v`` on (b, c).

    It matches ``v`` and ``v'`` at ``a`` and ``c``.
    """
    if not (a + eta < b - eta and b < c):
        raise ContractError("need a < a+eta < b-eta < b < c")
    B = affine_correction_coefficient(v, a, b, c)
    va, da = float(v(a)), float(v.derivative(a))
    db = float(v.derivative(b))
    dc = float(v.derivative(c))
    segs = [ClampedCubic(a, a + eta, va, da, va, 0.0),
            Plateau(a + eta, b - eta, va),
            ClampedCubic(b - eta, b, va, 0.0, va, db + B * (db - dc)),
            AffineCorrectedCopy(v, b, c, B)]
    return build_competitor(segs, tol=1e-9)
