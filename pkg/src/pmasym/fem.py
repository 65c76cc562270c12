"""C^1 piecewise-cubic Hermite discretization.

A :class:`HermiteFunction` stores nodal values and nodal derivatives on a
:class:`Mesh`.  Degrees of freedom are interleaved as
``[u_0, u'_0, u_1, u'_1, ...]`` so that each element couples four
consecutive unknowns and all Hessians are banded with bandwidth 3.

Energies handled here are integrals of separable Lagrangians
``c2*u''^2 + phi(u') + F(x, u)``; the functional objects only need to expose
``lagrangian()`` and ``domain`` (see :mod:`pmasym.functionals`).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

N_GAUSS = 4


class ContractError(ValueError):
    """Inputs violate a documented precondition."""


class NumericError(ArithmeticError):
    """Non-finite intermediate value during assembly or solve."""


class RefinementError(RuntimeError):
    pass


def gauss01(n: int = N_GAUSS):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def hermite_basis(t):
    """Reference basis on [0,1] and its first two t-derivatives, each (len(t), 4).

    Columns multiply ``(u0, h*d0, u1, h*d1)``.
    """
    t = np.asarray(t, dtype=float)
    t2, t3 = t * t, t * t * t
    b0 = np.stack([2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2], axis=-1)
    b1 = np.stack([6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t], axis=-1)
    b2 = np.stack([12 * t - 6, 6 * t - 4, -12 * t + 6, 6 * t - 2], axis=-1)
    return b0, b1, b2


def combine(c, basis):
    """Sum of coefficients times basis columns, ``c @ basis.T``.

    For derivative bases the two value columns are exact negatives, so the
    value part is formed from ``u1 - u0``; constants then have derivative 0
    exactly instead of a round-off residue.
    """
    if np.array_equal(basis[..., 0], -basis[..., 2]):
        du = c[..., 2] - c[..., 0]
        return (du[:, None] * basis[None, :, 2] + c[..., 1, None] * basis[None, :, 1]
                + c[..., 3, None] * basis[None, :, 3])
    return c @ basis.T


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ContractError("a mesh needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ContractError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, a: float, b: float, n_elements: int) -> "Mesh":
        return cls(np.linspace(a, b, n_elements + 1))

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def element_count(self) -> int:
        return self.nodes.size - 1

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        return isinstance(other, Mesh) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def locate(self, x) -> np.ndarray:
        """Element index containing each point (closed on both ends of the domain)."""
        idx = np.searchsorted(self.nodes, x, side="right") - 1
        return np.clip(idx, 0, self.element_count - 1)

    def with_nodes(self, extra) -> "Mesh":
        extra = np.asarray(extra, dtype=float)
        extra = extra[(extra > self.a) & (extra < self.b)]
        return Mesh(np.union1d(self.nodes, extra))


@dataclass(frozen=True, eq=False)
class HermiteFunction:
    mesh: Mesh
    values: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        d = np.array(self.derivs, dtype=float)
        if v.shape != (len(self.mesh),) or d.shape != (len(self.mesh),):
            raise ContractError("values/derivs must have one entry per mesh node")
        v.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "derivs", d)

    # -- dof layout -------------------------------------------------------
    @property
    def dofs(self) -> np.ndarray:
        q = np.empty(2 * len(self.mesh))
        q[0::2] = self.values
        q[1::2] = self.derivs
        return q

    @classmethod
    def from_dofs(cls, mesh: Mesh, q) -> "HermiteFunction":
        q = np.asarray(q, dtype=float)
        return cls(mesh, q[0::2], q[1::2])

    def element_coeffs(self) -> np.ndarray:
        """(n_elements, 4) array of ``(u0, h*d0, u1, h*d1)``."""
        h = self.mesh.h
        return np.stack([self.values[:-1], h * self.derivs[:-1],
                         self.values[1:], h * self.derivs[1:]], axis=1)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        e = self.mesh.locate(flat)
        h = self.mesh.h[e]
        t = (flat - self.mesh.nodes[e]) / h
        basis = hermite_basis(t)[order]
        c = self.element_coeffs()[e]
        if order:
            out = (c[:, 1] * basis[:, 1] + c[:, 3] * basis[:, 3] + (c[:, 2] - c[:, 0]) * basis[:, 2]) / h**order
        else:
            out = np.einsum("ij,ij->i", basis, c)
        return out.reshape(x.shape)

    def __call__(self, x):
        return self.evaluate(x, 0)

    def derivative(self, x, order: int = 1):
        return self.evaluate(x, order)

    def max_abs_derivative_per_element(self) -> np.ndarray:
        """Exact max of |u'| on each element (u' is quadratic)."""
        c = self.element_coeffs()
        h = self.mesh.h
        # u'(t)*h = A t^2 + B t + Cc
        A = 6 * c[:, 0] + 3 * c[:, 1] - 6 * c[:, 2] + 3 * c[:, 3]
        B = -6 * c[:, 0] - 4 * c[:, 1] + 6 * c[:, 2] - 2 * c[:, 3]
        best = np.maximum(np.abs(self.derivs[:-1]), np.abs(self.derivs[1:]))
        with np.errstate(divide="ignore", invalid="ignore"):
            tv = np.where(A != 0, -B / (2 * A), -1.0)
        inside = (tv > 0) & (tv < 1)
        val = np.abs(A * tv**2 + B * tv + c[:, 1]) / h
        return np.where(inside, np.maximum(best, val), best)

    # -- manipulation -----------------------------------------------------
    def refined(self, mesh: Mesh) -> "HermiteFunction":
        """Exact representation on a mesh whose nodes include this mesh's nodes."""
        return HermiteFunction(mesh, self.evaluate(mesh.nodes), self.evaluate(mesh.nodes, 1))

    def restrict(self, a: float, b: float) -> "HermiteFunction":
        """Exact restriction to ``[a, b]`` (piecewise cubics are closed under cutting)."""
        if a < self.mesh.a - 1e-12 * max(1.0, abs(self.mesh.a)) or b > self.mesh.b + 1e-12 * max(1.0, abs(self.mesh.b)) or not a < b:
            raise ContractError(f"[{a}, {b}] is not inside [{self.mesh.a}, {self.mesh.b}]")
        inner = self.mesh.nodes[(self.mesh.nodes > a) & (self.mesh.nodes < b)]
        nodes = np.concatenate([[a], inner, [b]])
        return HermiteFunction(Mesh(nodes), self.evaluate(nodes), self.evaluate(nodes, 1))

    def __add__(self, other: "HermiteFunction") -> "HermiteFunction":
        if other.mesh != self.mesh:
            raise ContractError("mesh mismatch")
        return HermiteFunction(self.mesh, self.values + other.values, self.derivs + other.derivs)

    def scaled(self, factor: float, shift: float = 0.0) -> "HermiteFunction":
        return HermiteFunction(self.mesh, factor * self.values + shift, factor * self.derivs)

    # -- serialization ----------------------------------------------------
    def to_text(self) -> str:
        """Plain-text table: one ``node value derivative`` row per mesh node."""
        buf = io.StringIO()
        buf.write("# node value derivative\n")
        for x, v, d in zip(self.mesh.nodes, self.values, self.derivs):
            buf.write(f"{float(x)!r} {float(v)!r} {float(d)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "HermiteFunction":
        rows = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
        if rows.shape[1] != 3:
            raise ContractError("expected three columns: node value derivative")
        return cls(Mesh(rows[:, 0]), rows[:, 1], rows[:, 2])


def interpolate(source, mesh: Mesh, derivative: Callable | None = None) -> HermiteFunction:
    """Hermite interpolant of ``source`` on ``mesh``.

    ``source`` may be a callable (with ``derivative`` or a ``.derivative``
    method; otherwise a cubic spline of the nodal values supplies slopes),
    a :class:`HermiteFunction`, or a ``(nodes, values)`` / ``(nodes, values,
    derivs)`` tuple of samples.
    """
    x = mesh.nodes
    if isinstance(source, HermiteFunction):
        return HermiteFunction(mesh, source(x), source.derivative(x))
    if isinstance(source, tuple):
        from scipy.interpolate import CubicHermiteSpline, CubicSpline
        if len(source) == 3:
            spl = CubicHermiteSpline(*source)
        else:
            spl = CubicSpline(source[0], source[1])
        return HermiteFunction(mesh, spl(x), spl(x, 1))
    vals = np.asarray(source(x), dtype=float) * np.ones_like(x)
    if derivative is None:
        derivative = getattr(source, "derivative", None)
    if derivative is not None:
        ders = np.asarray(derivative(x), dtype=float) * np.ones_like(x)
    else:
        from scipy.interpolate import CubicSpline
        ders = CubicSpline(x, vals)(x, 1)
    return HermiteFunction(mesh, vals, ders)


# -- assembly -------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBreakdown:
    second_order: float
    perona_malik: float
    fidelity: float
    total: float

    @classmethod
    def from_parts(cls, second_order, perona_malik, fidelity) -> "EnergyBreakdown":
        s, p, f = float(second_order), float(perona_malik), float(fidelity)
        return cls(s, p, f, s + p + f)

    def as_dict(self) -> dict:
        return {"second_order": self.second_order, "perona_malik": self.perona_malik,
                "fidelity": self.fidelity, "total": self.total}


@dataclass(frozen=True)
class GradientVector:
    """Partials of an energy with respect to the interleaved nodal dofs."""
    flat: np.ndarray

    @property
    def d_values(self) -> np.ndarray:
        return self.flat[0::2]

    @property
    def d_derivs(self) -> np.ndarray:
        return self.flat[1::2]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.flat))) if self.flat.size else 0.0

    def __len__(self):
        return self.flat.size


def _check_domain(spec, u: HermiteFunction):
    a, b = spec.domain
    scale = max(1.0, abs(a), abs(b))
    if abs(u.mesh.a - a) > 1e-10 * scale or abs(u.mesh.b - b) > 1e-10 * scale:
        raise ContractError(f"function lives on [{u.mesh.a}, {u.mesh.b}], functional on [{a}, {b}]")


def _quadrature_data(mesh: Mesh, n_gauss: int):
    t, w = gauss01(n_gauss)
    b0, b1, b2 = hermite_basis(t)
    h = mesh.h[:, None]
    xq = mesh.nodes[:-1, None] + h * t[None, :]
    return xq, w, b0, b1, b2, h


def assemble(spec, u: HermiteFunction, *, gradient: bool = True, hessian: bool = False,
             convexify: bool = False, n_gauss: int = N_GAUSS):
    """Energy breakdown, exact gradient and (optionally) banded Hessian.

    Returns ``(EnergyBreakdown, GradientVector)``; with ``hessian=True`` a
    third item is returned, the Hessian in upper banded storage suitable for
    :func:`scipy.linalg.solveh_banded`. ``convexify`` clips the negative
    curvature of the first-order Lagrangian to zero.
    """
    _check_domain(spec, u)
    lag = spec.lagrangian()
    mesh = u.mesh
    xq, w, b0, b1, b2, h = _quadrature_data(mesh, n_gauss)
    c = u.element_coeffs()
    val = c @ b0.T
    p = combine(c, b1) / h
    q = combine(c, b2) / h**2
    jac = w[None, :] * h

    phi, dphi, d2phi = lag.phi(p)
    F, dF, d2F = lag.zeroth(xq, val)
    c2 = lag.c2
    e2 = (c2 * q * q * jac).sum(axis=1)
    e1 = (phi * jac).sum(axis=1)
    e0 = (F * jac).sum(axis=1)
    elem = e2 + e1 + e0
    if not np.all(np.isfinite(elem)):
        bad = int(np.flatnonzero(~np.isfinite(elem))[0])
        raise NumericError(f"non-finite energy on element {bad}")
    energy = EnergyBreakdown.from_parts(e2.sum(), e1.sum(), e0.sum())
    if not gradient and not hessian:
        return energy

    n = 2 * len(mesh)
    # chain rule through coefficient scaling (u0, h d0, u1, h d1)
    scale = np.stack([np.ones_like(h[:, 0]), h[:, 0], np.ones_like(h[:, 0]), h[:, 0]], axis=1)
    gq = (2 * c2 * q / h**2 * jac)
    gp = (dphi / h * jac)
    g0 = (dF * jac)
    ge = (gq @ b2 + gp @ b1 + g0 @ b0) * scale
    if not np.all(np.isfinite(ge)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(ge), axis=1))[0])
        raise NumericError(f"non-finite gradient on element {bad}")
    idx = 2 * np.arange(mesh.element_count)[:, None] + np.arange(4)[None, :]
    grad = np.zeros(n)
    # fixed element order keeps the reduction deterministic
    np.add.at(grad, idx.ravel(), ge.ravel())
    grad_vec = GradientVector(grad)
    if not hessian:
        return energy, grad_vec

    curv = np.maximum(d2phi, 0.0) if convexify else d2phi
    hq = 2 * c2 / h**4 * jac
    hp = curv / h**2 * jac
    h0 = d2F * jac
    He = (np.einsum("eq,qi,qj->eij", hq * np.ones_like(jac), b2, b2)
          + np.einsum("eq,qi,qj->eij", hp, b1, b1)
          + np.einsum("eq,qi,qj->eij", h0 * np.ones_like(jac), b0, b0))
    He *= scale[:, :, None] * scale[:, None, :]
    ab = np.zeros((4, n))
    for i in range(4):
        for j in range(i, 4):
            # upper storage: ab[3 + r - col, col] = A[r, col]
            rows = idx[:, i]
            cols = idx[:, j]
            np.add.at(ab, (3 + rows - cols, cols), He[:, i, j])
    return energy, grad_vec, ab


def energy_delta(spec, u_new: HermiteFunction, u_old: HermiteFunction, n_gauss: int = N_GAUSS) -> float:
    """E(u_new) - E(u_old) on a shared mesh, formed pointwise to avoid cancellation.

    Lagrangian pieces may provide ``delta(a, b)`` for an accurate ``f(a) - f(b)``.
    """
    if u_new.mesh != u_old.mesh:
        raise ContractError("mesh mismatch")
    lag = spec.lagrangian()
    xq, w, b0, b1, b2, h = _quadrature_data(u_new.mesh, n_gauss)
    jac = w[None, :] * h
    c1, c0 = u_new.element_coeffs(), u_old.element_coeffs()
    dc = c1 - c0
    val0, dval = c0 @ b0.T, dc @ b0.T
    p0, dp = combine(c0, b1) / h, combine(dc, b1) / h
    q0, dq = combine(c0, b2) / h**2, combine(dc, b2) / h**2
    d2 = lag.c2 * dq * (2 * q0 + dq)
    if hasattr(lag.phi, "delta"):
        d1 = lag.phi.delta(p0 + dp, p0)
    else:
        d1 = lag.phi(p0 + dp)[0] - lag.phi(p0)[0]
    z = lag.zeroth
    if hasattr(z, "delta"):
        d0 = z.delta(xq, val0 + dval, val0)
    else:
        d0 = z(xq, val0 + dval)[0] - z(xq, val0)[0]
    elem = ((d2 + d1 + d0) * jac).sum(axis=1)
    out = math.fsum(elem)
    if not math.isfinite(out):
        raise NumericError("non-finite energy difference")
    return out


def integrate(u: HermiteFunction, integrand: Callable, intervals=None, n_gauss: int = 8) -> float:
    """Integrate ``integrand(x, u, u', u'')`` over ``intervals`` (default: whole mesh).

    Integration pieces are split at mesh nodes so the quadrature is applied
    to polynomials on each piece.
    """
    if intervals is None:
        intervals = [(u.mesh.a, u.mesh.b)]
    t, w = gauss01(n_gauss)
    total = 0.0
    for lo, hi in intervals:
        if hi <= lo:
            continue
        inner = u.mesh.nodes[(u.mesh.nodes > lo) & (u.mesh.nodes < hi)]
        brk = np.concatenate([[lo], inner, [hi]])
        h = np.diff(brk)[:, None]
        # evaluate at interior points only, so element lookup is unambiguous
        x = brk[:-1, None] + h * t[None, :]
        vals = integrand(x, u(x), u.derivative(x, 1), u.derivative(x, 2))
        total += float((vals * w[None, :] * h).sum())
    return total


# -- refinement -----------------------------------------------------------

@dataclass(frozen=True)
class RefinePolicy:
    threshold: float
    max_levels: int = 10
    node_cap: int = 200_000
    min_size: float = 0.0


def refine(mesh: Mesh, u: HermiteFunction, policy: RefinePolicy) -> Mesh:
    """Bisect elements where max|u'| exceeds the threshold, level by level.

    ``u`` is re-represented exactly on each refined mesh, so the indicator
    is always that of the original function.
    """
    if u.mesh != mesh:
        u = interpolate(u, mesh)
    current = mesh
    for _ in range(policy.max_levels):
        uu = u.refined(current) if current is not u.mesh else u
        ind = uu.max_abs_derivative_per_element()
        mark = (ind > policy.threshold) & (current.h > 2 * policy.min_size)
        if not mark.any():
            break
        mids = 0.5 * (current.nodes[:-1] + current.nodes[1:])[mark]
        if len(current) + mids.size > policy.node_cap:
            raise RefinementError(f"refinement would exceed node cap {policy.node_cap}")
        current = Mesh(np.sort(np.concatenate([current.nodes, mids])))
    return current


def graded_mesh(a: float, b: float, h_coarse: float, centers=(), h_fine: float | None = None,
                widths=(), growth: float = 1.3) -> Mesh:
    """Mesh with spacing ``h_fine`` on ``center +- width`` windows, geometrically
    grading up to ``h_coarse`` elsewhere."""
    if h_fine is None or len(centers) == 0:
        n = max(1, int(np.ceil((b - a) / h_coarse)))
        return Mesh.uniform(a, b, n)
    if np.isscalar(widths):
        widths = [widths] * len(centers)
    xs = np.linspace(a, b, 20001)
    dist = np.full_like(xs, np.inf)
    for c, wdt in zip(centers, widths):
        dist = np.minimum(dist, np.maximum(np.abs(xs - c) - wdt, 0.0))
    # local target size grows geometrically away from the fine windows
    size = np.minimum(h_coarse, h_fine + (growth - 1.0) * dist)
    nodes = [a]
    x = a
    while x < b:
        hloc = np.interp(x, xs, size)
        hloc = min(hloc, np.interp(min(x + hloc, b), xs, size) * growth)
        x = x + hloc
        nodes.append(min(x, b))
    nodes = np.array(nodes)
    if nodes[-1] - nodes[-2] < 0.25 * np.interp(b, xs, size) and nodes.size > 2:
        nodes = np.delete(nodes, -2)
    nodes[-1] = b
    return Mesh(nodes)
