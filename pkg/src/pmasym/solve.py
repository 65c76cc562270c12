"""Minimizers: multi-start Newton/gradient descent for the Perona-Malik family,
a convex solver for ``Gn`` and the exact clamped-quadratic solve.

All descent runs share one loop: a Newton direction from the banded Hessian
when it is positive definite, else from the convexified Hessian with a
Levenberg shift, else steepest descent; every step passes an Armijo test.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .fem import (ContractError, EnergyBreakdown, HermiteFunction, Mesh, NumericError,
                  RefinePolicy, RefinementError, assemble, energy_delta, graded_mesh, interpolate, refine)
from .functionals import ClampedCubic, FunctionalSpec, Kind, Lagrangian, Plateau, _Zeroth, build_competitor
from .profiles import ALPHA0, StaircaseParams, lambda_from_V


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100_000
    grad_tol: float = 1e-8
    shrink: float = 0.5
    armijo: float = 1e-4
    relative_tol: bool = True
    max_backtracks: int = 60
    newton: bool = True
    threads: int = 1


@dataclass(frozen=True)
class SolveResult:
    u: HermiteFunction
    energy: EnergyBreakdown
    iterations: int
    converged: bool
    init_label: str
    grad_norm: float = math.nan
    candidates: tuple = ()

    def table(self) -> list[dict]:
        return [dict(label=l, energy=e, converged=c, iterations=i) for l, e, c, i in self.candidates]


@dataclass(frozen=True)
class InitCandidate:
    label: str
    u0: HermiteFunction


@dataclass(frozen=True)
class DirichletBC:
    left_value: float
    right_value: float
    left_derivative: float | None = None
    right_derivative: float | None = None

    @property
    def clamped(self) -> bool:
        return self.left_derivative is not None and self.right_derivative is not None

    def check(self, second_order: bool):
        has = (self.left_derivative is not None, self.right_derivative is not None)
        if second_order and not all(has):
            raise ContractError("a second-order functional needs derivative boundary data")
        if not second_order and any(has):
            raise ContractError("a first-order functional takes value boundary data only")


# -- core descent -------------------------------------------------------------

def _fix_banded(ab: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    """Replace rows/columns of ``fixed`` dofs by the identity (upper band storage)."""
    ab = ab.copy()
    n = ab.shape[1]
    for k in fixed:
        for c in range(k, min(k + 4, n)):
            ab[3 + k - c, c] = 0.0
        for r in range(max(k - 3, 0), k + 1):
            ab[3 + r - k, k] = 0.0
        ab[3, k] = 1.0
    return ab


def _direction(ab, g, fixed, shift):
    ab = _fix_banded(ab, fixed) if fixed.size else ab.copy()
    if shift:
        ab[3] += shift
    d = solveh_banded(ab, -g, check_finite=False)
    return d


def _descend(spec, u0: HermiteFunction, opts: SolverOptions, fixed=None):
    """Run descent from ``u0``; ``fixed`` lists dof indices held at their initial values."""
    mesh = u0.mesh
    fixed = np.asarray([] if fixed is None else fixed, dtype=int)
    q = u0.dofs.copy()
    u = u0
    E, g = assemble(spec, u)
    it = 0
    converged = False
    gn = math.inf
    while True:
        gg = g.flat.copy()
        gg[fixed] = 0.0
        gn = float(np.max(np.abs(gg))) if gg.size else 0.0
        tol = opts.grad_tol * (1.0 + abs(E.total)) if opts.relative_tol else opts.grad_tol
        if gn <= tol:
            converged = True
            break
        if it >= opts.max_iter:
            break
        it += 1
        directions = []
        if opts.newton:
            _, _, ab = assemble(spec, u, hessian=True)
            diag = float(np.max(np.abs(ab[3]))) or 1.0
            try:
                directions.append(_direction(ab, gg, fixed, 0.0))
            except LinAlgError:
                pass
            if not directions:
                _, _, abc = assemble(spec, u, hessian=True, convexify=True)
                mu = 1e-12 * diag
                while mu < 1e3 * diag and not directions:
                    try:
                        directions.append(_direction(abc, gg, fixed, mu))
                    except LinAlgError:
                        mu *= 100.0
        directions.append(-gg)
        accepted = False
        for d in directions:
            d = d.copy()
            d[fixed] = 0.0
            slope = float(gg @ d)
            if not slope < 0 or not np.all(np.isfinite(d)):
                continue
            t = 1.0
            for _ in range(opts.max_backtracks):
                trial = HermiteFunction.from_dofs(mesh, q + t * d)
                try:
                    dE = energy_delta(spec, trial, u)
                except NumericError:
                    t *= opts.shrink
                    continue
                if dE <= opts.armijo * t * slope and dE < 0:
                    accepted = True
                    break
                t *= opts.shrink
            if accepted:
                break
        if not accepted:
            # no strict decrease is representable any more
            break
        q = q + t * d
        u = HermiteFunction.from_dofs(mesh, q)
        E, g = assemble(spec, u)
    return u, E, it, converged, gn


def _select(results):
    """Lowest energy, converged runs first; ties (1e-10) go to the lowest label."""
    pool = [r for r in results if r.converged] or list(results)
    emin = min(r.energy.total for r in pool)
    near = [r for r in pool if r.energy.total - emin <= 1e-10 * (1.0 + abs(emin))]
    return min(near, key=lambda r: r.init_label)


def _run_all(spec, inits, opts) -> list[SolveResult]:
    def run(c: InitCandidate) -> SolveResult:
        u, E, it, conv, gn = _descend(spec, c.u0, opts)
        return SolveResult(u, E, it, conv, c.label, gn)

    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as ex:
            return list(ex.map(run, inits))
    return [run(c) for c in inits]


def _merge(results) -> SolveResult:
    best = _select(results)
    table = tuple(sorted((r.init_label, r.energy.total, r.converged, r.iterations) for r in results))
    return SolveResult(best.u, best.energy, best.iterations, best.converged, best.init_label,
                       best.grad_norm, table)


def minimize(spec: FunctionalSpec, inits: Sequence[InitCandidate],
             opts: SolverOptions | None = None) -> SolveResult:
    """Descend from every candidate and keep the best converged result.

    The returned ``candidates`` table lists (label, energy, converged,
    iterations) for each start in label order.
    """
    if not inits:
        raise ContractError("minimize needs at least one initial candidate")
    opts = opts or SolverOptions()

    results = _run_all(spec, inits, opts)
    return _merge(results)


def _boundary_dofs(n_nodes: int, clamped: bool) -> np.ndarray:
    last = 2 * (n_nodes - 1)
    return np.array([0, 1, last, last + 1] if clamped else [0, last])


def _with_bc(u: HermiteFunction, bc: DirichletBC) -> HermiteFunction:
    v, d = u.values.copy(), u.derivs.copy()
    v[0], v[-1] = bc.left_value, bc.right_value
    if bc.clamped:
        d[0], d[-1] = bc.left_derivative, bc.right_derivative
    return HermiteFunction(u.mesh, v, d)


def minimize_convex(spec: FunctionalSpec, bc: DirichletBC, mesh: Mesh | None = None,
                    u0: HermiteFunction | None = None, opts: SolverOptions | None = None,
                    n_elements: int = 64) -> SolveResult:
    """Global minimizer of the discretized ``Gn`` with value boundary data."""
    if spec.kind is not Kind.Gn:
        raise ContractError("minimize_convex expects a Gn functional")
    bc.check(second_order=False)
    opts = opts or SolverOptions(grad_tol=1e-10, relative_tol=False)
    if u0 is None:
        mesh = mesh or Mesh.uniform(*spec.domain, n_elements)
        a, b = spec.domain
        s = (bc.right_value - bc.left_value) / (b - a)
        u0 = interpolate(lambda x: bc.left_value + s * (x - a), mesh, lambda x: s + 0 * x)
    u0 = _with_bc(u0, bc)
    fixed = _boundary_dofs(len(u0.mesh), clamped=False)
    u, E, it, conv, gn = _descend(spec, u0, opts, fixed)
    if not conv:
        raise NumericError(f"convex solve stalled at gradient norm {gn:.3e} after {it} iterations")
    return SolveResult(u, E, it, conv, "convex", gn)


@dataclass(frozen=True)
class _ClampedQuadratic:
    domain: tuple[float, float]

    def lagrangian(self):
        return Lagrangian(1.0, lambda p: (0 * p, 0 * p, 0 * p), _Zeroth(0.0, None))


def minimize_clamped_quadratic(a: float, b: float, bc: DirichletBC, n_elements: int = 8) -> SolveResult:
    """Discrete minimizer of the integral of w''^2 under clamped data (one linear solve)."""
    if not a < b:
        raise ContractError("need a < b")
    bc.check(second_order=True)
    spec = _ClampedQuadratic((float(a), float(b)))
    mesh = Mesh.uniform(a, b, n_elements)
    u0 = _with_bc(HermiteFunction(mesh, np.zeros(len(mesh)), np.zeros(len(mesh))), bc)
    fixed = _boundary_dofs(len(mesh), clamped=True)
    _, g, ab = assemble(spec, u0, hessian=True)
    gg = g.flat.copy()
    gg[fixed] = 0.0
    d = _direction(ab, gg, fixed, 0.0)
    d[fixed] = 0.0
    u = HermiteFunction.from_dofs(mesh, u0.dofs + d)
    E, g = assemble(spec, u)
    gg = g.flat.copy()
    gg[fixed] = 0.0
    gn = float(np.max(np.abs(gg)))
    return SolveResult(u, E, 1, True, "clamped", gn)


# -- initial candidates -----------------------------------------------------

def jump_mesh(a: float, b: float, jumps, half_width: float, h_coarse: float = 0.05,
              resolution: int = 16) -> Mesh:
    """Graded mesh whose fine windows travel with the jumps.

    The local pattern around each jump is the same wherever the jump sits,
    so discretization error does not depend on jump position.
    """
    jumps = [j for j in jumps if a < j < b]
    if not jumps:
        return Mesh.uniform(a, b, max(1, math.ceil((b - a) / h_coarse)))
    return graded_mesh(a, b, h_coarse, centers=jumps, h_fine=half_width / resolution,
                       widths=1.5 * half_width, growth=1.25)


def _staircase_function(spec, mesh, jumps, half_width, h_coarse=0.05, resolution=16):
    """Plateaus at the forcing mean, cubic connections of half width ``half_width``.

    ``mesh=None`` selects :func:`jump_mesh` for the kept jumps.
    """
    a, b = spec.domain
    g = spec.forcing
    kept = []
    for j in sorted(jumps):
        # drop jumps whose connectors would overlap a neighbour or the boundary
        if a + half_width < j < b - half_width and (not kept or j - kept[-1] > 2.5 * half_width):
            kept.append(j)
    jumps = kept
    edges = [a] + list(jumps) + [b]
    levels = []
    for lo, hi in zip(edges, edges[1:]):
        xs = np.linspace(lo, hi, 65)
        levels.append(float(np.trapezoid(g(xs), xs) / (hi - lo)))
    segs = []
    x = a
    for k, j in enumerate(jumps):
        segs.append(Plateau(x, j - half_width, levels[k]))
        segs.append(ClampedCubic(j - half_width, j + half_width, levels[k], 0.0, levels[k + 1], 0.0))
        x = j + half_width
    segs.append(Plateau(x, b, levels[-1]))
    if mesh is None:
        mesh = jump_mesh(a, b, jumps, half_width, h_coarse, resolution)
    return interpolate(build_competitor(segs), mesh)


def transition_half_width(spec: FunctionalSpec, predicted: StaircaseParams) -> float:
    """Predicted half width Lambda*eps^2 of a transition in blow-up coordinates."""
    if predicted.degenerate or predicted.V == 0 or not spec.eps:
        return math.nan
    return lambda_from_V(abs(predicted.V)) * spec.eps**2


def _plateau_stats(g, lo, hi, n=33):
    """Mean of g on [lo, hi] and the integral of (g - mean)^2 (Gauss-Legendre)."""
    if not hi - lo > 1e-14 * max(1.0, abs(lo), abs(hi)):
        return float(g(0.5 * (lo + hi))), 0.0
    x, w = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * (hi - lo) * (x + 1) + lo
    ws = 0.5 * (hi - lo) * w
    gv = g(xs)
    m = float(ws @ gv) / (hi - lo)
    return m, float(ws @ (gv - m) ** 2)


def reduced_jump_positions(spec: FunctionalSpec, k: int, cost: float) -> tuple[np.ndarray, float]:
    """Jump positions minimizing the sharp-interface energy with k jumps.

    The reduced energy has flat plateaus at the forcing mean and charges
    ``cost*sqrt(|jump|)`` per jump: ``cost * sum sqrt|m_{i+1} - m_i| +
    beta * sum int (g - m_i)^2``.  Gaps are parametrized by a softmax, so the
    search is unconstrained.
    """
    from scipy.optimize import minimize as sp_minimize
    a, b = spec.domain
    L = b - a
    g = spec.forcing

    def positions(z):
        e = np.exp(np.concatenate([[0.0], z]) - np.max(np.concatenate([[0.0], z])))
        gaps = L * e / e.sum()
        return a + np.cumsum(gaps)[:-1]

    def energy(z):
        edges = np.concatenate([[a], positions(z), [b]])
        stats = [_plateau_stats(g, lo, hi) for lo, hi in zip(edges, edges[1:])]
        ms = np.array([m for m, _ in stats])
        return cost * float(np.sqrt(np.abs(np.diff(ms))).sum()) + spec.beta * sum(r for _, r in stats)

    z0 = np.zeros(k)
    res = sp_minimize(energy, z0, method="Nelder-Mead",
                      options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 4000 * max(k, 1)})
    return positions(res.x), float(res.fun)


def init_candidates(spec: FunctionalSpec, predicted: StaircaseParams,
                    taus: Sequence[float] = (-0.5, 0.0, 0.5, 1.0), mesh: Mesh | None = None,
                    resolution: int = 16, h_coarse: float = 0.05,
                    extra_jump_counts: int = 1,
                    cost_factors: Sequence[float] = ()) -> list[InitCandidate]:
    """Starts for the nonconvex solve in blow-up coordinates.

    ``forcing``: the forcing interpolant; ``constant``: its mean;
    ``staircase:tau=..``: the predicted staircase snapped to the forcing with
    cubic connectors of half width Lambda*eps^2 at shifts of the predicted
    jump grid; ``jumps:k``: k equally spaced jumps with half-length end
    plateaus; ``reduced:k=..,c=..``: jump positions from
    :func:`reduced_jump_positions` with cost ``c*ALPHA0`` for each factor in
    ``cost_factors``.  Jumps of a descended solution barely move (they are
    metastable), which is why configurations are enumerated up front.

    Without ``mesh`` each start gets its own :func:`jump_mesh` with
    ``resolution`` elements per transition half width.
    """
    if spec.forcing is None:
        raise ContractError("init_candidates needs a forcing term")
    a, b = spec.domain
    g = spec.forcing
    half = transition_half_width(spec, predicted)
    base = mesh or Mesh.uniform(a, b, max(1, math.ceil((b - a) / h_coarse)))
    out = [InitCandidate("forcing", interpolate(g, base))]
    xs = np.linspace(a, b, 1025)
    mean = float(np.trapezoid(g(xs), xs) / (b - a))
    n = len(base)
    out.append(InitCandidate("constant", HermiteFunction(base, np.full(n, mean), np.zeros(n))))
    if math.isnan(half):
        return out
    H = predicted.H
    for t in taus:
        shift = a + H * (t + 1.0)
        k = np.arange(math.floor((a - shift) / (2 * H)), math.ceil((b - shift) / (2 * H)) + 1)
        out.append(InitCandidate(f"staircase:tau={t:+.2f}",
                                 _staircase_function(spec, mesh, shift + 2 * H * k, half,
                                                     h_coarse, resolution)))
    L = b - a
    k0 = int(round(L / (2 * H)))
    for k in range(max(1, k0 - extra_jump_counts), k0 + extra_jump_counts + 1):
        ell = L / k
        jumps = a + ell / 2 + ell * np.arange(k)
        out.append(InitCandidate(f"jumps:{k}", _staircase_function(spec, mesh, jumps, half,
                                                                     h_coarse, resolution)))
    seen = set()
    for c in cost_factors:
        for k in range(1, k0 + extra_jump_counts + 1):
            jumps, _ = reduced_jump_positions(spec, k, c * ALPHA0)
            key = tuple(np.round(jumps / half).astype(int))
            if key in seen:
                continue
            seen.add(key)
            out.append(InitCandidate(f"reduced:k={k},c={c:.2f}",
                                     _staircase_function(spec, mesh, jumps, half, h_coarse, resolution)))
    return out


# -- adaptive driver --------------------------------------------------------

def balance(mesh: Mesh, ratio: float = 2.0, max_passes: int = 60) -> Mesh:
    """Bisect elements until neighbouring sizes differ by at most ``ratio``."""
    nodes = mesh.nodes
    for _ in range(max_passes):
        h = np.diff(nodes)
        big_left = h[:-1] > ratio * h[1:]
        big_right = h[1:] > ratio * h[:-1]
        mark = np.zeros(h.size, dtype=bool)
        mark[:-1] |= big_left
        mark[1:] |= big_right
        if not mark.any():
            break
        mids = 0.5 * (nodes[:-1] + nodes[1:])[mark]
        nodes = np.sort(np.concatenate([nodes, mids]))
    return Mesh(nodes)


@dataclass(frozen=True)
class AdaptivePolicy:
    threshold: float = 1.0
    min_size: float | None = None
    max_levels: int = 14
    node_cap: int = 200_000
    passes: int = 2


def solve_adaptive(spec: FunctionalSpec, inits: Sequence[InitCandidate],
                   opts: SolverOptions | None = None,
                   policy: AdaptivePolicy | None = None) -> SolveResult:
    """Multi-start solve, then refine around transitions and re-solve each start.

    Refinement bisects elements with max|u'| above the threshold down to
    ``min_size`` and balances neighbouring sizes; the winner is chosen from
    the final pass.
    """
    opts = opts or SolverOptions()
    policy = policy or AdaptivePolicy()
    rp = RefinePolicy(policy.threshold, policy.max_levels, policy.node_cap, policy.min_size or 0.0)
    results = _run_all(spec, inits, opts)
    for _ in range(policy.passes):
        starts = []
        for r in results:
            mesh = balance(refine(r.u.mesh, r.u, rp))
            if len(mesh) > policy.node_cap:
                raise RefinementError(f"balanced mesh exceeds node cap {policy.node_cap}")
            starts.append(InitCandidate(r.init_label, r.u.refined(mesh)))
        results = _run_all(spec, starts, opts)
    return _merge(results)


# -- jump-position search ---------------------------------------------------

def jump_locations(u: HermiteFunction, threshold: float = 1.0, min_height: float = 0.5) -> list[float]:
    from .asymptotics import detect_jumps
    return [loc for loc, _, _ in detect_jumps(u, threshold, min_height)]


def optimize_jump_positions(spec: FunctionalSpec, start: SolveResult, predicted: StaircaseParams,
                            opts: SolverOptions | None = None, max_evals: int = 60,
                            xatol: float | None = None) -> SolveResult:
    """Derivative-free search over the jump positions of ``start``.

    Descent leaves jump positions essentially where they were seeded, so the
    converged energy is treated as a function of the seeded positions and
    minimized by Nelder-Mead.  Every evaluation is a full descent; the
    best one is returned with the evaluations appended to the table.
    """
    from scipy.optimize import minimize as sp_minimize
    opts = opts or SolverOptions()
    jumps = np.array(jump_locations(start.u, 1.0, 0.25 * abs(predicted.V)))
    if jumps.size == 0:
        return start
    half = transition_half_width(spec, predicted)
    a, b = spec.domain
    evals: list[SolveResult] = []

    def run(pos):
        pos = np.sort(np.asarray(pos, dtype=float))
        if pos[0] <= a + 2 * half or pos[-1] >= b - 2 * half or np.any(np.diff(pos) <= 3 * half):
            return math.inf
        u0 = _staircase_function(spec, None, pos, half)
        u, E, it, conv, gn = _descend(spec, u0, opts)
        label = "position:" + ",".join(f"{p:.6f}" for p in pos)
        evals.append(SolveResult(u, E, it, conv, label, gn))
        return E.total if conv else math.inf

    step = 0.1 * predicted.H
    simplex = np.vstack([jumps] + [jumps + step * np.eye(jumps.size)[i] for i in range(jumps.size)])
    sp_minimize(run, jumps, method="Nelder-Mead",
                options={"initial_simplex": simplex, "maxfev": max_evals,
                         "xatol": xatol or 1e-3 * predicted.H, "fatol": 1e-9})
    pool = [start] + [r for r in evals if r.converged]
    best = _select(pool)
    table = tuple(sorted(start.candidates + tuple((r.init_label, r.energy.total, r.converged, r.iterations)
                                                  for r in evals)))
    return SolveResult(best.u, best.energy, best.iterations, best.converged, best.init_label,
                       best.grad_norm, table)


def solve_staircase(spec: FunctionalSpec, predicted: StaircaseParams,
                    opts: SolverOptions | None = None, policy: AdaptivePolicy | None = None,
                    cost_factors: Sequence[float] = (1.0, 1.25, 1.5, 2.0),
                    position_search: bool = True, max_evals: int = 60) -> SolveResult:
    """Full pipeline: multi-start, jump-position search, adaptive refinement."""
    opts = opts or SolverOptions()
    half = transition_half_width(spec, predicted)
    if policy is None:
        policy = AdaptivePolicy(min_size=(half / 64) if not math.isnan(half) else 0.0)
    inits = init_candidates(spec, predicted, cost_factors=cost_factors)
    first = minimize(spec, inits, opts)
    best = first
    if position_search and not math.isnan(half):
        best = optimize_jump_positions(spec, first, predicted, opts, max_evals=max_evals)
    final = solve_adaptive(spec, [InitCandidate(best.init_label, best.u)], opts, policy)
    table = tuple(sorted(best.candidates + tuple(("refined:" + l, e, c, i) for l, e, c, i in final.candidates)))
    return SolveResult(final.u, final.energy, final.iterations, final.converged,
                       final.init_label, final.grad_norm, table)
