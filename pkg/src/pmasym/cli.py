"""Config-driven experiment harness.

Subcommands: ``solve``, ``sweep``, ``blowup``, ``lemma <name>``, ``report``.
Exit codes: 0 success, 2 validation failure, 3 numeric failure (solver
breakdown or a lemma check that evaluates false).

Config files are flat ``key = value`` text; see :data:`CONFIG_KEYS`.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import oracles
from .asymptotics import (blowup, fit_cubic, fit_staircase, flatness_metrics, jump_decomposition,
                          offset_metric, step_geometry)
from .fem import ContractError, HermiteFunction, Mesh, NumericError, RefinementError, assemble, integrate
from .functionals import ForcingSpec, FunctionalSpec, Kind, from_blowup, rescale_to_blowup, to_blowup
from .profiles import (ALPHA0, DomainError, cubic_connection, eval_cubic_connection, eval_staircase,
                       lambda_from_V, make_scale, staircase_params)
from .solve import AdaptivePolicy, DirichletBC, SolverOptions, minimize_clamped_quadratic, solve_staircase

SCHEMA_VERSION = 1

#: Recognized config keys with their defaults (as text).
CONFIG_KEYS = {
    "eps_list": "0.2, 0.1, 0.05",
    "beta": "1.0",
    "forcing": "0, 1",
    "x0": "0.5",
    "center_policy": "Fixed(0.5)",
    "mesh_resolution": "16",
    "refine_threshold": "1.0",
    "node_cap": "200000",
    "max_iter": "100000",
    "grad_tol": "1e-8",
    "line_search_shrink": "0.5",
    "armijo": "1e-4",
    "cost_factors": "1.0, 1.25, 1.5, 2.0",
    "position_search": "true",
    "max_position_evals": "60",
    "out": "out",
    "seed": "0",
    "threads": "1",
}


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class CenterPolicy:
    kind: str
    x: float | None = None
    n: int | None = None

    @classmethod
    def parse(cls, text: str) -> "CenterPolicy":
        t = text.strip()
        m = re.fullmatch(r"Fixed\(\s*([-+0-9.eE]+)\s*\)", t)
        if m:
            return cls("Fixed", x=float(m.group(1)))
        m = re.fullmatch(r"Scan\(\s*(\d+)\s*\)", t)
        if m:
            return cls("Scan", n=int(m.group(1)))
        if t in ("MidStep", "AtJump"):
            return cls(t)
        raise ValidationError(f"unknown center policy {text!r}")

    def __str__(self):
        if self.kind == "Fixed":
            return f"Fixed({self.x!r})"
        if self.kind == "Scan":
            return f"Scan({self.n})"
        return self.kind


@dataclass(frozen=True)
class ExperimentConfig:
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05)
    beta: float = 1.0
    forcing: ForcingSpec = field(default_factory=lambda: ForcingSpec.polynomial([0.0, 1.0]))
    x0: float = 0.5
    center_policy: CenterPolicy = field(default_factory=lambda: CenterPolicy("Fixed", x=0.5))
    mesh_resolution: int = 16
    refine_threshold: float = 1.0
    node_cap: int = 200_000
    max_iter: int = 100_000
    grad_tol: float = 1e-8
    line_search_shrink: float = 0.5
    armijo: float = 1e-4
    cost_factors: tuple[float, ...] = (1.0, 1.25, 1.5, 2.0)
    position_search: bool = True
    max_position_evals: int = 60
    out: str = "out"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        eps = self.eps_list
        if not eps:
            raise ValidationError("eps_list is empty")
        if any(not 0 < e < 1 for e in eps):
            raise ValidationError("every eps must lie in (0,1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValidationError("eps_list must be strictly decreasing")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if not 0 < self.x0 < 1:
            raise ValidationError("x0 must be interior to (0,1)")
        if self.center_policy.kind == "Fixed" and not 0 < self.center_policy.x < 1:
            raise ValidationError("Fixed center must be interior to (0,1)")
        if self.center_policy.kind == "Scan" and not self.center_policy.n >= 1:
            raise ValidationError("Scan needs n >= 1")
        if not (0 < self.line_search_shrink < 1 and 0 < self.armijo < 1):
            raise ValidationError("line search shrink and armijo constant must lie in (0,1)")
        if self.mesh_resolution < 2 or self.node_cap < 10 or self.max_iter < 1 or not self.grad_tol > 0:
            raise ValidationError("invalid mesh or solver settings")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if abs(float(self.forcing.derivative(self.x0))) == 0:
            raise ValidationError("the forcing must have nonzero slope at x0")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(max_iter=self.max_iter, grad_tol=self.grad_tol,
                             shrink=self.line_search_shrink, armijo=self.armijo, threads=self.threads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["forcing"] = self.forcing.to_dict()
        d["center_policy"] = str(self.center_policy)
        d["eps_list"] = list(self.eps_list)
        d["cost_factors"] = list(self.cost_factors)
        del d["out"], d["threads"]
        return d


def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ValidationError(f"expected a list of numbers, got {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text; unknown keys are a validation error."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(str(exc)) from exc
    raw = dict(cp["config"])
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    vals = {**CONFIG_KEYS, **raw}
    try:
        forcing_text = vals["forcing"].strip()
        if forcing_text.startswith("sampled:"):
            path = forcing_text[len("sampled:"):].strip()
            data = np.loadtxt(path, ndmin=2)
            forcing = ForcingSpec.sampled(data[:, 0], data[:, 1])
        else:
            forcing = ForcingSpec.polynomial(_floats(forcing_text))
        return ExperimentConfig(
            eps_list=_floats(vals["eps_list"]), beta=float(vals["beta"]), forcing=forcing,
            x0=float(vals["x0"]), center_policy=CenterPolicy.parse(vals["center_policy"]),
            mesh_resolution=int(vals["mesh_resolution"]), refine_threshold=float(vals["refine_threshold"]),
            node_cap=int(vals["node_cap"]), max_iter=int(vals["max_iter"]), grad_tol=float(vals["grad_tol"]),
            line_search_shrink=float(vals["line_search_shrink"]), armijo=float(vals["armijo"]),
            cost_factors=_floats(vals["cost_factors"]), position_search=_bool(vals["position_search"]),
            max_position_evals=int(vals["max_position_evals"]), out=vals["out"].strip(),
            seed=int(vals["seed"]), threads=int(vals["threads"]))
    except (ContractError, DomainError, OSError) as exc:
        raise ValidationError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc


# -- per-eps pipeline -------------------------------------------------------

def _function_dict(u: HermiteFunction) -> dict:
    return {"nodes": u.mesh.nodes.tolist(), "values": u.values.tolist(), "derivs": u.derivs.tolist()}


def _function_from_dict(d: dict) -> HermiteFunction:
    return HermiteFunction(Mesh(np.array(d["nodes"])), np.array(d["values"]), np.array(d["derivs"]))


def _gap(measured: float, target: float) -> float:
    return float(abs(measured - target) / abs(target)) if math.isfinite(measured) else math.inf


def _pick_step(steps, y_center):
    """Step containing ``y_center`` when it is bounded by jumps, else the longest interior step."""
    lo, hi = steps[0][0], steps[-1][1]
    interior = [s for s in steps if s[0] > lo and s[1] < hi]
    for s in interior:
        if s[0] <= y_center <= s[1]:
            return s
    return max(interior or steps, key=lambda s: s[1] - s[0])


def _flattest(v: HermiteFunction, a: float, b: float) -> float:
    ys = np.union1d(np.linspace(a, b, 2001), v.mesh.nodes[(v.mesh.nodes > a) & (v.mesh.nodes < b)])
    return float(ys[np.argmin(np.abs(v.derivative(ys)))])


def build_spec(cfg: ExperimentConfig, eps: float) -> FunctionalSpec:
    """The rescaled functional solved for one eps: RPMF on (0, 1/omega)."""
    pmf = FunctionalSpec(Kind.PMF, (0.0, 1.0), eps=eps, beta=cfg.beta, forcing=cfg.forcing)
    return rescale_to_blowup(pmf)


def solve_one(cfg: ExperimentConfig, eps: float):
    spec = build_spec(cfg, eps)
    slope = float(cfg.forcing.derivative(cfg.x0))
    predicted = staircase_params(cfg.beta, slope)
    half = lambda_from_V(abs(predicted.V)) * eps**2
    policy = AdaptivePolicy(threshold=cfg.refine_threshold, min_size=half / (4 * cfg.mesh_resolution),
                            node_cap=cfg.node_cap)
    res = solve_staircase(spec, predicted, cfg.solver_options(), policy, cfg.cost_factors,
                          cfg.position_search, cfg.max_position_evals)
    return spec, predicted, res


def analyze(cfg: ExperimentConfig, eps: float, spec: FunctionalSpec, predicted, v: HermiteFunction) -> dict:
    """All fits and metrics for one converged solution ``v`` in solve coordinates."""
    sc = make_scale(eps)
    w = sc.omega
    f = cfg.forcing
    u = from_blowup(v, w)
    log_eps = abs(math.log(eps))
    M = 1.0 / log_eps
    H, V = predicted.H, abs(predicted.V)
    geo_solve = step_geometry(v, spec.forcing, 1.0, 0.25 * V)

    # omega-scale window centre
    pol = cfg.center_policy
    if pol.kind == "Fixed":
        centers = [pol.x]
    elif pol.kind == "MidStep":
        a, b = _pick_step(geo_solve.steps, cfg.x0 / w)
        m = 0.25 * (b - a)
        centers = [w * _flattest(v, a + m, b - m)]
    elif pol.kind == "AtJump":
        dec_s = jump_decomposition(v, M)
        if dec_s.big_index is None:
            centers = [cfg.x0]
        else:
            ia, ib = dec_s.big_interval
            centers = [w * 0.5 * (ia + ib)]
    else:
        centers = list(np.linspace(0.25, 0.75, pol.n)) if pol.n > 1 else [cfg.x0]

    best = None
    for c in centers:
        c = float(min(max(c, 1e-9), 1 - 1e-9))
        tr = blowup(u, c, w, (c / w * (1 - 1e-12), (1 - c) / w * (1 - 1e-12)))
        fit = fit_staircase(tr, predicted)
        if best is None or fit.sup_error < best[2].sup_error:
            best = (c, tr, fit)
    center, trace, sfit = best
    uc = float(u(center))

    def g_trace(y):
        return (f(center + w * np.asarray(y)) - uc) / w

    geo = step_geometry(trace.samples, g_trace, 1.0, 0.25 * V)
    rec = {
        "center": center,
        "staircase_fit": sfit.as_dict(),
        "step_geometry": geo.as_dict(),
        "H_pred": H, "V_pred": V,
        "H_gap": _gap(geo.half_length, H),
        "V_gap": _gap(geo.half_height, V),
        "offset": offset_metric(u, f, center, w),
    }

    # eps^2-scale window at the big jump
    dec = jump_decomposition(trace.samples, M)
    rec["jump_decomposition"] = dec.as_dict()
    rec["cubic_fit"] = None
    rec["per_jump"] = None
    Lp = lambda_from_V(V)
    rec["Lambda_pred"] = Lp
    if dec.big_index is not None:
        ia, ib = dec.big_interval
        ym = 0.5 * (ia + ib)
        xc = center + w * ym
        s2 = w * eps**2
        reach = min(2.0 * Lp, (xc - 0.0) / s2 * (1 - 1e-12), (1.0 - xc) / s2 * (1 - 1e-12))
        tr2 = blowup(u, xc, s2, reach, vertical_scale=w)
        cf = fit_cubic(tr2, cubic_connection(V))
        rec["cubic_center"] = xc
        rec["cubic_fit"] = cf.as_dict()
        rec["cubic_half_width"] = reach
        rec["Lambda_gap"] = _gap(cf.params.Lambda, Lp)
        rec["cubic_sup_ratio"] = cf.sup_error / (2 * V)
        # one-jump window: from the middle of the step before to the middle of the step after
        steps = geo.steps
        k = int(np.argmin([abs(b - ym) for _, b in steps[:-1]])) if len(steps) > 1 else None
        if k is not None:
            lo, hi = 0.5 * sum(steps[k]), 0.5 * sum(steps[k + 1])
            inside = [(loc, h) for loc, h in zip(geo.jumps, geo.heights) if lo < loc < hi]
            e6 = eps**6
            energy = integrate(trace.samples, lambda x, uu, p, q: e6 * q * q + np.log1p(p * p) / w**2,
                               [(lo, hi)])
            if len(inside) == 1:
                J = abs(inside[0][1])
                ratio = energy / math.sqrt(2 * V)
                ratio_j = energy / math.sqrt(J)
                rec["per_jump"] = {"window": [lo, hi], "energy": energy, "jump": J, "alpha0": ALPHA0,
                                   "ratio": ratio, "gap": abs(ratio - ALPHA0) / ALPHA0,
                                   "ratio_measured_jump": ratio_j,
                                   "gap_measured_jump": abs(ratio_j - ALPHA0) / ALPHA0}

    # flatness on the middle half of a step
    a, b = _pick_step(geo.steps, 0.0)
    m = 0.25 * (b - a)
    cy = _flattest(trace.samples, a + m, b - m)
    xf = center + w * cy
    trf = blowup(u, xf, w, ((cy - (a + m)) * (1 - 1e-12), (b - m - cy) * (1 - 1e-12)))
    mv, mdv, rv, rdv = flatness_metrics(trf, trf.window, w)
    rec["flatness"] = {"step": [a, b], "center": xf, "max_abs_v": mv, "max_abs_dv": mdv,
                       "ratio_v": rv, "ratio_dv": rdv}
    return rec


def run_eps(cfg: ExperimentConfig, eps: float) -> dict:
    sc = make_scale(eps)
    rec = {"eps": eps, "omega": sc.omega}
    try:
        spec, predicted, res = solve_one(cfg, eps)
    except (NumericError, RefinementError) as exc:
        rec.update({"converged": False, "error": str(exc)})
        return rec
    rec.update({
        "converged": bool(res.converged),
        "iterations": res.iterations,
        "init_label": res.init_label,
        "grad_norm": res.grad_norm,
        "energy": res.energy.as_dict(),
        "original_energy": sc.omega**3 * res.energy.total,
        "n_nodes": len(res.u.mesh),
        "candidates": res.table(),
        "solve_domain": list(spec.domain),
        "solution": _function_dict(res.u),
    })
    rec.update(analyze(cfg, eps, spec, predicted, res.u))
    return rec


def run(cfg: ExperimentConfig) -> dict:
    """One record per eps, in eps_list order; trends when there are at least three."""
    report = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "records": []}
    for eps in cfg.eps_list:
        report["records"].append(run_eps(cfg, eps))
    report["trends"] = sweep_trends(report) if len(report["records"]) >= 3 else None
    return report


# -- trends -----------------------------------------------------------------

TREND_METRICS = {
    "cubic_sup_error": ("cubic_fit", "sup_error"),
    "cubic_deriv_sup_error": ("cubic_fit", "deriv_sup_error"),
    "cubic_second_deriv_L2_error": ("cubic_fit", "second_deriv_L2_error"),
    "flatness_ratio_v": ("flatness", "ratio_v"),
    "flatness_ratio_dv": ("flatness", "ratio_dv"),
    "per_jump_gap": ("per_jump", "gap"),
    "H_gap": ("H_gap",),
    "V_gap": ("V_gap",),
}


def _metric(rec: dict, path) -> float:
    obj = rec
    for p in path:
        if not isinstance(obj, dict) or obj.get(p) is None:
            return math.nan
        obj = obj[p]
    return float(obj)


def nonincreasing(seq: Sequence[float], slack: float = 0.10) -> bool:
    """Each value at most (1 + slack) times its predecessor; NaN fails."""
    if any(not math.isfinite(x) for x in seq):
        return False
    return all(b <= (1 + slack) * a + 1e-300 for a, b in zip(seq, seq[1:]))


def sweep_trends(report: dict, slack: float = 0.10) -> dict:
    recs = report["records"]
    if len(recs) < 3:
        raise DomainError("trend summaries need at least three eps values")
    out = {}
    for name, path in TREND_METRICS.items():
        seq = [_metric(r, path) for r in recs]
        finite = [x for x in seq if math.isfinite(x)]
        bounded = len(finite) == len(seq)
        spread = (max(finite) / min(finite)) if finite and min(finite) > 0 else (1.0 if finite and max(finite) == 0 else math.inf)
        out[name] = {"sequence": seq, "nonincreasing": nonincreasing(seq, slack), "bounded": bounded,
                     "spread": spread}
    return out


# -- output -----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _unjson(obj):
    if isinstance(obj, str) and obj in ("nan", "inf", "-inf"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    return obj


def report_to_json(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=1) + "\n"


def report_from_json(text: str) -> dict:
    return _unjson(json.loads(text))


RECORD_COLUMNS = ["eps", "omega", "converged", "iterations", "init_label", "n_nodes", "energy_total",
                  "energy_second_order", "energy_perona_malik", "energy_fidelity", "original_energy",
                  "center", "staircase_kind", "staircase_tau0", "staircase_sup_error", "kind_confidence",
                  "n_jumps", "H_measured", "V_measured", "H_gap", "V_gap", "Lambda_fit", "Lambda_pred",
                  "Lambda_gap", "cubic_sup_error", "cubic_deriv_sup_error", "cubic_second_deriv_L2_error",
                  "per_jump_energy", "per_jump_ratio", "per_jump_gap", "flatness_ratio_v",
                  "flatness_ratio_dv", "offset"]


def _flat_row(r: dict) -> dict:
    e = r.get("energy") or {}
    sf = r.get("staircase_fit") or {}
    geo = r.get("step_geometry") or {}
    cf = r.get("cubic_fit") or {}
    pj = r.get("per_jump") or {}
    fl = r.get("flatness") or {}
    return {
        "eps": r["eps"], "omega": r["omega"], "converged": r.get("converged"),
        "iterations": r.get("iterations"), "init_label": r.get("init_label"), "n_nodes": r.get("n_nodes"),
        "energy_total": e.get("total"), "energy_second_order": e.get("second_order"),
        "energy_perona_malik": e.get("perona_malik"), "energy_fidelity": e.get("fidelity"),
        "original_energy": r.get("original_energy"), "center": r.get("center"),
        "staircase_kind": sf.get("kind"), "staircase_tau0": sf.get("tau0"),
        "staircase_sup_error": sf.get("sup_error"), "kind_confidence": sf.get("kind_confidence"),
        "n_jumps": len(geo.get("jumps", [])), "H_measured": geo.get("half_length"),
        "V_measured": geo.get("half_height"), "H_gap": r.get("H_gap"), "V_gap": r.get("V_gap"),
        "Lambda_fit": cf.get("Lambda"), "Lambda_pred": r.get("Lambda_pred"), "Lambda_gap": r.get("Lambda_gap"),
        "cubic_sup_error": cf.get("sup_error"), "cubic_deriv_sup_error": cf.get("deriv_sup_error"),
        "cubic_second_deriv_L2_error": cf.get("second_deriv_L2_error"),
        "per_jump_energy": pj.get("energy"), "per_jump_ratio": pj.get("ratio"), "per_jump_gap": pj.get("gap"),
        "flatness_ratio_v": fl.get("ratio_v"), "flatness_ratio_dv": fl.get("ratio_dv"),
        "offset": r.get("offset"),
    }


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([_csv_value(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _csv_value(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


def plot_tables(cfg_forcing: ForcingSpec, rec: dict, n: int = 2001):
    """The three panels as (name, header, rows): solution, omega-scale, eps^2-scale.

    A panel without data (no solution, or no jump to fit) has no rows.
    """
    empty = [("solution", ["x", "u", "f"], []), ("staircase", ["y", "v", "fit"], []),
             ("cubic", ["z", "w", "fit"], [])]
    if "solution" not in rec:
        return empty
    out = []
    v = _function_from_dict(rec["solution"])
    w, eps = rec["omega"], rec["eps"]
    u = from_blowup(v, w)
    x = np.linspace(0.0, 1.0, n)
    out.append(("solution", ["x", "u", "f"], zip(x.tolist(), u(x).tolist(), cfg_forcing(x).tolist())))
    sf = rec.get("staircase_fit")
    if sf is not None:
        from .profiles import StaircaseKind, StaircaseParams
        c = rec["center"]
        y = np.linspace(-c / w, (1 - c) / w, n) * (1 - 1e-12)
        tr = (u(c + w * y) - u(c)) / w
        p = StaircaseParams(sf["H"], sf["V"], sf["tau0"], StaircaseKind(sf["kind"]))
        out.append(("staircase", ["y", "v", "fit"], zip(y.tolist(), tr.tolist(), eval_staircase(p, y).tolist())))
    cf = rec.get("cubic_fit")
    if cf is not None:
        from .profiles import CubicConnectionParams
        xc, r = rec["cubic_center"], rec["cubic_half_width"]
        s2 = w * eps**2
        z = np.linspace(-r, r, n)
        wz = (u(xc + s2 * z) - u(xc)) / w
        p = CubicConnectionParams(cf["Lambda"], cf["V"], cf["tau0"], cf["x0"])
        out.append(("cubic", ["z", "w", "fit"], zip(z.tolist(), wz.tolist(),
                                                   (cf["sign"] * eval_cubic_connection(p, z)).tolist())))
    have = {name for name, _, _ in out}
    return out + [t for t in empty if t[0] not in have]


def emit(report: dict, out_dir: str, formats: Sequence[str] = ("json", "csv", "plots")) -> list[str]:
    """Write report.json, records.csv, candidates.csv and per-record plot CSVs."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc}") from exc
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        try:
            with open(path, "w") as fh:
                fh.write(report_to_json(report))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    recs = report.get("records", [])
    if "csv" in formats:
        path = os.path.join(out_dir, "records.csv")
        _write_csv(path, RECORD_COLUMNS, ([_flat_row(r)[c] for c in RECORD_COLUMNS] for r in recs))
        written.append(path)
        path = os.path.join(out_dir, "candidates.csv")
        rows = [(r["eps"], c["label"], c["energy"], c["converged"], c["iterations"])
                for r in recs for c in r.get("candidates", [])]
        _write_csv(path, ["eps", "label", "energy", "converged", "iterations"], rows)
        written.append(path)
    if "plots" in formats:
        forcing = ForcingSpec.from_dict(report["config"]["forcing"]) if "config" in report else None
        for r in recs:
            for name, header, rows in plot_tables(forcing, r):
                path = os.path.join(out_dir, f"plot_{name}_eps{r['eps']!r}.csv")
                _write_csv(path, header, rows)
                written.append(path)
    return written


def verify_report(report: dict, rtol: float = 1e-12) -> list[str]:
    """Re-assemble every stored solution; list records whose energy does not match."""
    cfg = config_from_dict(report["config"])
    bad = []
    for r in report["records"]:
        if "solution" not in r or "energy" not in r:
            continue
        spec = build_spec(cfg, r["eps"])
        E = assemble(spec, _function_from_dict(r["solution"]), gradient=False).total
        if abs(E - r["energy"]["total"]) > rtol * max(1.0, abs(E)):
            bad.append(f"eps={r['eps']}: stored {r['energy']['total']!r}, re-assembled {E!r}")
    return bad


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    d["forcing"] = ForcingSpec.from_dict(d["forcing"])
    d["center_policy"] = CenterPolicy.parse(d["center_policy"])
    d["eps_list"] = tuple(d["eps_list"])
    d["cost_factors"] = tuple(d["cost_factors"])
    return ExperimentConfig(**d)


# -- lemma suites -------------------------------------------------------------

def lemma_suite(name: str, seed: int = 0, n: int | None = None) -> dict:
    """Randomized check of one oracle; ``violations`` counts failed cases."""
    rng = np.random.default_rng(seed)
    if name == "cubic":
        n = n or 100
        worst = 0.0
        for _ in range(n):
            A0, A1, B0, B1 = rng.uniform(-2, 2, 4)
            closed = oracles.optimal_clamped_cubic(0.0, 1.0, A0, A1, B0, B1).min_value
            disc = minimize_clamped_quadratic(0.0, 1.0, DirichletBC(A0, B0, A1, B1)).energy.total
            worst = max(worst, float(abs(closed - disc) / max(abs(closed), 1e-300)))
        return {"name": name, "cases": n, "max_rel_error": worst, "violations": int(worst > 1e-6)}
    if name == "subadd":
        n = n or 10_000
        bad = 0
        for _ in range(n):
            k = int(rng.integers(1, 21))
            if not oracles.check_sqrt_subadditivity(rng.uniform(0, 10, k)).holds:
                bad += 1
        return {"name": name, "cases": n, "violations": bad}
    if name == "loglip":
        n = n or 10_000
        bad = 0
        for _ in range(n):
            b = rng.uniform(-0.5, 0.5)
            d = rng.uniform(-10, 10)
            x = rng.uniform(-1e6, 1e6) if rng.random() < 0.5 else rng.uniform(-10, 10)
            if not oracles.check_log_lipschitz(b, d, x).holds:
                bad += 1
        return {"name": name, "cases": n, "violations": bad}
    if name == "lower-bound":
        n = n or 100
        bad = 0
        for _ in range(n):
            if not random_lower_bound_case(rng).holds:
                bad += 1
        return {"name": name, "cases": n, "violations": bad}
    if name == "cLJ":
        rows = []
        worst = 0.0
        for L in (0.5, 1.0, 2.0, 4.0):
            for J in (0.5, 1.0, 2.0, 4.0):
                c1, c2 = oracles.c_constant(L, J), oracles.c_constant_grid(L, J)
                worst = max(worst, abs(c1 - c2))
                rows.append({"L": L, "J": J, "golden": c1, "grid": c2})
        return {"name": name, "cases": len(rows), "max_abs_gap": worst, "rows": rows,
                "violations": int(worst > 1e-4)}
    if name == "transition":
        rows = []
        worst = 0.0
        for J in (0.1, 1.0, 2.0, 10.0):
            t = oracles.optimal_transition_energy(J)
            gap = abs(t.energy / math.sqrt(J) - ALPHA0)
            worst = max(worst, gap)
            rows.append({"J": J, "ell_star": t.ell_star, "energy": t.energy})
        return {"name": name, "cases": len(rows), "max_abs_gap": worst, "rows": rows,
                "violations": int(worst > 1e-9)}
    raise ValidationError(f"unknown lemma {name!r}")


LEMMAS = ("cubic", "subadd", "loglip", "lower-bound", "cLJ", "transition")


def random_lower_bound_case(rng, M: float | None = None):
    """A random C^1 cubic spline with small clamped end slopes and a steep middle."""
    k = int(rng.integers(4, 12))
    nodes = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, k - 1)]))
    nodes = np.unique(nodes)
    vals = np.cumsum(rng.uniform(-1, 3, nodes.size))
    ders = rng.uniform(-8, 8, nodes.size)
    M = M if M is not None else float(rng.uniform(0.5, 3.0))
    ders[0] = rng.uniform(-M, M)
    ders[-1] = rng.uniform(-M, M)
    w = HermiteFunction(Mesh(nodes), vals, ders)
    alpha, beta, gamma = rng.uniform(0.1, 3.0, 3)
    return oracles.transition_lower_bound(alpha, beta, gamma, M, w)


# -- command line -----------------------------------------------------------

def _load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = parse_config(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    else:
        cfg = ExperimentConfig()
    over = {}
    if args.eps:
        over["eps_list"] = _floats(args.eps)
    if args.out:
        over["out"] = args.out
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if over:
        try:
            cfg = replace(cfg, **over)
        except (ContractError, DomainError) as exc:
            raise ValidationError(str(exc)) from exc
    return cfg


def _summary_line(rec: dict) -> str:
    row = _flat_row(rec)
    keys = ["eps", "converged", "energy_total", "n_jumps", "H_gap", "V_gap", "cubic_sup_error",
            "Lambda_gap", "per_jump_gap", "flatness_ratio_v", "flatness_ratio_dv"]
    return "  ".join(f"{k}={row[k]!r}" if isinstance(row[k], float) else f"{k}={row[k]}" for k in keys)


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    eps = cfg.eps_list[0]
    spec, predicted, res = solve_one(cfg, eps)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"solution_eps{eps!r}.txt")
    with open(path, "w") as fh:
        fh.write(res.u.to_text())
    info = {"eps": eps, "converged": res.converged, "energy": res.energy.as_dict(),
            "init_label": res.init_label, "iterations": res.iterations, "candidates": res.table(),
            "solution_file": path, "coordinates": "y = x / omega, v = u / omega"}
    with open(os.path.join(cfg.out, f"solve_eps{eps!r}.json"), "w") as fh:
        fh.write(json.dumps(_jsonable(info), sort_keys=True, indent=1) + "\n")
    print(f"eps={eps!r} energy={res.energy.total!r} converged={res.converged} init={res.init_label}")
    return 0 if res.converged else 3


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    report = run(cfg)
    emit(report, cfg.out)
    for r in report["records"]:
        print(_summary_line(r))
    return 0 if all(r.get("converged") for r in report["records"]) else 3


def cmd_blowup(args) -> int:
    cfg = _load_config(args)
    eps = cfg.eps_list[0]
    if args.solution:
        with open(args.solution) as fh:
            v = HermiteFunction.from_text(fh.read())
        spec = build_spec(cfg, eps)
        predicted = staircase_params(cfg.beta, float(cfg.forcing.derivative(cfg.x0)))
        rec = {"eps": eps, "omega": make_scale(eps).omega, "solution": _function_dict(v),
               "energy": assemble(spec, v, gradient=False).as_dict()}
        rec.update(analyze(cfg, eps, spec, predicted, v))
    else:
        rec = run_eps(cfg, eps)
    report = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "records": [rec], "trends": None}
    emit(report, cfg.out)
    print(_summary_line(rec))
    return 0


def cmd_lemma(args) -> int:
    seed = args.seed if args.seed is not None else 0
    names = LEMMAS if args.name == "all" else (args.name,)
    results = [lemma_suite(n, seed) for n in names]
    print(json.dumps(_jsonable(results), sort_keys=True, indent=1))
    return 0 if all(r["violations"] == 0 for r in results) else 3


def cmd_report(args) -> int:
    out = args.out or "out"
    path = args.report or os.path.join(out, "report.json")
    with open(path) as fh:
        report = report_from_json(fh.read())
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {report.get('schema_version')!r}")
    bad = verify_report(report)
    emit(report, out, formats=("csv", "plots"))
    for r in report["records"]:
        print(_summary_line(r))
    if report.get("trends"):
        for name, t in report["trends"].items():
            print(f"trend {name}: nonincreasing={t['nonincreasing']} spread={t['spread']!r}")
    for b in bad:
        print("energy mismatch:", b, file=sys.stderr)
    return 3 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmasym", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--eps", help="comma separated eps list (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads for independent starts")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve for the first eps").set_defaults(func=cmd_solve)
    sub.add_parser("sweep", parents=[common], help="full eps sweep and report").set_defaults(func=cmd_sweep)
    b = sub.add_parser("blowup", parents=[common], help="blow-up analysis for the first eps")
    b.add_argument("--solution", help="solution table (solve coordinates) to analyze instead of solving")
    b.set_defaults(func=cmd_blowup)
    lm = sub.add_parser("lemma", parents=[common], help="randomized oracle checks")
    lm.add_argument("name", choices=LEMMAS + ("all",))
    lm.set_defaults(func=cmd_lemma)
    r = sub.add_parser("report", parents=[common], help="verify and re-emit a saved report")
    r.add_argument("--report", help="path to report.json (default: <out>/report.json)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ContractError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, RefinementError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
