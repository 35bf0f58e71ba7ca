"""Manufactured solutions and the studies built on them.

Exact fields use the first order split sigma = -delta u, xi = -du and
f = (d delta + delta d) u. Components follow the library conventions:
1-forms (w1, w2) for w1 dx + w2 dy, 2-forms w for w dx^dy, and
delta(w1 dx + w2 dy) = -div w, delta(w dx^dy) = (w_y, -w_x).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy

from .fe_spaces import expected_order, make_xg_spaces
from .hybridization import HybridXG
from .mesh_complex import build_structured_mesh
from .saddle_solver import infsup_estimate, solve, solve_matrix
from .xg_assembly import (ASSEMBLERS, FormOperators, assemble_afw, assemble_afw_dual,
                          make_afw_spaces, normalize_regime, penalty_schedule, system_gram)

SCHEMA_VERSION = "1"
METHODS = ("xg7", "xg4a", "xg4b", "xg3", "afw", "afw_dual", "hdg")
CSV_COLUMNS = ("level", "h_max", "dofs", "err_sigma_triple", "err_xi_l2", "err_u_triple",
               "rate_u", "gamma_h", "wall_s")

_x, _y = sympy.symbols("x y", real=True)


# ------------------------------------------------------- symbolic calculus

def sym_d(k, w):
    if k == 0:
        return [sympy.diff(w[0], _x), sympy.diff(w[0], _y)]
    if k == 1:
        return [sympy.diff(w[1], _x) - sympy.diff(w[0], _y)]
    return []


def sym_delta(k, w):
    if k == 0:
        return []
    if k == 1:
        return [-(sympy.diff(w[0], _x) + sympy.diff(w[1], _y))]
    return [sympy.diff(w[0], _y), -sympy.diff(w[0], _x)]


def _neg(w):
    return [-c for c in w]


def _add(v, w):
    if not v:
        return list(w)
    if not w:
        return list(v)
    return [sympy.simplify(a + b) for a, b in zip(v, w)]


class _Field:
    """Numeric evaluator of a symbolic form, (npts, 2) -> (npts, ncomp)."""

    def __init__(self, comps):
        self.exprs = [sympy.simplify(c) for c in comps]
        self._fns = [sympy.lambdify((_x, _y), e, "numpy") for e in self.exprs]

    @property
    def present(self):
        return len(self.exprs) > 0

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        cols = [np.broadcast_to(np.asarray(fn(X[:, 0], X[:, 1]), dtype=float), (len(X),))
                for fn in self._fns]
        return np.column_stack(cols) if cols else np.zeros((len(X), 0))


@dataclass
class ManufacturedCase:
    """Exact u with its derived fields as evaluators.

    Fields: u, du, delta_u, sigma, d_sigma, xi, delta_xi, f. tr* u and
    tr* du vanish on the boundary of the unit square.
    """

    k: int
    name: str
    u: _Field
    du: _Field
    delta_u: _Field
    sigma: _Field
    d_sigma: _Field
    xi: _Field
    delta_xi: _Field
    f: _Field
    boundary_defect: float = 0.0


def _normal_trace(k, vals, normal):
    """tr* of sampled form values along a boundary with outward normal."""
    if k == 0 or vals.shape[1] == 0:
        return np.zeros(len(vals))
    if k == 1:
        return vals @ normal
    return vals[:, 0]


def boundary_defect(k, u: _Field, du: _Field, samples: int = 64) -> float:
    """max |tr* u| and |tr* du| over samples on the four sides."""
    s = (np.arange(samples) + 0.5) / samples
    worst = 0.0
    sides = [(np.column_stack([s, 0 * s]), np.array([0.0, -1.0])),
             (np.column_stack([1 + 0 * s, s]), np.array([1.0, 0.0])),
             (np.column_stack([s, 1 + 0 * s]), np.array([0.0, 1.0])),
             (np.column_stack([0 * s, s]), np.array([-1.0, 0.0]))]
    for X, n in sides:
        worst = max(worst, np.abs(_normal_trace(k, u(X), n)).max(initial=0.0))
        if k < 2:
            worst = max(worst, np.abs(_normal_trace(k + 1, du(X), n)).max(initial=0.0))
    return float(worst)


_DEFAULT_U = {
    0: lambda: [sympy.cos(sympy.pi * _x) * sympy.cos(sympy.pi * _y)],
    1: lambda: [sympy.sin(sympy.pi * _x) * sympy.sin(sympy.pi * _y) ** 2,
                sympy.sin(sympy.pi * _x) ** 2 * sympy.sin(sympy.pi * _y)],
    2: lambda: [sympy.sin(sympy.pi * _x) * sympy.sin(sympy.pi * _y)],
}


def make_case(k: int, u_components, name: str = "custom", tol: float = 1e-10) -> ManufacturedCase:
    """Build a case from sympy components in x, y; rejects boundary-incompatible u."""
    u = list(u_components)
    du = sym_d(k, u)
    delta_u = sym_delta(k, u)
    sigma = _neg(delta_u)
    xi = _neg(du)
    d_sigma = sym_d(k - 1, sigma) if k > 0 else []
    delta_xi = sym_delta(k + 1, xi) if k < 2 else []
    f = _add(_neg(d_sigma), _neg(delta_xi))
    fields = dict(u=_Field(u), du=_Field(du), delta_u=_Field(delta_u), sigma=_Field(sigma),
                  d_sigma=_Field(d_sigma), xi=_Field(xi), delta_xi=_Field(delta_xi), f=_Field(f))
    defect = boundary_defect(k, fields["u"], fields["du"])
    if defect > tol:
        raise ValueError(f"candidate {name!r} violates tr* u = 0 or tr* du = 0 on the boundary "
                         f"(max defect {defect:.3e})")
    if k == 0:
        from .quadrature import triangle_rule
        pts, w = triangle_rule(16)
        mean = 0.0
        for tri in (np.array([[0, 0], [1, 0], [1, 1]]), np.array([[0, 0], [1, 1], [0, 1]])):
            J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
            mean += abs(np.linalg.det(J)) * w @ fields["u"](tri[0] + pts @ J.T)[:, 0]
        if abs(mean) > tol:
            raise ValueError(f"k=0 candidate {name!r} does not have mean zero ({mean:.3e})")
    return ManufacturedCase(k, name, boundary_defect=defect, **fields)


@lru_cache(maxsize=None)
def register_case(k: int) -> ManufacturedCase:
    """Default smooth case for form degree k on the unit square."""
    if k not in _DEFAULT_U:
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    return make_case(k, _DEFAULT_U[k](), name=f"default_k{k}")


def zero_source(k):
    ncomp = 2 if k == 1 else 1
    return lambda X: np.zeros((len(X), ncomp))


# ------------------------------------------------------------ configuration

def level_divisions(level: int) -> int:
    """Refinement level l uses 2**(l-1) divisions per side."""
    if level < 1:
        raise ValueError("levels start at 1")
    return 2 ** (level - 1)


@dataclass
class StudyConfig:
    method: str = "xg7"
    k: int = 1
    degree: int = 0
    family: str = "trimmed"
    regime: str = "I"
    rho: list = field(default_factory=lambda: [1.0])
    levels: list = field(default_factory=lambda: [2, 3, 4, 5])
    case: int | None = None
    infsup: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.regime = normalize_regime(self.regime)
        self.rho = [float(r) for r in np.atleast_1d(self.rho)]
        self.levels = [int(v) for v in np.atleast_1d(self.levels)]
        if any(r <= 0 for r in self.rho):
            raise ValueError("rho values must be positive")
        if self.method == "hdg" and not self.regime.startswith("hybridizable"):
            raise ValueError("method hdg needs regime h1 or h2")

    @property
    def dual(self) -> bool:
        """Starred spaces are used with the starred (regime II) penalties."""
        return self.regime in ("II", "hybridizable_II") or self.method == "afw_dual"


@dataclass
class StudyReport:
    kind: str
    config: dict
    rows: list
    summary: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_json(self) -> str:
        return _dumps17(asdict(self))

    def to_csv(self, columns=None) -> str:
        columns = list(columns or (CSV_COLUMNS if self.kind == "convergence" else self._columns()))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in self.rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
        return buf.getvalue()

    def _columns(self):
        cols = []
        for row in self.rows:
            for c in row:
                if c not in cols:
                    cols.append(c)
        return cols

    def column(self, name):
        return np.array([row.get(name, np.nan) for row in self.rows], dtype=float)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _dumps17(obj) -> str:
    """JSON with every float written with 17 significant digits; non-finite
    values become null."""
    floats = []

    def mark(o):
        if isinstance(o, dict):
            return {str(k): mark(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [mark(v) for v in o]
        if isinstance(o, (bool, np.bool_)):
            return bool(o)
        if isinstance(o, (float, np.floating)):
            v = float(o)
            if not math.isfinite(v):
                return None
            floats.append(format(v, ".17g"))
            return f"@@F{len(floats) - 1}@@"
        if isinstance(o, np.integer):
            return int(o)
        return o

    text = json.dumps(mark(obj), indent=2)
    for i, val in enumerate(floats):
        text = text.replace(f'"@@F{i}@@"', val, 1)
    return text


def rates(errors) -> list:
    """log2(e_l / e_{l+1}) between consecutive levels."""
    e = np.asarray(errors, dtype=float)
    out = [float("nan")]
    for a, b in zip(e[:-1], e[1:]):
        out.append(float(np.log2(a / b)) if a > 0 and b > 0 else float("nan"))
    return out


# ------------------------------------------------------------------- errors

class ErrorEvaluator:
    """Errors of discrete fields against a manufactured case."""

    def __init__(self, ops: FormOperators, case: ManufacturedCase, params):
        self.ops, self.case, self.params = ops, case, params
        q = ops.quad
        self.X = q.cell_points.reshape(-1, 2)
        self.w = q.cell_weights.ravel()

    def l2(self, space, kind, coeffs, exact) -> float:
        """|| exact - (kind of discrete) || over the domain."""
        vals = self.ops.ev(space, kind) @ coeffs
        ex = exact(self.X)
        ncomp = ex.shape[1]
        if ncomp == 0:
            return float(np.sqrt(np.sum(np.repeat(self.w, 1) * vals ** 2))) if vals.size else 0.0
        r = vals - ex.ravel()
        return float(np.sqrt(np.sum(np.repeat(self.w, ncomp) * r * r)))

    def jump(self, space, coeffs, starred) -> float:
        """rho^{-1} ||h^{-1/2} [tr v]||^2 over interior faces (or the starred
        jump over all faces); the exact field contributes no jump."""
        T = self.ops.traces(space)
        j = (T.jump_trs if starred else T.jump_tr) @ coeffs
        h = self.ops.mesh.sizes().h_E
        scale = np.repeat(1.0 / (self.params.rho * h), self.ops.nqf)
        return float(np.sum(self.ops.face_w * scale * j * j))

    def triple(self, space, coeffs, exact, exact_deriv, family) -> float:
        kind = "d" if family == "I" else "delta"
        e2 = self.l2(space, "value", coeffs, exact) ** 2
        e2 += self.l2(space, kind, coeffs, exact_deriv) ** 2
        e2 += self.jump(space, coeffs, starred=(family == "II"))
        return float(np.sqrt(e2))


# ----------------------------------------------------------------- studies

def _solve_method(cfg: StudyConfig, mesh, rho, f):
    """Returns (broken fields dict, dofs, ops, params, system or None)."""
    if cfg.method in ("afw", "afw_dual"):
        afw = make_afw_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=cfg.method == "afw_dual")
        specs = (afw.minus.spec if afw.minus else None, afw.main.spec, afw.plus.spec if afw.plus else None)
        spaces = make_xg_spaces(mesh, cfg.k, specs=specs)
        ops = FormOperators(spaces)
        asm = assemble_afw if cfg.method == "afw" else assemble_afw_dual
        system = asm(mesh, afw, f, ops=ops)
        rep = solve(system)
        _require_solve(rep, mesh)
        fields = system.broken(rep.x)
        if cfg.method == "afw" and spaces.plus is None and cfg.k < 2:
            fields["xi"] = None
        params = penalty_schedule(cfg.regime, rho, mesh.sizes())
        return fields, system.total_dim, ops, params, system
    spaces = make_xg_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=cfg.dual)
    ops = FormOperators(spaces)
    params = penalty_schedule(cfg.regime, rho, mesh.sizes())
    if cfg.method == "hdg":
        hyb = HybridXG(spaces, params, f, ops=ops)
        cond = hyb.condense()
        lam, res, _ = solve_matrix(cond.matrix, cond.rhs)
        fields = hyb.reconstruct(lam)
        return fields, cond.dim, ops, params, None
    system = ASSEMBLERS[cfg.method](mesh, spaces, params, f, ops=ops)
    rep = solve(system)
    _require_solve(rep, mesh)
    return rep.solution, system.total_dim, ops, params, system


def _require_solve(rep, mesh):
    if not rep.success:
        raise RuntimeError(f"solve failed on mesh with {mesh.n_cells} cells: {rep.message}")


def evaluate_errors(cfg, case, fields, ops, params) -> dict:
    """Error columns. Primal norms: sigma and u in the triple norm, xi in
    L2. Starred norms: u in the starred triple norm, sigma and xi in L2."""
    ev = ErrorEvaluator(ops, case, params)
    fam = "II" if cfg.dual else "I"
    out = {}
    u = fields["u"]
    if fam == "I":
        out["err_u_triple"] = ev.triple("main", u, case.u, case.du, "I")
    else:
        out["err_u_triple"] = ev.triple("main", u, case.u, case.delta_u, "II")
    out["err_u_l2"] = ev.l2("main", "value", u, case.u)

    sigma = fields.get("sigma")
    if case.k == 0:
        out["err_sigma_triple"] = out["err_sigma_l2"] = float("nan")
    elif sigma is None:
        # conforming dual method: sigma = -delta u
        out["err_sigma_l2"] = ev.l2("main", "delta", -u, case.sigma)
        out["err_sigma_triple"] = float("nan")
    else:
        out["err_sigma_l2"] = ev.l2("minus", "value", sigma, case.sigma)
        out["err_sigma_triple"] = (ev.triple("minus", sigma, case.sigma, case.d_sigma, "I")
                                   if fam == "I" else out["err_sigma_l2"])

    xi = fields.get("xi")
    if case.k == 2:
        out["err_xi_l2"] = float("nan")
    elif xi is None:
        # conforming primal method: xi = -du
        out["err_xi_l2"] = ev.l2("main", "d", -u, case.xi)
    else:
        out["err_xi_l2"] = ev.l2("plus", "value", xi, case.xi)
    return out


def convergence_study(cfg: StudyConfig) -> StudyReport:
    case = register_case(cfg.k if cfg.case is None else cfg.case)
    if case.k != cfg.k:
        raise ValueError("case form degree differs from k")
    rows = []
    rho = cfg.rho[0]
    for level in cfg.levels:
        t0 = time.perf_counter()
        mesh = build_structured_mesh(level_divisions(level))
        try:
            fields, dofs, ops, params, system = _solve_method(cfg, mesh, rho, case.f)
        except Exception as exc:
            raise RuntimeError(f"level {level}: {exc}") from exc
        row = {"level": level, "h_max": float(mesh.sizes().h_T.max()), "dofs": int(dofs)}
        row.update(evaluate_errors(cfg, case, fields, ops, params))
        row["gamma_h"] = float("nan")
        if cfg.infsup and system is not None and cfg.method in ("xg4a", "xg4b", "afw", "afw_dual"):
            row["gamma_h"] = _gamma(system, params, cfg)
        row["wall_s"] = time.perf_counter() - t0
        rows.append(row)
    for col in ("err_u_triple", "err_sigma_triple", "err_xi_l2", "err_u_l2", "err_sigma_l2"):
        for row, r in zip(rows, rates([row[col] for row in rows])):
            row["rate_" + col.removeprefix("err_")] = r
    for row in rows:
        row["rate_u"] = row["rate_u_triple"]
    summary = {"final_rate_u": rows[-1]["rate_u"] if rows else float("nan"),
               "final_rate_sigma": rows[-1]["rate_sigma_triple"] if rows else float("nan"),
               "expected_order": expected_order(cfg.k, cfg.degree, cfg.family)}
    return StudyReport("convergence", asdict(cfg), rows, summary)


def _gamma(system, params, cfg) -> float:
    return infsup_estimate(system.matrix, _gram(system, params)).gamma_h


def _gram(system, params):
    if system.kind in ("afw", "afw_dual"):
        return conforming_gram(system)
    return system_gram(system, params)


def conforming_gram(system):
    """Graph norms of the conforming methods: ||v||^2 + ||dv||^2 (primal)
    or ||v||^2 + ||delta v||^2 (dual); L2 for xi."""
    ops = system.extras["operators"]
    kind = "d" if system.kind == "afw" else "delta"
    blocks = []
    for name in system.fields:
        if name == "mean":
            blocks.append(sp.identity(1))
            continue
        space = {"sigma": "minus", "xi": "plus", "u": "main"}[name]
        P = system.prolongations[name]
        G = ops.mass(space, "value", space, "value")
        if name != "xi" or system.kind == "afw_dual":
            G = G + ops.mass(space, kind, space, kind)
        blocks.append(P.T @ G @ P)
    return sp.block_diag(blocks, format="csr")


def conforming_difference(ops, fields, ref, dual: bool) -> float:
    """D = ||a-b|| + ||D(a-b)|| summed over the two fields, with D = d for
    (sigma, u) in the primal setting and delta for (xi, u) in the starred."""
    w = ops.quad.cell_weights.ravel()
    names = ("xi", "u") if dual else ("sigma", "u")
    kind = "delta" if dual else "d"
    total = 0.0
    for name in names:
        if fields.get(name) is None or ref.get(name) is None:
            continue
        space = {"sigma": "minus", "xi": "plus", "u": "main"}[name]
        e = fields[name] - ref[name]
        for kd in ("value", kind):
            v = ops.ev(space, kd) @ e
            ncomp = max(v.size // w.size, 1)
            if v.size:
                total += float(np.sqrt(np.sum(np.repeat(w, ncomp) * v * v)))
    return total


def rho_limit_study(cfg: StudyConfig, divisions: int = 4, f=None) -> StudyReport:
    """XG versus the conforming method as rho decreases.

    Regime I is compared with the primal conforming method, regime II with
    the starred one. The slope is a least squares fit of log D on log rho.
    """
    mesh = build_structured_mesh(divisions)
    dual = cfg.dual
    src = f if f is not None else register_case(cfg.k).f
    afw_cfg = StudyConfig(method="afw_dual" if dual else "afw", k=cfg.k, degree=cfg.degree,
                          family=cfg.family, regime=cfg.regime)
    ref, _, _, _, _ = _solve_method(afw_cfg, mesh, 1.0, src)
    rows = []
    for rho in cfg.rho:
        t0 = time.perf_counter()
        xg_cfg = StudyConfig(method=cfg.method if cfg.method.startswith("xg") else "xg7",
                             k=cfg.k, degree=cfg.degree, family=cfg.family, regime=cfg.regime)
        fields, dofs, ops, params, _ = _solve_method(xg_cfg, mesh, rho, src)
        D = conforming_difference(ops, fields, ref, dual)
        rows.append({"rho": rho, "divisions": divisions, "dofs": dofs, "D": D,
                     "wall_s": time.perf_counter() - t0})
    Ds = np.array([r["D"] for r in rows])
    rhos = np.array([r["rho"] for r in rows])
    ok = Ds > 0
    slope = float(np.polyfit(np.log(rhos[ok]), np.log(Ds[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    pair = [float(np.log(a / b) / np.log(ra / rb)) if a > 0 and b > 0 else float("nan")
            for a, b, ra, rb in zip(Ds[:-1], Ds[1:], rhos[:-1], rhos[1:])]
    for row, s in zip(rows[1:], pair):
        row["pair_slope"] = s
    summary = {"slope": slope, "monotone": bool(np.all(np.diff(Ds) <= 1e-14 * Ds.max(initial=0)))}
    return StudyReport("rho_limit", asdict(cfg), rows, summary)


def infsup_sweep(cfg: StudyConfig, divisions=(2, 4, 8), negate_a: bool = False) -> StudyReport:
    """gamma_h over divisions x rho. XG methods use four-field I in the primal
    norms (regime I) or four-field II in the starred norms (regime II).
    negate_a flips the sign of a as a negative control."""
    rows = []
    for div in divisions:
        mesh = build_structured_mesh(div)
        for rho in cfg.rho:
            t0 = time.perf_counter()
            f0 = zero_source(cfg.k)
            if cfg.method in ("afw", "afw_dual"):
                afw = make_afw_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=cfg.method == "afw_dual")
                specs = (afw.minus.spec if afw.minus else None, afw.main.spec,
                         afw.plus.spec if afw.plus else None)
                ops = FormOperators(make_xg_spaces(mesh, cfg.k, specs=specs))
                system = (assemble_afw if cfg.method == "afw" else assemble_afw_dual)(mesh, afw, f0, ops=ops)
                params = penalty_schedule(cfg.regime, rho, mesh.sizes())
            else:
                spaces = make_xg_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=cfg.dual)
                params = penalty_schedule(cfg.regime, rho, mesh.sizes())
                if negate_a:
                    params = params.replace(a=-params.a)
                method = "xg4b" if params.norm_family == "II" else "xg4a"
                system = ASSEMBLERS[method](mesh, spaces, params, f0, validate=False)
            est = infsup_estimate(system.matrix, _gram(system, params))
            rows.append({"divisions": div, "rho": rho, "dofs": system.total_dim,
                         "gamma_h": est.gamma_h, "wall_s": time.perf_counter() - t0})
    g = np.array([r["gamma_h"] for r in rows])
    summary = {"min": float(g.min()), "max": float(g.max()),
               "ratio": float(g.min() / g.max()) if g.max() > 0 else float("nan")}
    return StudyReport("infsup", asdict(cfg), rows, summary)


# -------------------------------------------------------------- consistency

def l2_projection(ops: FormOperators, space: str, func) -> np.ndarray:
    """Cellwise L2 projection of an exact form onto a broken space."""
    M = ops.mass(space, "value", space, "value")
    return spla.spsolve(M.tocsc(), ops.load(func, space))


def interpolate_exact(ops: FormOperators, case: ManufacturedCase) -> dict:
    """Canonical interpolants of (sigma, xi, u) into the broken spaces.

    Spaces without a conforming realisation fall back to the L2 projection.
    """
    from .fe_spaces import ConformingSpace
    out = {}
    for name, space, exact in (("sigma", "minus", case.sigma), ("xi", "plus", case.xi),
                               ("u", "main", case.u)):
        S = ops.space(space)
        if S is None:
            continue
        try:
            out[name] = ConformingSpace(ops.mesh, S.spec).interpolate(exact)
        except ValueError:
            out[name] = l2_projection(ops, space, exact)
    return out


def consistency_residual(cfg: StudyConfig, level: int) -> dict:
    """Residual of interpolated exact fields, with zero check variables, in
    the seven-field system, measured in the dual of the triple norm."""
    case = register_case(cfg.k)
    mesh = build_structured_mesh(level_divisions(level))
    spaces = make_xg_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=cfg.dual)
    ops = FormOperators(spaces)
    params = penalty_schedule(cfg.regime, cfg.rho[0], mesh.sizes())
    system = ASSEMBLERS["xg7"](mesh, spaces, params, case.f, ops=ops)
    x = np.zeros(system.total_dim)
    for name, vec in interpolate_exact(ops, case).items():
        x[system.blocks[name]] = vec
    r = system.matrix @ x - system.rhs
    G = system_gram(system, params)
    dual = float(np.sqrt(r @ spla.spsolve(G.tocsc(), r)))
    return {"level": level, "h_max": float(mesh.sizes().h_T.max()), "residual": dual}


def consistency_study(cfg: StudyConfig) -> StudyReport:
    rows = [consistency_residual(cfg, level) for level in cfg.levels]
    for row, r in zip(rows, rates([row["residual"] for row in rows])):
        row["rate"] = r
    summary = {"final_rate": rows[-1]["rate"] if rows else float("nan"),
               "expected_order": expected_order(cfg.k, cfg.degree, cfg.family)}
    return StudyReport("consistency", asdict(cfg), rows, summary)


# ---------------------------------------------------------------- identities

def _random_polyform(rng, k, degree):
    from .diff_forms import PolyForm, components
    terms = {}
    for comp in components(k):
        for total in range(degree + 1):
            for i in range(total + 1):
                terms[(comp, (i, total - i))] = int(rng.integers(-5, 6))
    return PolyForm(k, terms)


def _random_triangle(rng):
    from fractions import Fraction
    while True:
        P = [(Fraction(int(rng.integers(-20, 21)), 10), Fraction(int(rng.integers(-20, 21)), 10))
             for _ in range(3)]
        area2 = (P[1][0] - P[0][0]) * (P[2][1] - P[0][1]) - (P[1][1] - P[0][1]) * (P[2][0] - P[0][0])
        if abs(area2) >= Fraction(1, 2):
            return P if area2 > 0 else [P[0], P[2], P[1]]


def cell_stokes_defect(tau, u, cell) -> float:
    """Relative defect of (d tau, u)_T - (tau, delta u)_T = int_{dT} tr tau ^ tr star u,
    with the boundary traversed counterclockwise."""
    from .diff_forms import (coderivative, exterior_derivative, face_wedge_integral, hodge_star,
                             inner_product, trace_to_face)
    vol1 = inner_product(exterior_derivative(tau), u, cell)
    vol2 = inner_product(tau, coderivative(u), cell)
    bnd, size = 0.0, 0.0
    su = hodge_star(u)
    for i in range(3):
        edge = (cell[i], cell[(i + 1) % 3])
        a, b = trace_to_face(tau, cell, edge), trace_to_face(su, cell, edge)
        if a.degree == 1:
            a, b = b, a
        if a.coeffs and b.coeffs:
            term = face_wedge_integral(a, b)
            bnd += term
            size += abs(term)
    # edge terms can cancel exactly, so measure against their sizes too
    scale = max(abs(vol1), abs(vol2), size, 1e-300)
    return abs(vol1 - vol2 - bnd) / scale


def jump_identity_defect(spaces_ops: FormOperators, tau, u) -> float:
    """Relative defect of (d tau, u) - (tau, delta u)
    = sum_E <[tr tau], {tr* u}> + <{tr tau}, [tr* u]> on a whole mesh."""
    ops = spaces_ops
    vol_d = tau @ (ops.mass("minus", "d", "main", "value") @ u)
    vol_delta = tau @ (ops.mass("minus", "value", "main", "delta") @ u)
    Tt, Tu = ops.traces("minus"), ops.traces("main")
    r = tau @ ((ops.face(Tt.jump_tr, Tu.avg_trs) + ops.face(Tt.avg_tr, Tu.jump_trs)) @ u)
    return abs(vol_d - vol_delta - r) / max(abs(vol_d), abs(vol_delta), abs(r), 1e-300)


def perturbed_mesh(divisions, rng, amount=0.2):
    from .mesh_complex import SimplicialMesh
    base = build_structured_mesh(divisions)
    X = base.vertices.copy()
    inner = ~((X[:, 0] == 0) | (X[:, 0] == 1) | (X[:, 1] == 0) | (X[:, 1] == 1))
    X[inner] += amount / divisions * rng.uniform(-1, 1, size=(inner.sum(), 2))
    return SimplicialMesh(X, base.cells)


def calculus_identities(n_cases: int = 100, seed: int = 0) -> dict:
    """Randomized checks of d d = 0, delta delta = 0 (exact), cellwise Stokes
    and the global jump identity (floating point)."""
    from .diff_forms import FormSpaceSpec, coderivative, exterior_derivative
    rng = np.random.default_rng(seed)
    dd = all(exterior_derivative(exterior_derivative(_random_polyform(rng, k, int(rng.integers(0, 5))))).is_zero()
             for _ in range(n_cases) for k in (0, 1))
    deldel = all(coderivative(coderivative(_random_polyform(rng, k, int(rng.integers(0, 5))))).is_zero()
                 for _ in range(n_cases) for k in (1, 2))
    stokes = 0.0
    for _ in range(n_cases):
        k = int(rng.integers(1, 3))
        cell = _random_triangle(rng)
        tau = _random_polyform(rng, k - 1, int(rng.integers(0, 4)))
        u = _random_polyform(rng, k, int(rng.integers(0, 4)))
        stokes = max(stokes, cell_stokes_defect(tau, u, cell))
    jump = 0.0
    for _ in range(n_cases):
        k = int(rng.integers(1, 3))
        r = int(rng.integers(0, 3))
        mesh = perturbed_mesh(int(rng.integers(1, 4)), rng)
        specs = (FormSpaceSpec(k - 1, r + 1, "complete"), FormSpaceSpec(k, r, "complete"), None)
        ops = FormOperators(make_xg_spaces(mesh, k, specs=specs))
        tau = rng.standard_normal(ops.space("minus").dim)
        u = rng.standard_normal(ops.space("main").dim)
        jump = max(jump, jump_identity_defect(ops, tau, u))
    return {"d_d_zero": bool(dd), "delta_delta_zero": bool(deldel),
            "stokes_max_defect": float(stokes), "jump_max_defect": float(jump),
            "passed": bool(dd and deldel and stokes <= 1e-12 and jump <= 1e-12)}


# ------------------------------------------------------------ averaging

def averaging_constants(spec, divisions=(2, 4, 8, 16), samples: int = 50, seed: int = 0) -> StudyReport:
    """Largest observed ratio
    (||h^-1 (v - v^c)|| + ||d(v - v^c)||) / ||h_E^-1/2 [tr v]||
    over random broken fields v, per mesh, with v^c the moment average."""
    from .fe_spaces import ConformingSpace, TraceOperators, conforming_average, mesh_quadrature
    rng = np.random.default_rng(seed)
    rows = []
    for div in divisions:
        mesh = build_structured_mesh(div)
        conf = ConformingSpace(mesh, spec)
        quad = mesh_quadrature(mesh, 2 * spec.r + 4)
        b = conf.broken
        T = TraceOperators(b, quad)
        V, D = b.cell_matrix(quad), b.cell_matrix(quad, "d")
        w = quad.cell_weights.ravel()
        nc = b.local.ncomp
        wv = np.repeat(w, nc)
        wd = np.repeat(w, D.shape[0] // w.size) if D.shape[0] else w[:0]
        inv_h = np.repeat(1.0 / mesh.sizes().h_T, quad.nq * nc)
        fw = quad.face_weights.ravel() / np.repeat(mesh.sizes().h_E, quad.nqf)
        consts = []
        for _ in range(samples):
            v = rng.standard_normal(b.dim)
            e = v - conforming_average(conf, v)
            ev, ed = V @ e, D @ e
            lhs = np.sqrt(np.sum(wv * (inv_h * ev) ** 2)) + np.sqrt(np.sum(wd * ed * ed))
            j = T.jump_tr @ v
            consts.append(lhs / np.sqrt(np.sum(fw * j * j)))
        rows.append({"divisions": div, "h_max": float(mesh.sizes().h_T.max()),
                     "max_constant": float(max(consts)), "mean_constant": float(np.mean(consts))})
    c = np.array([r["max_constant"] for r in rows])
    summary = {"variation": float(c.max() / c.min())}
    cfg = {"k": spec.k, "degree": spec.r, "family": spec.family, "samples": samples, "seed": seed}
    return StudyReport("averaging", cfg, rows, summary)


# ---------------------------------------------------------- hybridization

def hybridization_check(cfg: StudyConfig, divisions=(2, 4)) -> StudyReport:
    """Condensed solve plus reconstruction against the monolithic seven-field
    solve, and the condensed matrix against the dense Schur complement."""
    regime = cfg.regime if cfg.regime.startswith("hybridizable") else "hybridizable_" + cfg.regime
    case = register_case(cfg.k)
    rows = []
    for div in divisions:
        t0 = time.perf_counter()
        mesh = build_structured_mesh(div)
        dual = regime == "hybridizable_II"
        spaces = make_xg_spaces(mesh, cfg.k, cfg.degree, cfg.family, dual=dual)
        ops = FormOperators(spaces)
        params = penalty_schedule(regime, cfg.rho[0], mesh.sizes())
        hyb = HybridXG(spaces, params, case.f, ops=ops)
        cond = hyb.condense()
        lam, _, _ = solve_matrix(cond.matrix, cond.rhs)
        fields = hyb.reconstruct(lam)
        mono = solve(ASSEMBLERS["xg7"](mesh, spaces, params, case.f, ops=ops)).solution
        num = sum(np.sum((fields[n] - mono[n]) ** 2) for n in mono if n in fields)
        den = sum(np.sum(mono[n] ** 2) for n in mono if n in fields)
        S = hyb.schur_complement()
        schur = float(np.abs(cond.matrix.toarray() - S).max() / max(np.abs(S).max(), 1e-300))
        rows.append({"divisions": div, "condensed_dofs": cond.dim,
                     "monolithic_dofs": int(sum(v.size for v in mono.values())),
                     "roundtrip_rel": float(np.sqrt(num / max(den, 1e-300))),
                     "schur_rel": schur, "wall_s": time.perf_counter() - t0})
    summary = {"max_roundtrip": max(r["roundtrip_rel"] for r in rows),
               "max_schur": max(r["schur_rel"] for r in rows)}
    return StudyReport("hybridization", asdict(cfg), rows, summary)
