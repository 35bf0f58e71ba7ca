"""Assembly of the XG family, its reduced forms and the conforming mixed methods.

Field labels
    sigma          V^-   (k-1)-forms
    sigma_check    check V^- on all faces
    xi             V^+   (k+1)-forms
    xi_check_star  check V^{+*} on interior faces
    u              V     k-forms
    u_check        check V on all faces
    u_check_star   check V^* on interior faces
    mean           scalar multiplier enforcing (u, 1) = 0 when k = 0

Every system is written so that it is symmetric: the check rows are scaled
by -1/a, 1/b, -1/c, 1/d and the equation for u is multiplied by -1. With
these choices the exact fields satisfy sigma = -delta u, xi = -d u and
(d delta + delta d) u = f.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe_spaces import (ConformingSpace, TraceOperators, XGSpaces, check_inclusions,
                        mesh_quadrature, side_gather, xg_space_specs)
from .mesh_complex import MeshSizes, SimplicialMesh

FIELDS = ("sigma", "sigma_check", "xi", "xi_check_star", "u", "u_check", "u_check_star")
REGIMES = ("I", "II", "hybridizable_I", "hybridizable_II")
_REGIME_ALIASES = {"1": "I", "2": "II", "h1": "hybridizable_I", "h2": "hybridizable_II"}

FIELD_SPACE = {"sigma": "minus", "sigma_check": "check_minus", "xi": "plus",
               "xi_check_star": "check_plus_star", "u": "main", "u_check": "check",
               "u_check_star": "check_star"}


class ConfigurationError(ValueError):
    """Spaces or parameters that violate a structural hypothesis."""


# ---------------------------------------------------------------- penalties

@dataclass(frozen=True)
class PenaltyParams:
    """Regime, rho and piecewise constant face coefficients."""

    regime: str
    rho: float
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def norm_family(self) -> str:
        """'I' for the primal norms, 'II' for the starred norms."""
        return "II" if self.regime in ("II", "hybridizable_II") else "I"

    def replace(self, **kw) -> "PenaltyParams":
        return dataclasses.replace(self, **kw)


def normalize_regime(regime) -> str:
    regime = str(regime)
    regime = _REGIME_ALIASES.get(regime, regime)
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES} or 1, 2, h1, h2")
    return regime


def penalty_schedule(regime, rho: float, sizes: MeshSizes) -> PenaltyParams:
    """Face coefficients with all proportionality constants equal to one."""
    regime = normalize_regime(regime)
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    rh = rho * np.asarray(sizes.h_E, dtype=float)
    if regime in ("I", "hybridizable_I"):
        a, b, c, d = -rh, 1.0 / rh, rh, -1.0 / rh
    else:
        a, b, c, d = -1.0 / rh, rh, 1.0 / rh, -rh
    if regime.startswith("hybridizable"):
        c, d = 1.0 / (4.0 * b), 1.0 / (4.0 * a)
    return PenaltyParams(regime, float(rho), a, b, c, d)


# ------------------------------------------------------------ block systems

@dataclass
class BlockSystem:
    """Sparse symmetric system with named, contiguous blocks."""

    fields: tuple
    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict
    kind: str = "xg7"
    prolongations: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def total_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def has_mean_constraint(self) -> bool:
        return "mean" in self.blocks

    def split(self, x) -> dict:
        return {name: np.asarray(x)[self.blocks[name]] for name in self.fields}

    def broken(self, x) -> dict:
        """Split a solution and map conforming coefficients to broken ones."""
        out = self.split(x)
        for name, P in self.prolongations.items():
            out[name] = P @ out[name]
        return out

    def block(self, row, col):
        return self.matrix[self.blocks[row], self.blocks[col]]


def _build(fields, sizes, entries, rhs_parts, kind, **kw) -> BlockSystem:
    offsets, blocks, pos = {}, {}, 0
    for name in fields:
        offsets[name] = pos
        blocks[name] = slice(pos, pos + sizes[name])
        pos += sizes[name]
    grid = [[None] * len(fields) for _ in fields]
    index = {name: i for i, name in enumerate(fields)}
    for (r, c), mat in entries.items():
        if r in index and c in index and mat is not None:
            prev = grid[index[r]][index[c]]
            grid[index[r]][index[c]] = mat if prev is None else prev + mat
    for i, name in enumerate(fields):
        if grid[i][i] is None:
            grid[i][i] = sp.csr_matrix((sizes[name], sizes[name]))
    K = sp.bmat(grid, format="csr")
    K.eliminate_zeros()
    rhs = np.zeros(pos)
    for name, vec in rhs_parts.items():
        if name in blocks:
            rhs[blocks[name]] += vec
    return BlockSystem(tuple(fields), K, rhs, blocks, kind, **kw)


# ---------------------------------------------------------- form operators

class FormOperators:
    """Cached evaluation, trace and check matrices for one XGSpaces."""

    def __init__(self, spaces: XGSpaces, quad=None):
        self.spaces = spaces
        self.mesh = mesh = spaces.mesh
        self.quad = quad if quad is not None else mesh_quadrature(mesh, spaces.quad_degree + 2)
        q = self.quad
        self.nqf = q.nqf
        self.face_w = q.face_weights.ravel()
        self.side_sign = np.repeat(mesh.cell_signs.ravel().astype(float), q.nqf)
        self.side_w = q.face_weights[mesh.cell_faces].ravel()
        self.gather = side_gather(mesh, q.nqf)
        self.interior_rows = np.repeat(mesh.interior.astype(float), q.nqf)
        self._cache = {}

    def space(self, name):
        return getattr(self.spaces, name)

    def has(self, field_name) -> bool:
        return self.space(FIELD_SPACE[field_name]) is not None

    def dim(self, field_name) -> int:
        return self.space(FIELD_SPACE[field_name]).dim

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def ev(self, name, kind="value"):
        return self._memo(("ev", name, kind), lambda: self.space(name).cell_matrix(self.quad, kind))

    def traces(self, name) -> TraceOperators:
        return self._memo(("tr", name), lambda: TraceOperators(self.space(name), self.quad))

    def side(self, name, which):
        return self._memo(("side", name, which), lambda: self.traces(name).side_matrix(which))

    def check(self, name):
        return self._memo(("check", name), lambda: self.space(name).face_matrix(self.quad))

    def cell_w(self, ncomp):
        return sp.diags(np.repeat(self.quad.cell_weights.ravel(), ncomp))

    def mass(self, a, ka, b, kb):
        """(ka a, kb b) over all cells; ka, kb in value/d/delta."""
        A, B = self.ev(a, ka), self.ev(b, kb)
        ncomp = A.shape[0] // (self.quad.cell_points.shape[0] * self.quad.nq)
        return (A.T @ self.cell_w(ncomp) @ B).tocsr()

    def face_w_diag(self, coef=None):
        w = self.face_w if coef is None else self.face_w * np.repeat(coef, self.nqf)
        return sp.diags(w)

    def face(self, A, B, coef=None):
        """<coef A, B> summed over faces, A and B with face-point rows."""
        return (A.T @ self.face_w_diag(coef) @ B).tocsr()

    def side_pair(self, A_side, B_face):
        """<A, B>^s summed over cells: signed side integrals."""
        W = sp.diags(self.side_sign * self.side_w)
        return (A_side.T @ W @ (self.gather @ B_face)).tocsr()

    def signed_sum(self, name, which):
        """Jump assembled as the signed sum of one-sided traces."""
        S = sp.diags(self.side_sign)
        return (self.gather.T @ S @ self.side(name, which)).tocsr()

    def interior(self, B):
        return sp.diags(self.interior_rows) @ B

    def load(self, f, name="main"):
        """(f, v) for a callable returning (npts, ncomp) form components."""
        q = self.quad
        X = q.cell_points.reshape(-1, 2)
        vals = np.asarray(f(X), dtype=float).reshape(len(X), -1)
        ncomp = vals.shape[1]
        return self.ev(name).T @ (np.repeat(q.cell_weights.ravel(), ncomp) * vals.ravel())

    def mean_row(self):
        return self.ev("main").T @ self.quad.cell_weights.ravel()


def _require(spaces: XGSpaces):
    report = check_inclusions(spaces)
    failed = [key for key in ("trace_star_V_in_check_minus", "trace_V_in_check_plus_star",
                              "trace_star_Vplus_in_check", "trace_Vminus_in_check_star",
                              "d_V_in_Vplus") if not report[key]]
    if failed:
        raise ConfigurationError("space hypotheses violated: " + ", ".join(failed))


def _operators(spaces, ops, validate):
    if isinstance(spaces, FormOperators):
        return spaces
    if validate:
        _require(spaces)
    return ops if ops is not None else FormOperators(spaces)


def _finish(ops: FormOperators, fields, entries, rhs, kind):
    fields = [name for name in fields if name == "mean" or ops.has(name)]
    sizes = {name: ops.dim(name) for name in fields if name != "mean"}
    if ops.spaces.k == 0:
        fields.append("mean")
        sizes["mean"] = 1
        m = sp.csr_matrix(ops.mean_row()[None, :])
        entries[("mean", "u")] = m
        entries[("u", "mean")] = m.T.tocsr()
    return _build(fields, sizes, entries, rhs, kind, extras={"operators": ops})


def _inv(x):
    return 1.0 / x


# ------------------------------------------------------------ seven fields

def assemble_seven_field(mesh: SimplicialMesh, spaces: XGSpaces, params: PenaltyParams, f,
                         validate: bool = True, ops: FormOperators | None = None) -> BlockSystem:
    """Seven-field XG system assembled cell by cell with numerical fluxes.

    Fluxes: u_hat* = {tr* u} + u_check* (zero on the boundary),
    u_hat = {tr u} + u_check, sigma_hat = {tr sigma} + sigma_check,
    xi_hat* = {tr* xi} + xi_check* (zero on the boundary).
    """
    ops = _operators(spaces, ops, validate)
    E = {}
    has_s, has_x = ops.has("sigma"), ops.has("xi")
    if has_s:
        E["sigma", "sigma"] = ops.mass("minus", "value", "minus", "value")
        E["sigma", "u"] = (ops.mass("minus", "d", "main", "value")
                           - ops.side_pair(ops.side("minus", "tr"),
                                           ops.interior(ops.traces("main").avg_trs)))
        E["sigma", "u_check_star"] = -ops.side_pair(ops.side("minus", "tr"), ops.check("check_star"))
        E["u", "sigma"] = (ops.mass("main", "delta", "minus", "value")
                           + ops.side_pair(ops.side("main", "trs"), ops.traces("minus").avg_tr))
        E["u", "sigma_check"] = ops.side_pair(ops.side("main", "trs"), ops.check("check_minus"))
        Qa, Qs = ops.check("check_minus"), ops.check("check_star")
        E["sigma_check", "sigma_check"] = -ops.face(Qa, Qa, _inv(params.a))
        E["sigma_check", "u"] = ops.face(Qa, ops.signed_sum("main", "trs"))
        E["u_check_star", "u_check_star"] = ops.face(Qs, Qs, _inv(params.d))
        E["u_check_star", "sigma"] = -ops.face(Qs, ops.signed_sum("minus", "tr"))
    if has_x:
        E["xi", "xi"] = ops.mass("plus", "value", "plus", "value")
        E["xi", "u"] = (ops.mass("plus", "delta", "main", "value")
                        + ops.side_pair(ops.side("plus", "trs"), ops.traces("main").avg_tr))
        E["xi", "u_check"] = ops.side_pair(ops.side("plus", "trs"), ops.check("check"))
        E["u", "xi"] = (ops.mass("main", "d", "plus", "value")
                        - ops.side_pair(ops.side("main", "tr"),
                                        ops.interior(ops.traces("plus").avg_trs)))
        E["u", "xi_check_star"] = -ops.side_pair(ops.side("main", "tr"), ops.check("check_plus_star"))
        Qb, Qc = ops.check("check_plus_star"), ops.check("check")
        E["xi_check_star", "xi_check_star"] = ops.face(Qb, Qb, _inv(params.b))
        E["xi_check_star", "u"] = -ops.face(Qb, ops.signed_sum("main", "tr"))
        E["u_check", "u_check"] = -ops.face(Qc, Qc, _inv(params.c))
        E["u_check", "xi"] = ops.face(Qc, ops.signed_sum("plus", "trs"))
    return _finish(ops, list(FIELDS), E, {"u": -ops.load(f)}, "xg7")


# ---------------------------------------------------------- reduced forms

def _jumps(ops, name):
    T = ops.traces(name)
    return T.jump_tr, T.avg_tr, T.jump_trs, T.avg_trs


def _common_reduced(ops, params, E):
    """sigma and xi diagonal blocks once u_check and u_check* are eliminated."""
    if ops.has("sigma"):
        Js = ops.traces("minus").jump_tr
        E["sigma", "sigma"] = ops.mass("minus", "value", "minus", "value") - ops.face(Js, Js, params.d)
    if ops.has("xi"):
        Jx = ops.traces("plus").jump_trs
        E["xi", "xi"] = ops.mass("plus", "value", "plus", "value") + ops.face(Jx, Jx, params.c)


def _d_based_couplings(ops, E):
    """b_h written with cellwise d and averages of starred traces."""
    ju, au, jsu, asu = _jumps(ops, "main")
    if ops.has("sigma"):
        js, as_, _, _ = _jumps(ops, "minus")
        E["sigma", "u"] = ops.mass("minus", "d", "main", "value") - ops.face(js, asu)
        E["u", "sigma"] = ops.mass("main", "value", "minus", "d") - ops.face(asu, js)
    if ops.has("xi"):
        _, _, jsx, asx = _jumps(ops, "plus")
        E["xi", "u"] = ops.mass("plus", "value", "main", "d") - ops.face(asx, ju)
        E["u", "xi"] = ops.mass("main", "d", "plus", "value") - ops.face(ju, asx)


def _delta_based_couplings(ops, E):
    """b_h written with cellwise delta and starred jumps."""
    ju, au, jsu, asu = _jumps(ops, "main")
    if ops.has("sigma"):
        js, as_, _, _ = _jumps(ops, "minus")
        E["sigma", "u"] = ops.mass("minus", "value", "main", "delta") + ops.face(as_, jsu)
        E["u", "sigma"] = ops.mass("main", "delta", "minus", "value") + ops.face(jsu, as_)
    if ops.has("xi"):
        _, _, jsx, asx = _jumps(ops, "plus")
        E["xi", "u"] = ops.mass("plus", "delta", "main", "value") + ops.face(jsx, au)
        E["u", "xi"] = ops.mass("main", "value", "plus", "delta") + ops.face(au, jsx)


def assemble_four_field_I(mesh, spaces, params, f, validate=True, ops=None) -> BlockSystem:
    """Fields (sigma, xi, xi_check*, u): sigma_check, u_check, u_check* eliminated."""
    ops = _operators(spaces, ops, validate)
    E = {}
    _common_reduced(ops, params, E)
    _d_based_couplings(ops, E)
    ju, _, jsu, _ = _jumps(ops, "main")
    if ops.has("sigma"):
        E["u", "u"] = ops.face(jsu, jsu, params.a)
    if ops.has("xi"):
        Qb = ops.check("check_plus_star")
        E["u", "xi_check_star"] = -ops.face(ju, Qb)
        E["xi_check_star", "u"] = -ops.face(Qb, ju)
        E["xi_check_star", "xi_check_star"] = ops.face(Qb, Qb, _inv(params.b))
    return _finish(ops, ["sigma", "xi", "xi_check_star", "u"], E, {"u": -ops.load(f)}, "xg4a")


def assemble_four_field_II(mesh, spaces, params, f, validate=True, ops=None) -> BlockSystem:
    """Fields (sigma, sigma_check, xi, u): xi_check*, u_check, u_check* eliminated."""
    ops = _operators(spaces, ops, validate)
    E = {}
    _common_reduced(ops, params, E)
    _delta_based_couplings(ops, E)
    ju, _, jsu, _ = _jumps(ops, "main")
    if ops.has("xi"):
        E["u", "u"] = -ops.face(ju, ju, params.b)
    if ops.has("sigma"):
        Qa = ops.check("check_minus")
        E["u", "sigma_check"] = ops.face(jsu, Qa)
        E["sigma_check", "u"] = ops.face(Qa, jsu)
        E["sigma_check", "sigma_check"] = -ops.face(Qa, Qa, _inv(params.a))
    return _finish(ops, ["sigma", "sigma_check", "xi", "u"], E, {"u": -ops.load(f)}, "xg4b")


def assemble_three_field(mesh, spaces, params, f, validate=True, ops=None) -> BlockSystem:
    """Fields (sigma, xi, u) with every check variable eliminated."""
    ops = _operators(spaces, ops, validate)
    E = {}
    _common_reduced(ops, params, E)
    _d_based_couplings(ops, E)
    ju, _, jsu, _ = _jumps(ops, "main")
    uu = sp.csr_matrix((ops.dim("u"), ops.dim("u")))
    if ops.has("sigma"):
        uu = uu + ops.face(jsu, jsu, params.a)
    if ops.has("xi"):
        uu = uu - ops.face(ju, ju, params.b)
    E["u", "u"] = uu
    return _finish(ops, ["sigma", "xi", "u"], E, {"u": -ops.load(f)}, "xg3")


def recover_checks(ops: FormOperators, params: PenaltyParams, fields: dict) -> dict:
    """Check variables from the elimination relations, as check coefficients.

    sigma_check = a [tr* u], xi_check* = b [tr u], u_check = c [tr* xi],
    u_check* = d [tr sigma], each projected onto its check space.
    """
    out = {}

    def project(check, values, coef):
        Q = ops.check(check)
        G = ops.face(Q, Q)
        rhs = Q.T @ (ops.face_w * values * np.repeat(coef, ops.nqf))
        return spla.spsolve(G.tocsc(), rhs) if G.shape[0] else np.zeros(0)

    ju, _, jsu, _ = _jumps(ops, "main")
    u = fields["u"]
    if ops.has("sigma"):
        out["sigma_check"] = project("check_minus", jsu @ u, params.a)
        if "sigma" in fields:
            out["u_check_star"] = project("check_star", ops.traces("minus").jump_tr @ fields["sigma"], params.d)
    if ops.has("xi"):
        out["xi_check_star"] = project("check_plus_star", ju @ u, params.b)
        if "xi" in fields:
            out["u_check"] = project("check", ops.traces("plus").jump_trs @ fields["xi"], params.c)
    return out


ASSEMBLERS = {"xg7": assemble_seven_field, "xg4a": assemble_four_field_I,
              "xg4b": assemble_four_field_II, "xg3": assemble_three_field}


# ------------------------------------------------------ conforming methods

@dataclass
class AFWSpaces:
    k: int
    minus: ConformingSpace | None
    main: ConformingSpace
    plus: ConformingSpace | None
    dual: bool = False

    @property
    def mesh(self):
        return self.main.mesh


def make_afw_spaces(mesh, k, degree=0, family="trimmed", dual=False) -> AFWSpaces:
    """Conforming subspaces of the XG broken spaces.

    Primal: the unconstrained FEEC spaces, whose natural boundary conditions
    match the XG boundary fluxes. Dual: Hodge stars of FEEC spaces with
    vanishing boundary traces, so tr* of the fields vanishes.
    """
    m, v, p = xg_space_specs(k, degree, family, dual)
    try:
        if dual:
            return AFWSpaces(k, None, ConformingSpace(mesh, v, essential=True),
                             ConformingSpace(mesh, p, essential=True) if p else None, True)
        return AFWSpaces(k, ConformingSpace(mesh, m) if m else None, ConformingSpace(mesh, v), None, False)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def _conforming_ops(afw: AFWSpaces, xg_spaces: XGSpaces | None):
    from .fe_spaces import make_xg_spaces
    mesh = afw.mesh
    if xg_spaces is None:
        specs = (afw.minus.spec if afw.minus else None, afw.main.spec,
                 afw.plus.spec if afw.plus else None)
        xg_spaces = make_xg_spaces(mesh, afw.k, specs=specs)
    return FormOperators(xg_spaces)


def assemble_afw(mesh, afw: AFWSpaces, f, ops: FormOperators | None = None) -> BlockSystem:
    """Conforming mixed method: find sigma in V^-, u in V with
    (sigma, tau) + (d tau, u) = 0 and (d sigma, v) - (du, dv) = -(f, v)."""
    if not isinstance(afw, AFWSpaces) or afw.dual:
        raise ConfigurationError("assemble_afw needs primal conforming spaces")
    ops = ops or _conforming_ops(afw, None)
    Pu = afw.main.prolongation
    E, fields, sizes = {}, [], {}
    if afw.minus is not None:
        Ps = afw.minus.prolongation
        fields.append("sigma")
        sizes["sigma"] = Ps.shape[1]
        E["sigma", "sigma"] = Ps.T @ ops.mass("minus", "value", "minus", "value") @ Ps
        B = Ps.T @ ops.mass("minus", "d", "main", "value") @ Pu
        E["sigma", "u"] = B
        E["u", "sigma"] = B.T
    fields.append("u")
    sizes["u"] = Pu.shape[1]
    if afw.k < 2:
        E["u", "u"] = -(Pu.T @ ops.mass("main", "d", "main", "d") @ Pu)
    rhs = {"u": -(Pu.T @ ops.load(f))}
    prol = {"u": Pu}
    if afw.minus is not None:
        prol["sigma"] = afw.minus.prolongation
    if afw.k == 0:
        fields.append("mean")
        sizes["mean"] = 1
        m = sp.csr_matrix((Pu.T @ ops.mean_row())[None, :])
        E["mean", "u"], E["u", "mean"] = m, m.T
    return _build(fields, sizes, {k: sp.csr_matrix(v) for k, v in E.items()}, rhs, "afw",
                  prolongations=prol, extras={"operators": ops})


def assemble_afw_dual(mesh, afw: AFWSpaces, f, ops: FormOperators | None = None) -> BlockSystem:
    """Conforming method for the starred problem: find xi in V^+, u in V with
    (xi, eta) + (delta eta, u) = 0 and (delta xi, v) - (delta u, delta v) = -(f, v).
    The companion field sigma = -delta u is stored in extras."""
    if not isinstance(afw, AFWSpaces) or not afw.dual:
        raise ConfigurationError("assemble_afw_dual needs starred conforming spaces")
    ops = ops or _conforming_ops(afw, None)
    Pu = afw.main.prolongation
    E, fields, sizes = {}, [], {}
    if afw.plus is not None:
        Px = afw.plus.prolongation
        fields.append("xi")
        sizes["xi"] = Px.shape[1]
        E["xi", "xi"] = Px.T @ ops.mass("plus", "value", "plus", "value") @ Px
        B = Px.T @ ops.mass("plus", "delta", "main", "value") @ Pu
        E["xi", "u"] = B
        E["u", "xi"] = B.T
    fields.append("u")
    sizes["u"] = Pu.shape[1]
    if afw.k > 0:
        E["u", "u"] = -(Pu.T @ ops.mass("main", "delta", "main", "delta") @ Pu)
    rhs = {"u": -(Pu.T @ ops.load(f))}
    prol = {"u": Pu}
    if afw.plus is not None:
        prol["xi"] = afw.plus.prolongation
    if afw.k == 0:
        fields.append("mean")
        sizes["mean"] = 1
        m = sp.csr_matrix((Pu.T @ ops.mean_row())[None, :])
        E["mean", "u"], E["u", "mean"] = m, m.T
    return _build(fields, sizes, {k: sp.csr_matrix(v) for k, v in E.items()}, rhs, "afw_dual",
                  prolongations=prol, extras={"operators": ops})


# ------------------------------------------------------------------ norms

def norm_gram(ops: FormOperators, params: PenaltyParams, field_name: str, family: str | None = None):
    """Gram matrix of the mesh dependent norm of one field.

    family 'I': sigma and u carry |||v|||^2 = ||v||^2 + ||dv||^2
    + rho^{-1} ||h^{-1/2} [tr v]||^2 over interior faces, xi the L2 norm.
    family 'II': xi and u carry ||v||^2 + ||delta v||^2
    + rho^{-1} ||h^{-1/2} [tr* v]||^2 over all faces, sigma the L2 norm.
    A check variable with coefficient e carries <|e|^{-1} ., .>, which is
    rho ||h^{1/2} .||^2 or rho^{-1} ||h^{-1/2} .||^2 depending on the regime.
    """
    family = family or params.norm_family
    mesh = ops.mesh
    space = FIELD_SPACE[field_name]
    if field_name.endswith("check") or field_name.endswith("check_star"):
        coef = {"sigma_check": params.a, "xi_check_star": params.b,
                "u_check": params.c, "u_check_star": params.d}[field_name]
        Q = ops.check(space)
        return ops.face(Q, Q, 1.0 / np.abs(coef))
    G = ops.mass(space, "value", space, "value")
    graph = {"I": ("sigma", "u"), "II": ("xi", "u")}[family]
    if field_name in graph:
        h = mesh.sizes().h_E
        T = ops.traces(space)
        if family == "I":
            G = G + ops.mass(space, "d", space, "d") + ops.face(T.jump_tr, T.jump_tr, 1.0 / (params.rho * h))
        else:
            G = G + ops.mass(space, "delta", space, "delta") + ops.face(T.jump_trs, T.jump_trs,
                                                                         1.0 / (params.rho * h))
    return G.tocsr()


def system_gram(system: BlockSystem, params: PenaltyParams, family: str | None = None):
    """Block diagonal Gram matrix of the triple norm on a system's fields."""
    ops = system.extras["operators"]
    blocks = []
    for name in system.fields:
        if name == "mean":
            blocks.append(sp.identity(1, format="csr"))
        else:
            blocks.append(norm_gram(ops, params, name, family))
    return sp.block_diag(blocks, format="csr")


def triple_norm(fields: dict, params: PenaltyParams, which: str = "I", ops: FormOperators | None = None) -> float:
    """Mesh dependent norm of a tuple of discrete fields (squares summed).

    which: 'I' for the primal norms, 'II' for the starred norms.
    """
    if ops is None:
        raise ValueError("triple_norm needs the FormOperators of the spaces")
    total = 0.0
    for name, vec in fields.items():
        if name == "mean" or vec is None:
            continue
        G = norm_gram(ops, params, name, which)
        total += float(vec @ (G @ vec))
    return float(np.sqrt(max(total, 0.0)))


def jump_contribution(ops, params, field_name, vec, which="I") -> float:
    """rho^{-1} ||h^{-1/2} [tr v]||^2 (or the starred analogue) alone."""
    h = ops.mesh.sizes().h_E
    T = ops.traces(FIELD_SPACE[field_name])
    J = T.jump_tr if which == "I" else T.jump_trs
    j = J @ vec
    return float(np.sum(ops.face_w * j * j * np.repeat(1.0 / (params.rho * h), ops.nqf)))


@dataclass
class XGProblem:
    """Convenience bundle: mesh, spaces, operators and penalties."""

    mesh: SimplicialMesh
    spaces: XGSpaces
    params: PenaltyParams

    @cached_property
    def ops(self) -> FormOperators:
        return FormOperators(self.spaces)

    def assemble(self, method: str, f, validate: bool = False) -> BlockSystem:
        return ASSEMBLERS[method](self.mesh, self.spaces, self.params, f, validate=validate, ops=self.ops)
