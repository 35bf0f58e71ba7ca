"""Global finite element spaces on a SimplicialMesh.

Broken spaces carry one copy of a local basis per cell. Conforming spaces
are subspaces of broken ones, described by a sparse prolongation matrix
whose columns are the nodal basis functions of the standard FEEC degrees of
freedom |g|^{-1} int_g tr_g w ^ mu. Check spaces hold polynomials on faces.

Face forms are represented by scalar proxies along the face tangent of the
mesh: the value for 0-forms, the coefficient of the unit length form for
1-forms. In proxy form the face Hodge star is the identity, tr of a 1-form
is w . tangent and tr(star w) is w . nu.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diff_forms import (FormSpaceSpec, LocalBasis, basis, dimension, hodge_star,
                         trace_to_face)
from .mesh_complex import SimplicialMesh
from .quadrature import interval_rule, triangle_rule

CONTINUITIES = ("broken", "conforming", "face_check", "face_check_zero_boundary")


# ------------------------------------------------------------- quadrature

class MeshQuadrature:
    """Mapped cell and face rules, shared by every space on one mesh."""

    def __init__(self, mesh: SimplicialMesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        ref, w = triangle_rule(degree)
        P = mesh.vertices[mesh.cells]  # (M, 3, 2)
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # (M, 2, 2)
        detJ = np.abs(np.linalg.det(J))
        self.cell_points = P[:, None, 0, :] + np.einsum("mij,qj->mqi", J, ref)
        self.cell_weights = detJ[:, None] * w[None, :]
        self.centers = P.mean(axis=1)
        self.h_T = mesh.sizes().h_T

        t, wt = interval_rule(degree)
        self.t = t
        ends = np.array([mesh.face_points(f) for f in range(mesh.n_faces)])
        self.face_start = ends[:, 0]
        self.face_end = ends[:, 1]
        self.h_E = mesh.face_lengths()
        self.face_points = ends[:, None, 0, :] + t[None, :, None] * (ends[:, 1] - ends[:, 0])[:, None, :]
        self.face_weights = self.h_E[:, None] * wt[None, :]

    @property
    def nq(self):
        return self.cell_points.shape[1]

    @property
    def nqf(self):
        return len(self.t)

    def scaled(self, points, cells):
        """Map physical points in the given cells to scaled coordinates."""
        return (points - self.centers[cells][..., None, :]) / self.h_T[cells][..., None, None]


@lru_cache(maxsize=64)
def mesh_quadrature(mesh, degree):
    return MeshQuadrature(mesh, degree)


# ----------------------------------------------------------- broken spaces

class BrokenSpace:
    """Discontinuous piecewise space: the local space copied on every cell."""

    continuity = "broken"

    def __init__(self, mesh: SimplicialMesh, spec: FormSpaceSpec):
        self.mesh = mesh
        self.spec = spec
        self.local = LocalBasis(spec)
        self.nloc = self.local.size
        self.dim = mesh.n_cells * self.nloc
        self.k = spec.k

    def __repr__(self):
        return f"BrokenSpace({self.spec}, dim={self.dim})"

    def cell_dofs(self, cell):
        return np.arange(cell * self.nloc, (cell + 1) * self.nloc)

    def _eval(self, quad: MeshQuadrature, points, cells, kind):
        s = quad.scaled(points, cells)
        vals = self.local.evaluate(s, kind)
        if kind != "value":
            vals = vals / quad.h_T[cells][..., None, None, None]
        return vals

    def cell_values(self, quad, kind="value"):
        """(M, nq, nloc, ncomp) values of the basis, d or delta at cell points."""
        cells = np.arange(self.mesh.n_cells)
        return self._eval(quad, quad.cell_points, cells, kind)

    def cell_matrix(self, quad, kind="value"):
        """Sparse evaluation matrix, rows (cell, point, component)."""
        vals = self.cell_values(quad, kind)
        M, nq, nb, nc = vals.shape
        rows = np.broadcast_to(np.arange(M * nq * nc).reshape(M, nq, 1, nc), vals.shape)
        cols = np.broadcast_to((np.arange(M)[:, None] * nb + np.arange(nb))[:, None, :, None], vals.shape)
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(M * nq * nc, self.dim))

    def side_traces(self, quad):
        """Proxies of tr w and tr(star w) on every (cell, local face) pair.

        Returns two arrays of shape (M, 3, nqf, nloc).
        """
        mesh = self.mesh
        faces = mesh.cell_faces
        pts = quad.face_points[faces]  # (M, 3, nqf, 2)
        vals = self._eval(quad, pts.reshape(mesh.n_cells, -1, 2), np.arange(mesh.n_cells), "value")
        vals = vals.reshape(mesh.n_cells, 3, quad.nqf, self.nloc, -1)
        tau = mesh.tangents[faces][:, :, None, None, :]
        nu = mesh.normals[faces][:, :, None, None, :]
        zero = np.zeros(vals.shape[:-1])
        if self.k == 0:
            return vals[..., 0], zero
        if self.k == 1:
            return np.sum(vals * tau, axis=-1), np.sum(vals * nu, axis=-1)
        return zero, vals[..., 0]


def _side_to_face(space: BrokenSpace, quad, side_vals, coef):
    """Combine side traces into one face-level operator.

    coef has shape (M, 3) and weights the contribution of each side.
    """
    mesh = space.mesh
    M, _, nqf, nb = side_vals.shape
    data = side_vals * coef[:, :, None, None]
    rows = mesh.cell_faces[:, :, None, None] * nqf + np.arange(nqf)[None, None, :, None]
    cols = np.arange(M)[:, None, None, None] * nb + np.arange(nb)[None, None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(mesh.n_faces * nqf, space.dim))


class TraceOperators:
    """Face-level jumps and averages of tr and tr(star) of a broken space.

    Conventions: on interior faces [.] = (+) - (-) and {.} = ((+) + (-))/2;
    on boundary faces [tr w] = 0, {tr w} = tr w, [tr star w] = tr star w,
    {tr star w} = 0.
    """

    def __init__(self, space: BrokenSpace, quad: MeshQuadrature):
        mesh = space.mesh
        self.space, self.quad = space, quad
        tr, trs = space.side_traces(quad)
        self.side_tr, self.side_trs = tr, trs
        s = mesh.cell_signs.astype(float)
        interior = ~mesh.boundary[mesh.cell_faces]
        self.jump_tr = _side_to_face(space, quad, tr, np.where(interior, s, 0.0))
        self.avg_tr = _side_to_face(space, quad, tr, np.where(interior, 0.5, 1.0))
        self.jump_trs = _side_to_face(space, quad, trs, s)
        self.avg_trs = _side_to_face(space, quad, trs, np.where(interior, 0.5, 0.0))

    def side_matrix(self, which="tr"):
        """Rows (cell, local face, point): the one-sided trace."""
        vals = self.side_tr if which == "tr" else self.side_trs
        M, _, nqf, nb = vals.shape
        rows = np.arange(M * 3 * nqf).reshape(M, 3, nqf, 1)
        cols = np.arange(M)[:, None, None, None] * nb + np.arange(nb)
        rows, cols = np.broadcast_arrays(rows, cols)
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(M * 3 * nqf, self.space.dim))


def side_gather(mesh: SimplicialMesh, nqf: int):
    """Sparse map from face-point rows to side-point rows."""
    M = mesh.n_cells
    rows = np.arange(M * 3 * nqf)
    cols = (mesh.cell_faces[:, :, None] * nqf + np.arange(nqf)).ravel()
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(M * 3 * nqf, mesh.n_faces * nqf))


# ------------------------------------------------------------ check spaces

class CheckSpace:
    """Piecewise polynomials of a given degree on faces (scalar proxies)."""

    def __init__(self, mesh: SimplicialMesh, degree: int, zero_boundary: bool = False,
                 form_degree: int | None = None):
        if degree < 0:
            raise ValueError("check degree must be >= 0")
        self.mesh = mesh
        self.degree = degree
        self.zero_boundary = zero_boundary
        self.form_degree = form_degree
        self.continuity = "face_check_zero_boundary" if zero_boundary else "face_check"
        self.faces = np.flatnonzero(mesh.interior) if zero_boundary else np.arange(mesh.n_faces)
        self.nloc = degree + 1
        self.dim = len(self.faces) * self.nloc

    def __repr__(self):
        return f"CheckSpace(degree={self.degree}, zero_boundary={self.zero_boundary}, dim={self.dim})"

    def face_dofs(self, face):
        pos = np.searchsorted(self.faces, face)
        if pos >= len(self.faces) or self.faces[pos] != face:
            return np.array([], dtype=int)
        return np.arange(pos * self.nloc, (pos + 1) * self.nloc)

    def local_values(self, t):
        """Shifted Legendre polynomials on [0, 1], shape (len(t), nloc)."""
        return np.polynomial.legendre.legvander(2 * np.asarray(t) - 1, self.degree)

    def face_matrix(self, quad: MeshQuadrature):
        nqf = quad.nqf
        vals = self.local_values(quad.t)  # (nqf, nloc)
        nf = len(self.faces)
        rows = (self.faces[:, None, None] * nqf + np.arange(nqf)[None, :, None])
        cols = np.arange(nf)[:, None, None] * self.nloc + np.arange(self.nloc)[None, None, :]
        data = np.broadcast_to(vals[None], (nf, nqf, self.nloc))
        rows, cols = np.broadcast_arrays(rows, cols)
        return sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(self.mesh.n_faces * nqf, self.dim))


# ------------------------------------------------------- conforming spaces

def _edge_test_dim(j, s, trimmed):
    """dim of P_s Lambda^j or P_s^- Lambda^j on a segment."""
    if trimmed:
        # P^-_s Lambda^0 = P_s, P^-_s Lambda^1 = P_{s-1} on a segment
        if j == 0:
            return s + 1 if s >= 0 else 0
        return s if s >= 1 else 0
    return s + 1 if s >= 0 else 0


def _cell_test_spec(k, r, family):
    """Moment space for the cell-interior functionals, or None."""
    if family == "complete":
        s, fam = r + k - 2, "trimmed"
        if k == 2 and s >= 0:
            return FormSpaceSpec(0, s, "complete")  # P^-_s Lambda^0 = P_s
        if s < 1:
            return None
    else:
        s, fam = r + k - 3, "complete"
        if s < 0:
            return None
    return FormSpaceSpec(2 - k, s, fam)


class ConformingSpace:
    """Conforming subspace of a broken space built from FEEC moments.

    With essential=True the degrees of freedom on boundary vertices and
    edges are removed, which imposes a vanishing trace on the boundary.
    For a starred spec the moments are those of the underlying space and
    the resulting coefficients are read in the starred basis.
    """

    continuity = "conforming"

    def __init__(self, mesh: SimplicialMesh, spec: FormSpaceSpec, essential: bool = False):
        self.mesh = mesh
        self.spec = spec
        self.essential = essential
        self.broken = BrokenSpace(mesh, spec)
        base = spec.base
        self.k, self.r, self.trimmed = base.k, base.r, base.family == "trimmed"
        self._base_local = LocalBasis(base)
        k, r = self.k, self.r
        self.n_vertex = 1 if k == 0 and (r >= 1) else 0
        if k > 1:
            self.n_edge = 0
        elif self.trimmed:
            self.n_edge = _edge_test_dim(1 - k, r + k - 2, trimmed=False)
        else:
            self.n_edge = _edge_test_dim(1 - k, r + k - 1, trimmed=True)
        self.cell_test = _cell_test_spec(k, r, base.family)
        self.n_cell = dimension(self.cell_test) if self.cell_test else 0
        nloc = 3 * self.n_vertex + 3 * self.n_edge + self.n_cell
        if nloc != self.broken.nloc:
            raise ValueError(f"no conforming realisation for {spec}: "
                             f"{nloc} moments for a {self.broken.nloc}-dimensional local space")
        self._cell_test_basis = LocalBasis(self.cell_test) if self.cell_test else None
        self._qdeg = 2 * r + 4
        self._build()

    # moments ---------------------------------------------------------
    def _edge_tests(self, t):
        # moments along an edge use shifted Legendre polynomials in t
        return np.polynomial.legendre.legvander(2 * t - 1, max(self.n_edge - 1, 0))[:, :self.n_edge]

    def local_moments(self, cell: int, evaluator) -> np.ndarray:
        """Apply every local functional of `cell` to a family of forms.

        evaluator(points) must return an array (..., nfun, ncomp) of
        component values of the underlying (unstarred) forms.
        Returns (nmoments, nfun) ordered vertices, edges, interior.
        """
        mesh = self.mesh
        P = mesh.vertices[mesh.cells[cell]]
        out = []
        if self.n_vertex:
            out.append(evaluator(P)[:, :, 0])  # (3, nfun)
        if self.n_edge:
            t, w = interval_rule(self._qdeg)
            q = self._edge_tests(t)  # (nq, ntest)
            for f in mesh.cell_faces[cell]:
                a, b = mesh.face_points(f)
                X = a + t[:, None] * (b - a)
                vals = evaluator(X)  # (nq, nfun, ncomp)
                if self.k == 0:
                    tr = vals[..., 0]
                else:
                    tr = vals @ mesh.tangents[f]
                out.append(np.einsum("q,qi,qf->if", w, q, tr))
        if self.n_cell:
            ref, w = triangle_rule(self._qdeg)
            J = np.column_stack([P[1] - P[0], P[2] - P[0]])
            X = P[0] + ref @ J.T
            c, h = self._centers[cell], self._h[cell]
            mu = self._cell_test_basis.evaluate((X - c) / h)  # (nq, ntest, ncomp)
            vals = evaluator(X)  # (nq, nfun, ncomp)
            if self.k == 1:
                # w ^ mu = (w1 mu2 - w2 mu1) dx ^ dy
                prod = (np.einsum("qf,qi->if", w[:, None] * vals[..., 0], mu[..., 1])
                        - np.einsum("qf,qi->if", w[:, None] * vals[..., 1], mu[..., 0]))
            else:
                prod = np.einsum("q,qfc,qic->if", w, vals, mu)
            out.append(2.0 * prod)  # reference area is 1/2
        return np.vstack(out)

    def _basis_evaluator(self, cell):
        c, h = self._centers[cell], self._h[cell]
        return lambda X: self._base_local.evaluate((X - c) / h)

    def _build(self):
        mesh = self.mesh
        self._centers = mesh.vertices[mesh.cells].mean(axis=1)
        self._h = mesh.sizes().h_T
        nv, ne, nc = self.n_vertex, self.n_edge, self.n_cell
        vb = mesh.vertex_on_boundary() if self.essential else np.zeros(mesh.n_vertices, bool)
        fb = mesh.boundary if self.essential else np.zeros(mesh.n_faces, bool)
        # global numbering: free vertices, free edges, cells
        vnum = -np.ones(mesh.n_vertices, dtype=np.int64)
        vnum[~vb] = np.arange(np.count_nonzero(~vb)) * nv if nv else -1
        offset = np.count_nonzero(~vb) * nv
        enum = -np.ones(mesh.n_faces, dtype=np.int64)
        if ne:
            enum[~fb] = offset + np.arange(np.count_nonzero(~fb)) * ne
        offset += np.count_nonzero(~fb) * ne
        cnum = offset + np.arange(mesh.n_cells) * nc
        self.dim = offset + mesh.n_cells * nc

        self.local_to_global = np.empty((mesh.n_cells, self.broken.nloc), dtype=np.int64)
        self.moment_matrices = []
        rows, cols, vals = [], [], []
        nb = self.broken.nloc
        for m in range(mesh.n_cells):
            L = self.local_moments(m, self._basis_evaluator(m))
            if np.linalg.cond(L) > 1e12:
                raise ValueError(f"moments are not unisolvent for {self.spec}")
            self.moment_matrices.append(L)
            gl = []
            for v in mesh.cells[m]:
                gl += [vnum[v] + i if vnum[v] >= 0 else -1 for i in range(nv)]
            for f in mesh.cell_faces[m]:
                gl += [enum[f] + i if enum[f] >= 0 else -1 for i in range(ne)]
            gl += list(cnum[m] + np.arange(nc))
            gl = np.array(gl, dtype=np.int64)
            self.local_to_global[m] = gl
            N = np.linalg.inv(L)  # columns: nodal basis in local coefficients
            keep = gl >= 0
            bi, ji = np.meshgrid(np.arange(nb), np.flatnonzero(keep), indexing="ij")
            rows.append((m * nb + bi).ravel())
            cols.append(gl[ji].ravel())
            vals.append(N[:, keep].ravel())
        self.prolongation = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.broken.dim, self.dim))
        self.prolongation.eliminate_zeros()
        multiplicity = np.zeros(self.dim)
        np.add.at(multiplicity, self.local_to_global[self.local_to_global >= 0], 1.0)
        self.multiplicity = multiplicity

    # operations -------------------------------------------------------
    def moments_of_broken(self, coeffs) -> np.ndarray:
        """Per-cell moment values of a broken field, shape (M, nloc)."""
        c = np.asarray(coeffs).reshape(self.mesh.n_cells, -1)
        return np.einsum("mij,mj->mi", np.array(self.moment_matrices), c)

    def interpolate(self, func) -> np.ndarray:
        """Canonical interpolant of an exact form, as broken coefficients.

        func(X) returns component values (npts, ncomp) of the k-form being
        interpolated (for a starred spec, of the starred form).
        """
        mesh = self.mesh
        if self.spec.starred:
            sign_table = _star_component_table(self.spec.k)
            g = lambda X: _apply_star(func(X), sign_table)  # noqa: E731
        else:
            g = func
        coeffs = np.empty((mesh.n_cells, self.broken.nloc))
        for m in range(mesh.n_cells):
            mom = self.local_moments(m, lambda X: g(X.reshape(-1, 2)).reshape(X.shape[:-1] + (1, -1)))[:, 0]
            coeffs[m] = np.linalg.solve(self.moment_matrices[m], mom)
        return coeffs.ravel()


def _star_component_table(k):
    """(target component index, source component index, sign) for star on
    k-forms, mapping star-of-base back to base components."""
    # the starred space holds k-forms w = star(w0) with w0 an (2-k)-form;
    # w0 = star^{-1} w = (-1)^{k(2-k)} star w
    from .diff_forms import PolyForm, components
    table = []
    comps_src = components(k)
    for i, comp in enumerate(comps_src):
        img = hodge_star(PolyForm.monomial(k, comp, (0, 0))) * (-1) ** (k * (2 - k))
        ((tcomp, _), c), = img.terms.items()
        table.append((components(2 - k).index(tcomp), i, c))
    return table


def _apply_star(vals, table):
    out = np.zeros(vals.shape[:-1] + (len(table),))
    for t, s, c in table:
        out[..., t] = c * vals[..., s]
    return out


def make_space(mesh: SimplicialMesh, spec: FormSpaceSpec | None, continuity: str = "broken",
               degree: int | None = None):
    """Factory for every supported (spec, continuity) combination.

    Face check spaces take a polynomial `degree` (and optionally a spec,
    whose r is used when degree is omitted).
    """
    if continuity == "broken":
        return BrokenSpace(mesh, spec)
    if continuity == "conforming":
        return ConformingSpace(mesh, spec)
    if continuity in ("face_check", "face_check_zero_boundary"):
        deg = degree if degree is not None else spec.r
        return CheckSpace(mesh, deg, continuity == "face_check_zero_boundary",
                          spec.k if spec is not None else None)
    raise ValueError(f"unknown continuity {continuity!r}; expected one of {CONTINUITIES}")


# -------------------------------------------------------------- traces

_REF_TRIANGLE = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1, 3)), (Fraction(1, 5), Fraction(1)))


@lru_cache(maxsize=None)
def trace_degree(spec: FormSpaceSpec, starred_trace: bool) -> int:
    """Largest polynomial degree of tr w (or tr star w) over the basis.

    Computed exactly on a generic rational triangle. Returns -1 when the
    trace vanishes identically.
    """
    deg = -1
    for f in basis(spec):
        g = hodge_star(f) if starred_trace else f
        if g.k > 1:
            continue
        for i, j in ((0, 1), (1, 2), (0, 2)):
            tr = trace_to_face(g, _REF_TRIANGLE, (_REF_TRIANGLE[i], _REF_TRIANGLE[j]))
            deg = max(deg, len(tr.coeffs) - 1)
    return deg


@dataclass
class FaceTraces:
    """Jump and average proxies of a broken field on one face, sampled at
    the face quadrature points (parameter t along the face tangent)."""

    t: np.ndarray
    jump: np.ndarray
    average: np.ndarray
    jump_star: np.ndarray
    average_star: np.ndarray


def jump_and_average(space: BrokenSpace, coeffs, face: int, quad: MeshQuadrature | None = None):
    quad = quad or mesh_quadrature(space.mesh, 2 * space.spec.r + 2)
    ops = TraceOperators(space, quad)
    rows = slice(face * quad.nqf, (face + 1) * quad.nqf)
    c = np.asarray(coeffs)
    return FaceTraces(quad.t.copy(), ops.jump_tr[rows] @ c, ops.avg_tr[rows] @ c,
                      ops.jump_trs[rows] @ c, ops.avg_trs[rows] @ c)


def conforming_average(space: ConformingSpace, coeffs) -> np.ndarray:
    """Average the moments of a broken field over the cells sharing each
    entity and return the conforming field as broken coefficients."""
    mom = space.moments_of_broken(coeffs)
    acc = np.zeros(space.dim)
    l2g = space.local_to_global
    keep = l2g >= 0
    np.add.at(acc, l2g[keep], mom[keep])
    return space.prolongation @ (acc / space.multiplicity)


# ---------------------------------------------------------- XG space sets

@dataclass
class XGSpaces:
    """The three broken spaces and four check spaces of the XG method.

    Absent spaces (k = 0 has no sigma, k = n no xi) are None.
    """

    k: int
    minus: BrokenSpace | None
    main: BrokenSpace
    plus: BrokenSpace | None
    check_minus: CheckSpace | None       # sigma_check, all faces
    check: CheckSpace | None             # u_check, all faces
    check_star: CheckSpace | None        # u_check_star, interior faces
    check_plus_star: CheckSpace | None   # xi_check_star, interior faces

    @property
    def mesh(self):
        return self.main.mesh

    @cached_property
    def quad_degree(self) -> int:
        r = max(s.spec.r for s in (self.minus, self.main, self.plus) if s is not None)
        return 2 * r + 2


def xg_space_specs(k: int, degree: int, family: str = "trimmed", dual: bool = False):
    """(V^-, V, V^+) specs for form degree k and order parameter degree.

    The expected convergence order in the triple norms is degree + 1, except
    for the complete family at k = 1 where d V lands in P_{r-1} and the
    order is degree (see expected_order).
    complete: (P_{r+1}, P_r, P_{r-1}), with P_{r+1}, P_r at k = 0.
    trimmed:  (P^-_{r+1}, P^-_{r+1}, P^-_{r+1}).
    dual=True returns the Hodge star of the choice for n - k, so that the
    starred conforming subspaces form a stable pair.
    """
    r = degree
    if dual:
        m, v, p = xg_space_specs(2 - k, degree, family, dual=False)
        star = lambda s: None if s is None else FormSpaceSpec(2 - s.k, s.r, s.family, True)  # noqa: E731
        return star(p), star(v), star(m)
    if family == "complete":
        if k == 0:
            return None, FormSpaceSpec(0, r + 1), FormSpaceSpec(1, r)
        if k == 1:
            if r < 1:
                raise ValueError("complete family for k=1 needs degree >= 1")
            return FormSpaceSpec(0, r + 1), FormSpaceSpec(1, r), FormSpaceSpec(2, r - 1)
        return FormSpaceSpec(1, r + 1), FormSpaceSpec(2, r), None
    if family == "trimmed":
        spec = lambda j: FormSpaceSpec(j, r + 1, "trimmed") if 0 <= j <= 2 else None  # noqa: E731
        return spec(k - 1), spec(k), spec(k + 1)
    raise ValueError(f"unknown family {family!r}")


def expected_order(k: int, degree: int, family: str = "trimmed") -> int:
    """Approximation order of the chosen spaces in the triple norms."""
    if family == "complete" and k == 1:
        return degree
    return degree + 1


def check_degrees(minus, main, plus):
    """Smallest check degrees containing every trace the method needs."""
    def td(s, star):
        return -1 if s is None else trace_degree(s, star)
    d_cm = max(td(main, True), td(minus, False))    # sigma_check ~ a[tr* u]
    d_c = max(td(main, False), td(plus, True))      # u_check ~ c[tr* xi]
    d_cs = max(td(main, True), td(minus, False))    # u_check_star ~ d[tr sigma]
    d_cps = max(td(plus, True), td(main, False))    # xi_check_star ~ b[tr u]
    return d_cm, d_c, d_cs, d_cps


def make_xg_spaces(mesh: SimplicialMesh, k: int, degree: int = 0, family: str = "trimmed",
                   dual: bool = False, specs=None) -> XGSpaces:
    minus_s, main_s, plus_s = specs if specs is not None else xg_space_specs(k, degree, family, dual)
    minus = BrokenSpace(mesh, minus_s) if minus_s else None
    plus = BrokenSpace(mesh, plus_s) if plus_s else None
    main = BrokenSpace(mesh, main_s)
    d_cm, d_c, d_cs, d_cps = check_degrees(minus_s, main_s, plus_s)
    # a check space exists when the trace it mirrors can be nonzero
    has_sigma = minus is not None
    has_xi = plus is not None
    return XGSpaces(
        k=k, minus=minus, main=main, plus=plus,
        check_minus=CheckSpace(mesh, d_cm, False, k - 1) if has_sigma and d_cm >= 0 else None,
        check=CheckSpace(mesh, d_c, False, k) if has_xi and d_c >= 0 else None,
        check_star=CheckSpace(mesh, d_cs, True, 2 - k) if has_sigma and d_cs >= 0 else None,
        check_plus_star=CheckSpace(mesh, d_cps, True, 1 - k) if has_xi and d_cps >= 0 else None,
    )


# -------------------------------------------------------- inclusion report

def _face_projection_residual(check: CheckSpace, quad, values, faces):
    """Relative L2 distance of face values to the check space on `faces`."""
    nqf = quad.nqf
    Q = check.local_values(quad.t)
    w = quad.face_weights
    num = den = 0.0
    for f in faces:
        g = values[f * nqf:(f + 1) * nqf]
        W = w[f]
        coef = np.linalg.lstsq(Q * np.sqrt(W)[:, None], g * np.sqrt(W), rcond=None)[0]
        r = g - Q @ coef
        num += W @ r ** 2
        den += W @ g ** 2
    return np.sqrt(num / den) if den > 0 else 0.0


def check_inclusions(spaces: XGSpaces, samples: int = 3, tol: float = 1e-10, seed: int = 0) -> dict:
    """Rank-style tests of the structural hypotheses of the XG method.

    Keys:
      trace_star_V_in_check_minus       tr* V  in star check V^-
      trace_V_in_check_plus_star        tr V   in check V^{+*}  (interior)
      trace_star_Vplus_in_check         tr* V^+ in star check V
      trace_Vminus_in_check_star        tr V^- in check V^*  (interior)
      d_V_in_Vplus                      d_h V in V^+
      hybridizable                      tr* V in check V^*, tr* V^+ in
                                        check V^{+*}, both zero on the boundary
    """
    mesh = spaces.mesh
    quad = mesh_quadrature(mesh, spaces.quad_degree)
    rng = np.random.default_rng(seed)
    interior = np.flatnonzero(mesh.interior)
    allf = np.arange(mesh.n_faces)
    report = {}

    def sides(space):
        ops = TraceOperators(space, quad)
        return ops.side_matrix("tr"), ops.side_matrix("trs")

    def one_sided(space, which, faces, check):
        if space is None:
            return True
        if check is None:
            return False
        tr, trs = sides(space)
        M = tr if which == "tr" else trs
        nqf = quad.nqf
        worst = 0.0
        for _ in range(samples):
            v = M @ rng.standard_normal(space.dim)
            v = v.reshape(mesh.n_cells, 3, nqf)
            for lf in range(3):
                vals = np.zeros(mesh.n_faces * nqf)
                f_of = mesh.cell_faces[:, lf]
                for m in range(mesh.n_cells):
                    vals[f_of[m] * nqf:(f_of[m] + 1) * nqf] = v[m, lf]
                sel = np.intersect1d(f_of, faces)
                worst = max(worst, _face_projection_residual(check, quad, vals, sel))
        return worst < tol

    main, minus, plus = spaces.main, spaces.minus, spaces.plus
    report["trace_star_V_in_check_minus"] = (
        minus is None or one_sided(main, "trs", allf, spaces.check_minus))
    report["trace_V_in_check_plus_star"] = (
        plus is None or one_sided(main, "tr", interior, spaces.check_plus_star))
    report["trace_star_Vplus_in_check"] = one_sided(plus, "trs", allf, spaces.check)
    report["trace_Vminus_in_check_star"] = one_sided(minus, "tr", interior, spaces.check_star)

    if plus is None:
        report["d_V_in_Vplus"] = True
    else:
        dv = main.cell_matrix(quad, "d")
        P = plus.cell_matrix(quad, "value")
        W = sp.diags(np.repeat(quad.cell_weights.ravel(), plus.local.ncomp))
        Mp = (P.T @ W @ P).tocsc()
        worst = 0.0
        for _ in range(samples):
            g = dv @ rng.standard_normal(main.dim)
            coef = spla.spsolve(Mp, P.T @ (W @ g))
            r = g - P @ coef
            den = np.sqrt(g @ (W @ g))
            worst = max(worst, np.sqrt(r @ (W @ r)) / den if den > 0 else 0.0)
        report["d_V_in_Vplus"] = worst < 1e-9

    hyb = True
    cs = spaces.check_star
    if minus is not None:
        hyb &= cs is not None and cs.zero_boundary and one_sided(main, "trs", interior, cs)
    cps = spaces.check_plus_star
    if plus is not None:
        hyb &= cps is not None and cps.zero_boundary and one_sided(plus, "trs", interior, cps)
    report["hybridizable"] = hyb
    return {key: bool(val) for key, val in report.items()}
