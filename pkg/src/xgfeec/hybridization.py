"""Static condensation of the XG method onto the interior face fluxes.

With c = 1/(4b) and d = 1/(4a) the check variables can be traded for the
fluxes u_hat* in check V^* and xi_hat* in check V^{+*}. On every cell the
fields (sigma, xi, u) then solve a small system driven by those fluxes and
f; the fluxes solve a symmetric global system coupling neighbouring faces.

Local problem on a cell T, with w = 2 on interior sides and w = 1 on
boundary sides:

    (sigma, tau) + (d tau, u)                          = <tr tau, u_hat*>^s
    (xi, eta) + <w c tr* xi, tr* eta> + (eta, du)      = <2c xi_hat*, tr* eta>
    (d sigma, v) + (xi, dv) + <w a tr* u, tr* v>       = <tr v, xi_hat*>^s
                                                         + <2a u_hat*, tr* v> - (f, v)

Global flux equations on interior faces:

    <4a u_hat*, v*>  - <tr sigma, v*>^s - <2a tr* u, v*>   = 0
    <4c xi_hat*, e*> - <tr u, e*>^s     - <2c tr* xi, e*>  = 0
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe_spaces import XGSpaces
from .xg_assembly import ConfigurationError, FormOperators, PenaltyParams, recover_checks

LOCAL_FIELDS = ("sigma", "xi", "u")
FLUX_FIELDS = ("u_hat_star", "xi_hat_star")
_FLUX_SPACE = {"u_hat_star": "check_star", "xi_hat_star": "check_plus_star"}


@dataclass
class LocalSolverFactorization:
    """Per-cell LU factors and the coupling of each cell to the fluxes."""

    dofs: list                      # global interior indices of each cell
    factors: list = field(repr=False)
    couplings: list = field(repr=False)   # dense B_T, local rows x flux columns
    flux_dofs: list = field(repr=False)   # flux columns touched by each cell


@dataclass
class CondensedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict
    hybrid: "HybridXG" = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


class HybridXG:
    """Hybridized XG method on a mesh with hybridizable penalties."""

    def __init__(self, spaces: XGSpaces, params: PenaltyParams, f, ops: FormOperators | None = None,
                 tol: float = 1e-12):
        if spaces.k == 0:
            raise ConfigurationError("hybridization needs k >= 1: the local problem for k = 0 "
                                     "has the constants in its kernel")
        if not (np.allclose(params.c * 4 * params.b, 1.0, rtol=tol, atol=0)
                and np.allclose(params.d * 4 * params.a, 1.0, rtol=tol, atol=0)):
            raise ConfigurationError("hybridization needs c = 1/(4b) and d = 1/(4a)")
        if np.any(params.a >= 0) or np.any(params.c <= 0):
            raise ConfigurationError("hybridization needs a < 0 and c > 0")
        self.spaces, self.params, self.f = spaces, params, f
        self.ops = ops = ops if ops is not None else FormOperators(spaces)
        self.mesh = spaces.mesh
        self._assemble()
        self._factorize()

    # --------------------------------------------------------------- setup
    def _side_weight(self):
        """2 on sides of interior faces, 1 on boundary sides."""
        interior = self.mesh.interior[self.mesh.cell_faces]
        return np.repeat(np.where(interior, 2.0, 1.0).ravel(), self.ops.nqf)

    def _side_form(self, A_side, B_side, coef_face):
        """Unsigned side integral sum_T <w coef A|_T, B|_T>."""
        ops = self.ops
        coef = np.repeat(coef_face[self.mesh.cell_faces].ravel(), ops.nqf)
        W = sp.diags(self._side_weight() * coef * ops.side_w)
        return (A_side.T @ W @ B_side).tocsr()

    def _side_flux(self, A_side, Q_face, coef_face):
        """Unsigned sum_T <2 coef Q, A|_T> with Q a face field."""
        ops = self.ops
        coef = np.repeat(coef_face[self.mesh.cell_faces].ravel(), ops.nqf)
        W = sp.diags(2.0 * coef * ops.side_w)
        return (A_side.T @ W @ (ops.gather @ Q_face)).tocsr()

    def _assemble(self):
        ops, p = self.ops, self.params
        has_s, has_x = ops.has("sigma"), ops.has("xi")
        self.local_fields = [n for n in LOCAL_FIELDS if ops.has(n)]
        self.flux_fields = [n for n, present in zip(FLUX_FIELDS, (has_s, has_x)) if present]
        sizes = {n: ops.dim(n) for n in self.local_fields}
        sizes.update({n: ops.space(_FLUX_SPACE[n]).dim for n in self.flux_fields})
        pos, self.blocks = 0, {}
        for n in self.local_fields + self.flux_fields:
            self.blocks[n] = slice(pos, pos + sizes[n])
            pos += sizes[n]
        self.n_local = sum(sizes[n] for n in self.local_fields)

        E = {}
        if has_s:
            Qs = ops.check("check_star")
            E["sigma", "sigma"] = ops.mass("minus", "value", "minus", "value")
            E["sigma", "u"] = ops.mass("minus", "d", "main", "value")
            E["u", "sigma"] = E["sigma", "u"].T
            E["u", "u"] = self._side_form(ops.side("main", "trs"), ops.side("main", "trs"), p.a)
            E["sigma", "u_hat_star"] = -ops.side_pair(ops.side("minus", "tr"), Qs)
            E["u", "u_hat_star"] = -self._side_flux(ops.side("main", "trs"), Qs, p.a)
            E["u_hat_star", "u_hat_star"] = ops.face(Qs, Qs, 4.0 * p.a)
        if has_x:
            Qx = ops.check("check_plus_star")
            E["xi", "xi"] = (ops.mass("plus", "value", "plus", "value")
                             + self._side_form(ops.side("plus", "trs"), ops.side("plus", "trs"), p.c))
            E["xi", "u"] = ops.mass("plus", "value", "main", "d")
            E["u", "xi"] = E["xi", "u"].T
            E["xi", "xi_hat_star"] = -self._side_flux(ops.side("plus", "trs"), Qx, p.c)
            E["u", "xi_hat_star"] = -ops.side_pair(ops.side("main", "tr"), Qx)
            E["xi_hat_star", "xi_hat_star"] = ops.face(Qx, Qx, 4.0 * p.c)
        for (r, c), M in list(E.items()):
            if r != c and (c, r) not in E:
                E[c, r] = M.T.tocsr()
        names = self.local_fields + self.flux_fields
        grid = [[E.get((r, c)) for c in names] for r in names]
        for i, n in enumerate(names):
            if grid[i][i] is None:
                grid[i][i] = sp.csr_matrix((sizes[n], sizes[n]))
        self.matrix = sp.bmat(grid, format="csr")
        self.rhs = np.zeros(pos)
        self.rhs[self.blocks["u"]] = -ops.load(self.f)

    def _factorize(self):
        ops, mesh = self.ops, self.mesh
        nl = self.n_local
        A = self.matrix[:nl, :nl].tocsr()
        B = self.matrix[:nl, nl:].tocsr()
        self.A, self.B = A, B
        self.C = self.matrix[nl:, nl:].tocsr()
        dofs, factors, couplings, fdofs = [], [], [], []
        for m in range(mesh.n_cells):
            idx = np.concatenate([self.blocks[n].start + ops.space(_space(n)).cell_dofs(m)
                                  for n in self.local_fields])
            A_T = A[idx][:, idx].toarray()
            lu, piv = sla.lu_factor(A_T)
            if np.min(np.abs(np.diag(lu))) <= 1e-13 * np.max(np.abs(np.diag(lu))):
                raise ConfigurationError(f"singular local problem on cell {m}")
            B_T = B[idx]
            cols = np.unique(B_T.indices)
            dofs.append(idx)
            factors.append((lu, piv))
            couplings.append(B_T[:, cols].toarray())
            fdofs.append(cols)
        self.local = LocalSolverFactorization(dofs, factors, couplings, fdofs)

    # -------------------------------------------------------------- public
    def local_solve(self, cell: int, fluxes, local_rhs=None) -> dict:
        """Fields on one cell for given fluxes (global flux vector).

        local_rhs defaults to the load of f on that cell.
        """
        L = self.local
        idx = L.dofs[cell]
        F = self.rhs[idx] if local_rhs is None else np.asarray(local_rhs)
        lam = np.asarray(fluxes)[L.flux_dofs[cell]]
        x = sla.lu_solve(L.factors[cell], F - L.couplings[cell] @ lam)
        out, pos = {}, 0
        for n in self.local_fields:
            size = self.ops.space(_space(n)).nloc
            out[n] = x[pos:pos + size]
            pos += size
        return out

    def condense(self) -> CondensedSystem:
        """Schur complement onto the fluxes built from the local factors."""
        L = self.local
        nf = self.matrix.shape[0] - self.n_local
        rows, cols, vals = [], [], []
        g = self.rhs[self.n_local:].copy()
        for m in range(self.mesh.n_cells):
            B_T, fd = L.couplings[m], L.flux_dofs[m]
            Z = sla.lu_solve(L.factors[m], np.column_stack([B_T, self.rhs[L.dofs[m]]]))
            S_T = B_T.T @ Z[:, :-1]
            g[fd] -= B_T.T @ Z[:, -1]
            r, c = np.meshgrid(fd, fd, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(-S_T.ravel())
        S = self.C + sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(nf, nf))
        blocks = {n: slice(self.blocks[n].start - self.n_local, self.blocks[n].stop - self.n_local)
                  for n in self.flux_fields}
        return CondensedSystem(S.tocsr(), g, blocks, self)

    def reconstruct(self, fluxes) -> dict:
        """(sigma, xi, u) from the fluxes, plus the recovered check variables."""
        out = {n: np.zeros(self.ops.dim(n)) for n in self.local_fields}
        for m in range(self.mesh.n_cells):
            loc = self.local_solve(m, fluxes)
            for n in self.local_fields:
                out[n][self.ops.space(_space(n)).cell_dofs(m)] = loc[n]
        out.update(recover_checks(self.ops, self.params, out))
        return out

    def schur_complement(self):
        """C - B^T A^{-1} B with a global sparse factorization of A."""
        lu = spla.splu(self.A.tocsc())
        X = lu.solve(self.B.toarray())
        return self.C.toarray() - self.B.T @ X

    def fluxes_from_fields(self, fields: dict) -> np.ndarray:
        """u_hat* = {tr* u} + u_check*, xi_hat* = {tr* xi} + xi_check*,
        projected onto the flux spaces."""
        ops = self.ops
        lam = np.zeros(self.matrix.shape[0] - self.n_local)
        for n in self.flux_fields:
            check = _FLUX_SPACE[n]
            Q = ops.check(check)
            if n == "u_hat_star":
                vals = ops.traces("main").avg_trs @ fields["u"] + Q @ fields["u_check_star"]
            else:
                vals = ops.traces("plus").avg_trs @ fields["xi"] + Q @ fields["xi_check_star"]
            G = ops.face(Q, Q)
            sl = slice(self.blocks[n].start - self.n_local, self.blocks[n].stop - self.n_local)
            lam[sl] = spla.spsolve(G.tocsc(), Q.T @ (ops.face_w * vals))
        return lam

    def solve(self) -> tuple[dict, np.ndarray]:
        cond = self.condense()
        lam = spla.spsolve(cond.matrix.tocsc(), cond.rhs)
        return self.reconstruct(lam), lam


def _space(field_name):
    return {"sigma": "minus", "xi": "plus", "u": "main"}[field_name]


def local_solve(hybrid: HybridXG, cell: int, fluxes, local_rhs=None) -> dict:
    return hybrid.local_solve(cell, fluxes, local_rhs)


def condense(mesh, spaces: XGSpaces, params: PenaltyParams, f) -> CondensedSystem:
    if spaces.mesh is not mesh:
        raise ValueError("spaces live on a different mesh")
    return HybridXG(spaces, params, f).condense()


def reconstruct(condensed: CondensedSystem, fluxes) -> dict:
    return condensed.hybrid.reconstruct(fluxes)
