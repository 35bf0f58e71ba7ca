"""Direct solves of block systems and discrete inf-sup constants."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    def __init__(self, message, rank_deficiency=None):
        super().__init__(message)
        self.rank_deficiency = rank_deficiency


@dataclass
class SolveReport:
    solution: dict
    x: np.ndarray
    residual: float
    success: bool
    nnz: int
    fill: float
    refinements: int
    wall_s: float
    message: str = ""


def _rank_deficiency(K, tol=1e-10) -> int:
    """Numerical nullity; dense, so only attempted for small systems."""
    if K.shape[0] > 4000:
        return -1
    s = np.linalg.svd(K.toarray(), compute_uv=False)
    return int(np.sum(s <= tol * s[0])) if s.size else 0


def solve_matrix(K, b, max_refine: int = 5):
    """LU solve with iterative refinement. Returns (x, residual, stats)."""
    K = sp.csc_matrix(K)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, {"nnz": K.nnz, "fill": 1.0, "refinements": 0}
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}", _rank_deficiency(K)) from exc
    x = lu.solve(b)
    res = np.linalg.norm(K @ x - b) / bnorm
    it = 0
    while res > RESIDUAL_TOL * 1e-2 and it < max_refine:
        x_new = x + lu.solve(b - K @ x)
        res_new = np.linalg.norm(K @ x_new - b) / bnorm
        it += 1
        if not res_new < res:
            break
        x, res = x_new, res_new
    fill = (lu.L.nnz + lu.U.nnz) / max(K.nnz, 1)
    return x, float(res), {"nnz": K.nnz, "fill": float(fill), "refinements": it}


def solve(system, max_refine: int = 5) -> SolveReport:
    """Factorize the symmetric indefinite matrix and refine the solution."""
    t0 = time.perf_counter()
    x, res, stats = solve_matrix(system.matrix, system.rhs, max_refine)
    ok = bool(np.isfinite(res) and res <= RESIDUAL_TOL)
    msg = "" if ok else f"relative residual {res:.3e} above {RESIDUAL_TOL:g}"
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution", _rank_deficiency(sp.csr_matrix(system.matrix)))
    return SolveReport(system.split(x), x, res, ok, stats["nnz"], stats["fill"],
                       stats["refinements"], time.perf_counter() - t0, msg)


@dataclass
class InfSupEstimate:
    gamma_h: float
    vector: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    gram_condition: float = 0.0


def infsup_estimate(K, M, singular_tol: float = 1e-10) -> InfSupEstimate:
    """min |mu| over K x = mu M x, by dense symmetric reduction.

    M must be symmetric positive definite; K symmetric.
    """
    K = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("norm Gram matrix is not positive definite") from exc
    Linv_K = sla.solve_triangular(L, K, lower=True)
    A = sla.solve_triangular(L, Linv_K.T, lower=True)
    A = 0.5 * (A + A.T)
    mu, V = np.linalg.eigh(A)
    i = int(np.argmin(np.abs(mu)))
    gamma = float(abs(mu[i]))
    if gamma <= singular_tol * max(np.abs(mu).max(), 1.0):
        gamma = 0.0
    x = sla.solve_triangular(L.T, V[:, i], lower=False)
    dM = np.diag(L) ** 2
    return InfSupEstimate(gamma, x, mu, float(dM.max() / dM.min()))
