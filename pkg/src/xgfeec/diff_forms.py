"""Polynomial differential forms in the plane.

A k-form is stored as a map (component, exponent) -> coefficient where the
component is an increasing index tuple (0 = dx, 1 = dy) and the exponent is
a pair (i, j) standing for x**i * y**j. Coefficients are whatever numeric
type the caller supplies; Fractions keep every operation exact.

Forms restricted to an edge are FaceForms: polynomials in the edge
parameter t in [0, 1] running from the first to the second endpoint. A face
1-form q(t) dt is stored by q.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .quadrature import interval_rule, triangle_rule

N_DIM = 2


def components(k: int, n: int = N_DIM) -> list[tuple[int, ...]]:
    if k < 0 or k > n:
        return []
    return list(combinations(range(n), k))


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


class PolyForm:
    """Polynomial k-form on R^n with exact or float coefficients."""

    __slots__ = ("k", "n", "terms")

    def __init__(self, k: int, terms=None, n: int = N_DIM):
        self.k = k
        self.n = n
        self.terms = {}
        for (comp, mono), c in (terms or {}).items():
            comp, mono = tuple(comp), tuple(mono)
            if len(comp) != k or list(comp) != sorted(set(comp)):
                raise ValueError(f"bad component {comp} for a {k}-form")
            if c != 0:
                self.terms[(comp, mono)] = self.terms.get((comp, mono), 0) + c
        self.terms = {key: c for key, c in self.terms.items() if c != 0}

    @classmethod
    def monomial(cls, k, comp, mono, coeff=1, n=N_DIM):
        return cls(k, {(tuple(comp), tuple(mono)): coeff}, n)

    @classmethod
    def scalar(cls, coeffs: dict, k=0, n=N_DIM):
        comp = tuple(range(n)) if k == n else ()
        return cls(k, {(comp, m): c for m, c in coeffs.items()}, n)

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(m) for _, m in self.terms), default=-1)

    def _check(self, other):
        if (self.k, self.n) != (other.k, other.n):
            raise ValueError(f"degree mismatch: {self.k}-form vs {other.k}-form")

    def __add__(self, other):
        self._check(other)
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out.get(key, 0) + c
        return PolyForm(self.k, out, self.n)

    def __neg__(self):
        return PolyForm(self.k, {key: -c for key, c in self.terms.items()}, self.n)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        return PolyForm(self.k, {key: c * s for key, c in self.terms.items()}, self.n)

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, PolyForm) and (self.k, self.n) == (other.k, other.n)
                and (self - other).is_zero())

    def __hash__(self):
        return hash((self.k, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return f"PolyForm({self.k}, 0)"
        names = "xyzw"
        parts = []
        for (comp, mono), c in sorted(self.terms.items()):
            poly = "*".join(f"{names[i]}^{p}" if p > 1 else names[i]
                            for i, p in enumerate(mono) if p) or "1"
            dx = "^".join(f"d{names[i]}" for i in comp)
            parts.append(f"{c}*{poly}" + (f" {dx}" if dx else ""))
        return f"PolyForm({self.k}, " + " + ".join(parts) + ")"

    def evaluate(self, points) -> np.ndarray:
        """Component values at points, shape (npts, n choose k)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        comps = components(self.k, self.n)
        out = np.zeros((len(pts), len(comps)))
        index = {c: i for i, c in enumerate(comps)}
        for (comp, mono), c in self.terms.items():
            out[:, index[comp]] += float(c) * np.prod(pts ** np.array(mono), axis=1)
        return out


def _shift(mono, i, step):
    m = list(mono)
    m[i] += step
    return tuple(m)


def exterior_derivative(w: PolyForm) -> PolyForm:
    """d w. A top-degree form maps to the empty (n+1)-form."""
    out = {}
    for (comp, mono), c in w.terms.items():
        for i in range(w.n):
            if mono[i] == 0 or i in comp:
                continue
            sign = (-1) ** sum(1 for a in comp if a < i)
            key = (tuple(sorted(comp + (i,))), _shift(mono, i, -1))
            out[key] = out.get(key, 0) + sign * mono[i] * c
    return PolyForm(w.k + 1, out, w.n)


def hodge_star(w: PolyForm) -> PolyForm:
    out = {}
    for (comp, mono), c in w.terms.items():
        rest = tuple(i for i in range(w.n) if i not in comp)
        key = (rest, mono)
        out[key] = out.get(key, 0) + _perm_sign(comp + rest) * c
    return PolyForm(w.n - w.k, out, w.n)


def inverse_hodge_star(w: PolyForm) -> PolyForm:
    return hodge_star(w) * (-1) ** (w.k * (w.n - w.k))


def coderivative(w: PolyForm) -> PolyForm:
    """delta w defined through  star(delta w) = (-1)^k d(star w).
    A 0-form maps to the empty (-1)-form."""
    if w.k == 0:
        return PolyForm(-1, {}, w.n)
    return inverse_hodge_star(exterior_derivative(hodge_star(w))) * (-1) ** w.k


def interior_product(w: PolyForm) -> PolyForm:
    """Koszul operator: contraction with the position field x."""
    if w.k == 0:
        raise ValueError("the Koszul operator needs a form of degree >= 1")
    out = {}
    for (comp, mono), c in w.terms.items():
        for j, i in enumerate(comp):
            key = (comp[:j] + comp[j + 1:], _shift(mono, i, 1))
            out[key] = out.get(key, 0) + (-1) ** j * c
    return PolyForm(w.k - 1, out, w.n)


# ---------------------------------------------------------------- face forms

@dataclass(frozen=True)
class FaceForm:
    """Polynomial form on an oriented segment of given length.

    degree 0: the function p(t); degree 1: the form p(t) dt. `coeffs[i]` is
    the coefficient of t**i. A 2-form has no trace on an edge; its trace is
    reported as the empty FaceForm of degree 2.
    """

    degree: int
    coeffs: tuple
    length: float

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return sum(float(c) * t ** i for i, c in enumerate(self.coeffs)) + 0 * t

    def derivative(self) -> "FaceForm":
        """Edge exterior derivative of a 0-form."""
        if self.degree != 0:
            raise ValueError("edge derivative needs a 0-form")
        return FaceForm(1, tuple(i * c for i, c in enumerate(self.coeffs))[1:],
                        self.length)


def _poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1) if p and q else []
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def _poly_pow(p, e):
    out = [1]
    for _ in range(e):
        out = _poly_mul(out, p)
    return out


def _poly_add(p, q):
    out = [0] * max(len(p), len(q))
    for i, a in enumerate(p):
        out[i] += a
    for i, b in enumerate(q):
        out[i] += b
    return out


def _trim(p):
    p = list(p)
    while p and p[-1] == 0:
        p.pop()
    return tuple(p)


def trace_to_face(w: PolyForm, cell, face) -> FaceForm:
    """Pullback of w to the oriented segment face = (a, b) of the triangle.

    The segment is parameterised by x(t) = a + t (b - a).
    """
    cell = [tuple(p) for p in cell]
    a, b = (tuple(p) for p in face)
    tol = 1e-12

    def on(p):
        return any(max(abs(float(p[0]) - float(q[0])), abs(float(p[1]) - float(q[1]))) < tol
                   for q in cell)

    if not (on(a) and on(b)) or max(abs(float(a[0]) - float(b[0])), abs(float(a[1]) - float(b[1]))) < tol:
        raise ValueError("segment is not an edge of the cell")
    e = (b[0] - a[0], b[1] - a[1])
    length = float(np.hypot(float(e[0]), float(e[1])))
    if w.k >= 2:
        return FaceForm(w.k, (), length)
    lines = [[a[i], e[i]] for i in range(2)]
    out = []
    for (comp, mono), c in w.terms.items():
        poly = [c]
        for i in range(2):
            poly = _poly_mul(poly, _poly_pow(lines[i], mono[i]))
        if w.k == 1:
            poly = [q * e[comp[0]] for q in poly]
        out = _poly_add(out, poly)
    return FaceForm(w.k, _trim(out), length)


def face_hodge_star(eta: FaceForm) -> FaceForm:
    """Star on a 1D face: 0-forms gain the unit length form, 1-forms lose it.
    The unit length form along the segment is length * dt."""
    if eta.degree == 0:
        return FaceForm(1, tuple(c * eta.length for c in eta.coeffs), eta.length)
    if eta.degree == 1:
        return FaceForm(0, tuple(c / eta.length for c in eta.coeffs), eta.length)
    raise ValueError("face forms have degree 0 or 1")


def _integrate01(p) -> float:
    return float(sum(Fraction(1, i + 1) * c if isinstance(c, (int, Fraction)) else c / (i + 1)
                     for i, c in enumerate(p)))


def face_inner_product(e1: FaceForm, e2: FaceForm) -> float:
    """L2 product of two face forms of equal degree."""
    if e1.degree != e2.degree:
        raise ValueError("degree mismatch")
    val = _integrate01(_poly_mul(list(e1.coeffs), list(e2.coeffs)))
    return val * e1.length if e1.degree == 0 else val / e1.length


def face_wedge_integral(e0: FaceForm, e1: FaceForm) -> float:
    """Integral over the oriented segment of a 0-form wedge a 1-form."""
    if (e0.degree, e1.degree) != (0, 1):
        raise ValueError("expected a 0-form and a 1-form")
    return _integrate01(_poly_mul(list(e0.coeffs), list(e1.coeffs)))


# ----------------------------------------------------------- cell integrals

def inner_product(w: PolyForm, m: PolyForm, cell) -> float:
    """(w, m)_T by a triangle rule exact for the product degree."""
    if w.k != m.k:
        raise ValueError(f"degree mismatch: {w.k}-form vs {m.k}-form")
    cell = np.asarray(cell, dtype=float)
    pts, wts = triangle_rule(max(w.degree, 0) + max(m.degree, 0) + 2)
    J = np.column_stack([cell[1] - cell[0], cell[2] - cell[0]])
    X = cell[0] + pts @ J.T
    val = np.sum(w.evaluate(X) * m.evaluate(X), axis=1)
    return float(abs(np.linalg.det(J)) * wts @ val)


# ------------------------------------------------------------------- spaces

@dataclass(frozen=True)
class FormSpaceSpec:
    """P_r Lambda^k (family 'complete') or P_r^- Lambda^k ('trimmed').

    starred=True denotes the image under the Hodge star of the
    corresponding space of (n-k)-forms.
    """

    k: int
    r: int
    family: str = "complete"
    starred: bool = False
    n: int = N_DIM

    def __post_init__(self):
        if self.family not in ("complete", "trimmed"):
            raise ValueError(f"unknown family {self.family!r}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"form degree {self.k} outside [0, {self.n}]")
        if self.family == "trimmed" and self.r < 1:
            raise ValueError("trimmed spaces need r >= 1")
        if self.r < 0:
            raise ValueError("polynomial degree must be >= 0")

    @property
    def base(self) -> "FormSpaceSpec":
        """The unstarred space this one is the star of."""
        if not self.starred:
            return self
        return FormSpaceSpec(self.n - self.k, self.r, self.family, False, self.n)

    @property
    def poly_degree(self) -> int:
        """Largest total polynomial degree of the coefficients."""
        return self.r


def dimension(spec: FormSpaceSpec) -> int:
    n, k, r = spec.n, spec.base.k, spec.r
    if spec.family == "complete":
        return comb(n + r, r) * comb(n, k)
    return comb(r + n, r + k) * comb(r + k - 1, k)


def _monomials(n, deg, exact=None):
    out = []
    for total in range(deg + 1) if exact is None else [exact]:
        for i in range(total, -1, -1):
            out.append((i, total - i) if n == 2 else None)
    return out


def _independent(forms):
    """Greedy subset of linearly independent forms (exact coefficients)."""
    keys = sorted({key for f in forms for key in f.terms})
    index = {key: i for i, key in enumerate(keys)}
    rows, chosen = [], []
    for f in forms:
        v = [Fraction(0)] * len(keys)
        for key, c in f.terms.items():
            v[index[key]] = Fraction(c)
        for piv, row in rows:
            if v[piv] != 0:
                s = v[piv] / row[piv]
                v = [a - s * b for a, b in zip(v, row)]
        nz = next((i for i, a in enumerate(v) if a != 0), None)
        if nz is not None:
            rows.append((nz, v))
            chosen.append(f)
    return chosen


@lru_cache(maxsize=None)
def _basis_cached(spec: FormSpaceSpec):
    if spec.starred:
        return tuple(hodge_star(f) for f in _basis_cached(spec.base))
    n, k, r = spec.n, spec.k, spec.r
    if spec.family == "complete":
        return tuple(PolyForm.monomial(k, comp, m, 1, n)
                     for comp in components(k, n) for m in _monomials(n, r))
    lower = list(_basis_cached(FormSpaceSpec(k, r - 1, "complete", False, n)))
    koszul = [interior_product(PolyForm.monomial(k + 1, comp, m, 1, n))
              for comp in components(k + 1, n) for m in _monomials(n, r - 1, exact=r - 1)]
    return tuple(_independent(lower + koszul))


def basis(spec: FormSpaceSpec) -> list[PolyForm]:
    """Basis of the space with exact integer coefficients."""
    return list(_basis_cached(spec))


def rank(forms) -> int:
    return len(_independent(list(forms)))


# -------------------------------------------------------- numeric evaluation

class LocalBasis:
    """Float tables for evaluating a basis and its d, delta at points.

    Basis functions live in scaled coordinates s = (x - center) / h, so the
    physical derivative picks up a factor 1/h.
    """

    def __init__(self, spec: FormSpaceSpec):
        self.spec = spec
        self.k = spec.k
        self.forms = basis(spec)
        self.size = len(self.forms)
        self.degree = max(f.degree for f in self.forms)
        self.monos = _monomials(spec.n, max(self.degree, 0))
        self.ncomp = comb(spec.n, spec.k)
        self.value = self._table(self.forms, spec.k)
        self.d = self._table([exterior_derivative(f) for f in self.forms], spec.k + 1)
        self.delta = self._table([coderivative(f) for f in self.forms], spec.k - 1)

    def _table(self, forms, k):
        comps = components(k)
        cidx = {c: i for i, c in enumerate(comps)}
        midx = {m: i for i, m in enumerate(self.monos)}
        out = np.zeros((len(forms), len(comps), len(self.monos)))
        for b, f in enumerate(forms):
            for (comp, mono), c in f.terms.items():
                out[b, cidx[comp], midx[mono]] += float(c)
        return out

    def monomial_values(self, s: np.ndarray) -> np.ndarray:
        """s has shape (..., 2); returns (..., nmono)."""
        ex = np.array(self.monos)
        return np.prod(s[..., None, :] ** ex, axis=-1)

    def evaluate(self, s: np.ndarray, kind: str = "value") -> np.ndarray:
        """Values in scaled coordinates, shape (..., size, ncomp)."""
        table = getattr(self, kind)
        return np.einsum("bcm,...m->...bc", table, self.monomial_values(s))
