from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xgfeec.diff_forms import (FaceForm, FormSpaceSpec, PolyForm, basis, coderivative, dimension,
                               exterior_derivative, face_hodge_star, face_inner_product,
                               face_wedge_integral, hodge_star, inner_product, interior_product,
                               rank, trace_to_face)

DX, DY, DXDY = (0,), (1,), (0, 1)
REF = [(0, 0), (1, 0), (0, 1)]


def form(k, terms):
    return PolyForm(k, terms)


def one():
    return form(0, {((), (0, 0)): 1})


@pytest.mark.parametrize("spec, n", [(FormSpaceSpec(0, 1), 3), (FormSpaceSpec(1, 1, "trimmed"), 3),
                                     (FormSpaceSpec(2, 0), 1), (FormSpaceSpec(1, 1), 6),
                                     (FormSpaceSpec(1, 2, "trimmed"), 8)])
def test_basis_sizes(spec, n):
    b = basis(spec)
    assert len(b) == n == dimension(spec)
    assert rank(b) == n


def test_d_examples():
    assert exterior_derivative(form(1, {(DY, (1, 0)): 1})) == form(2, {(DXDY, (0, 0)): 1})
    assert exterior_derivative(form(0, {((), (2, 0)): 1})) == form(1, {(DX, (1, 0)): 2})


def test_star_examples():
    dx, dy = form(1, {(DX, (0, 0)): 1}), form(1, {(DY, (0, 0)): 1})
    assert hodge_star(dx) == dy
    assert hodge_star(dy) == -dx
    assert hodge_star(hodge_star(dx)) == -dx
    area = form(2, {(DXDY, (0, 0)): 1})
    assert hodge_star(one()) == area
    assert hodge_star(area) == one()


def test_coderivative_examples():
    assert coderivative(form(1, {(DX, (1, 0)): 1})) == form(0, {((), (0, 0)): -1})
    assert coderivative(form(1, {(DX, (0, 0)): 1})).is_zero()


def test_koszul_examples():
    area = form(2, {(DXDY, (0, 0)): 1})
    assert interior_product(area) == form(1, {(DY, (1, 0)): 1, (DX, (0, 1)): -1})
    assert interior_product(interior_product(area)).is_zero()


def test_trace_examples():
    assert trace_to_face(one(), REF, ((0, 0), (1, 0))).coeffs == (1,)
    dx = form(1, {(DX, (0, 0)): 1})
    assert trace_to_face(dx, REF, ((0, 0), (0, 1))).coeffs == ()


def test_trace_rejects_non_edge():
    with pytest.raises(ValueError):
        trace_to_face(one(), REF, ((0, 0), (2, 2)))


def test_face_star_involution():
    e = FaceForm(0, (1,), 2.0)
    s = face_hodge_star(e)
    assert s.degree == 1 and s.coeffs == (2.0,)
    assert face_hodge_star(s).coeffs == (1.0,)


def test_inner_products():
    dx, dy = form(1, {(DX, (0, 0)): 1}), form(1, {(DY, (0, 0)): 1})
    tri = [(0.3, 0.1), (2.0, 0.4), (0.7, 1.9)]
    assert abs(inner_product(dx, dy, tri)) < 1e-15
    area = 0.5 * abs((2.0 - 0.3) * (1.9 - 0.1) - (0.4 - 0.1) * (0.7 - 0.3))
    assert inner_product(one(), one(), tri) == pytest.approx(area, rel=1e-14)
    xdx = form(1, {(DX, (1, 0)): 1})
    assert inner_product(xdx, xdx, REF) == pytest.approx(1 / 12, rel=1e-14)


def test_degree_mismatch_errors():
    with pytest.raises(ValueError):
        inner_product(one(), form(1, {(DX, (0, 0)): 1}), REF)
    with pytest.raises(ValueError):
        FormSpaceSpec(1, 0, "trimmed")


coef = st.integers(-5, 5)


def poly0(deg):
    keys = [(i, t - i) for t in range(deg + 1) for i in range(t + 1)]
    return st.lists(coef, min_size=len(keys), max_size=len(keys)).map(
        lambda cs: form(0, {((), m): c for m, c in zip(keys, cs)}))


def poly(k, deg):
    comps = {0: [()], 1: [DX, DY], 2: [DXDY]}[k]
    keys = [(c, (i, t - i)) for c in comps for t in range(deg + 1) for i in range(t + 1)]
    return st.lists(coef, min_size=len(keys), max_size=len(keys)).map(
        lambda cs: form(k, dict(zip(keys, cs))))


@settings(max_examples=50, deadline=None)
@given(poly0(3))
def test_dd_zero(p):
    assert exterior_derivative(exterior_derivative(p)).is_zero()


@settings(max_examples=50, deadline=None)
@given(poly(2, 2))
def test_delta_delta_zero(w):
    assert coderivative(coderivative(w)).is_zero()


@settings(max_examples=30, deadline=None)
@given(poly(1, 2))
def test_star_star_sign(w):
    assert hodge_star(hodge_star(w)) == -w


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.integers(0, 3), st.integers(0, 3))
def test_homotopy_formula_on_monomials(k, i, j):
    comps = {0: [()], 1: [DX, DY], 2: [DXDY]}[k]
    for c in comps:
        w = form(k, {(c, (i, j)): 1})
        lhs = PolyForm(k)
        if k < 2:
            lhs = lhs + interior_product(exterior_derivative(w))
        if k > 0:
            lhs = lhs + exterior_derivative(interior_product(w))
        assert lhs == w * (i + j + k)


@settings(max_examples=20, deadline=None)
@given(poly0(1), st.integers(0, 2))
def test_trace_commutes_with_d(p, edge):
    tri = [(Fraction(1, 3), Fraction(0)), (Fraction(2), Fraction(1, 2)), (Fraction(1, 2), Fraction(3, 2))]
    e = (tri[edge], tri[(edge + 1) % 3])
    assert trace_to_face(exterior_derivative(p), tri, e).coeffs == trace_to_face(p, tri, e).derivative().coeffs


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.1, 4))
def test_face_star_isometry(c, length):
    e = FaceForm(0, tuple(c), length)
    s = face_hodge_star(e)
    assert face_inner_product(s, s) == pytest.approx(face_inner_product(e, e), rel=1e-12, abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.1, 4))
def test_wedge_is_star_pairing(a, b, length):
    eta, mu = FaceForm(0, tuple(a), length), FaceForm(1, tuple(b), length)
    assert face_wedge_integral(eta, mu) == pytest.approx(
        face_inner_product(face_hodge_star(eta), mu), rel=1e-12, abs=1e-12)


def test_evaluate_matches_definition():
    w = form(1, {(DX, (1, 0)): 2, (DY, (0, 2)): -1})
    X = np.array([[0.5, 2.0], [1.0, -1.0]])
    assert np.allclose(w.evaluate(X), [[1.0, -4.0], [2.0, -1.0]])
