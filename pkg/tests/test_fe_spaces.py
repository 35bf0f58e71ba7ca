import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xgfeec.diff_forms import FormSpaceSpec as S
from xgfeec.fe_spaces import (CheckSpace, ConformingSpace, TraceOperators, check_inclusions,
                              conforming_average, jump_and_average, make_space, make_xg_spaces,
                              mesh_quadrature, xg_space_specs)
from xgfeec.harness import jump_identity_defect, perturbed_mesh
from xgfeec.mesh_complex import build_structured_mesh
from xgfeec.xg_assembly import FormOperators


def test_make_space_dims(mesh1):
    assert make_space(mesh1, S(2, 0), "broken").dim == 2
    assert make_space(mesh1, S(0, 1), "conforming").dim == 4
    assert make_space(mesh1, S(1, 1, "trimmed"), "conforming").dim == 5


def test_make_space_unknown_continuity(mesh1):
    with pytest.raises(ValueError):
        make_space(mesh1, S(0, 1), "weird")


@pytest.mark.parametrize("spec, dim", [(S(0, 1), 16), (S(1, 1, "trimmed"), 33), (S(0, 2), 49),
                                       (S(1, 1), 66), (S(1, 2, "trimmed"), 102), (S(1, 2), 153)])
def test_conforming_dims_3x3(spec, dim):
    assert ConformingSpace(build_structured_mesh(3), spec).dim == dim


@pytest.mark.parametrize("spec, essential", [(S(0, 1), False), (S(0, 2), True), (S(1, 1, "trimmed"), False),
                                             (S(1, 2, "trimmed"), True), (S(1, 2), False),
                                             (S(1, 2, "trimmed", True), False), (S(2, 1, "trimmed", True), True)])
def test_conforming_fields_have_no_jumps(spec, essential, rng):
    m = build_structured_mesh(3)
    c = ConformingSpace(m, spec, essential)
    q = mesh_quadrature(m, 2 * spec.r + 2)
    T = TraceOperators(c.broken, q)
    x = c.prolongation @ rng.standard_normal(c.dim)
    bnd = np.repeat(m.boundary, q.nqf)
    J = T.jump_trs if spec.starred else T.jump_tr
    assert np.abs(J @ x)[~bnd].max() < 1e-12
    if essential:
        A = T.jump_trs if spec.starred else T.avg_tr
        assert np.abs(A @ x)[bnd].max() < 1e-12


def test_indicator_jump_and_average(mesh1):
    c = ConformingSpace(mesh1, S(0, 1))
    v = c.prolongation @ np.ones(c.dim)
    v[c.broken.cell_dofs(1)] = 0.0
    face = int(np.flatnonzero(mesh1.interior)[0])
    assert mesh1.face_cells[face, 0] == 0
    tr = jump_and_average(c.broken, v, face)
    assert np.allclose(tr.jump, 1.0)
    assert np.allclose(tr.average, 0.5)
    assert np.allclose(tr.jump_star, 0.0)


def test_single_cell_indicator_average(mesh1):
    c = ConformingSpace(mesh1, S(0, 1))
    v = c.prolongation @ np.ones(c.dim)
    v[c.broken.cell_dofs(1)] = 0.0
    vals = c.moments_of_broken(conforming_average(c, v))
    # cell 0 = (0, 1, 3); vertices 0 and 3 are shared by both cells
    assert np.allclose(vals[0], [0.5, 1.0, 0.5])
    assert np.allclose(vals[1], [0.5, 0.0, 0.5])


@pytest.mark.parametrize("spec", [S(0, 1), S(1, 1, "trimmed"), S(1, 2), S(2, 1, "trimmed")])
def test_conforming_average_reproduces_conforming(spec, rng):
    c = ConformingSpace(build_structured_mesh(3), spec)
    x = c.prolongation @ rng.standard_normal(c.dim)
    assert np.abs(conforming_average(c, x) - x).max() < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_conforming_average_idempotent(seed):
    c = ConformingSpace(build_structured_mesh(2), S(1, 1, "trimmed"))
    v = np.random.default_rng(seed).standard_normal(c.broken.dim)
    once = conforming_average(c, v)
    assert np.abs(conforming_average(c, once) - once).max() < 1e-11


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2), st.integers(0, 1))
def test_jump_identity_random_fields(seed, k, r):
    rng = np.random.default_rng(seed)
    mesh = perturbed_mesh(2, rng)
    ops = FormOperators(make_xg_spaces(mesh, k, specs=(S(k - 1, r + 1), S(k, r), None)))
    tau = rng.standard_normal(ops.space("minus").dim)
    u = rng.standard_normal(ops.space("main").dim)
    assert jump_identity_defect(ops, tau, u) < 1e-12


def test_spec_choices():
    assert xg_space_specs(1, 0) == (S(0, 1, "trimmed"), S(1, 1, "trimmed"), S(2, 1, "trimmed"))
    assert xg_space_specs(0, 1, "complete") == (None, S(0, 2), S(1, 1))
    assert xg_space_specs(2, 0, "complete") == (S(1, 1), S(2, 0), None)
    minus, main, plus = xg_space_specs(1, 0, dual=True)
    assert main.starred and main.k == 1
    with pytest.raises(ValueError):
        xg_space_specs(1, 0, "complete")


def test_inclusions_lowest_order_k1(mesh2):
    sp = make_xg_spaces(mesh2, 1, specs=(S(0, 1), S(1, 1, "trimmed"), S(2, 0)))
    assert all(check_inclusions(sp).values())


@pytest.mark.parametrize("k, degree, family, dual", [(0, 0, "trimmed", False), (1, 0, "trimmed", True),
                                                     (2, 1, "complete", False), (1, 1, "complete", False),
                                                     (0, 1, "complete", True)])
def test_inclusions_default_choices(mesh2, k, degree, family, dual):
    assert all(check_inclusions(make_xg_spaces(mesh2, k, degree, family, dual)).values())


def test_low_plus_degree_detected(mesh2):
    sp = make_xg_spaces(mesh2, 1, specs=(S(0, 2), S(1, 2), S(2, 0)))
    assert check_inclusions(sp)["d_V_in_Vplus"] is False


def test_check_without_zero_boundary_not_hybridizable(mesh2):
    sp = make_xg_spaces(mesh2, 1, specs=(S(0, 1), S(1, 1, "trimmed"), S(2, 0)))
    c = sp.check_star
    bad = dataclasses.replace(sp, check_star=CheckSpace(mesh2, c.degree, False, c.form_degree))
    assert check_inclusions(bad)["hybridizable"] is False


def test_check_space_dims(mesh2):
    nf, ni = mesh2.n_faces, int(mesh2.interior.sum())
    assert CheckSpace(mesh2, 1).dim == 2 * nf
    assert CheckSpace(mesh2, 0, zero_boundary=True).dim == ni
