import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xgfeec.fe_spaces import ConformingSpace, make_xg_spaces
from xgfeec.harness import register_case, zero_source
from xgfeec.mesh_complex import MeshSizes, build_structured_mesh
from xgfeec.saddle_solver import solve
from xgfeec.xg_assembly import (ASSEMBLERS, ConfigurationError, FormOperators, assemble_afw,
                                assemble_seven_field, jump_contribution, make_afw_spaces,
                                norm_gram, penalty_schedule, recover_checks, triple_norm)


def sizes(h):
    return MeshSizes(h_T=np.array([h]), h_E=np.array([h]), shape_ratio=1.0)


def setup(div, k, regime="1", rho=1.0, degree=0, family="trimmed"):
    mesh = build_structured_mesh(div)
    params = penalty_schedule(regime, rho, mesh.sizes())
    dual = params.norm_family == "II"
    spaces = make_xg_spaces(mesh, k, degree, family, dual)
    return mesh, spaces, params, FormOperators(spaces)


def test_penalty_regime_I():
    p = penalty_schedule("1", 1.0, sizes(0.5))
    assert (p.a[0], p.b[0], p.c[0], p.d[0]) == (-0.5, 2.0, 0.5, -2.0)


def test_penalty_hybridizable_I():
    p = penalty_schedule("h1", 1.0, sizes(0.5))
    assert p.c[0] == pytest.approx(0.125)
    assert p.d[0] == pytest.approx(-0.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1.0))
def test_regime_II_swaps_I(rho, h):
    one, two = penalty_schedule("I", rho, sizes(h)), penalty_schedule("II", rho, sizes(h))
    assert np.allclose([two.a, two.b, two.c, two.d], [one.d, one.c, one.b, one.a], rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["h1", "h2"]), st.floats(1e-3, 1e3), st.floats(1e-3, 1.0))
def test_hybridizable_relations(regime, rho, h):
    p = penalty_schedule(regime, rho, sizes(h))
    assert np.allclose(p.c, 1 / (4 * p.b)) and np.allclose(p.d, 1 / (4 * p.a))
    assert np.all(p.a < 0) and np.all(p.b > 0) and np.all(p.c > 0) and np.all(p.d < 0)


def test_penalty_bad_inputs():
    with pytest.raises(ValueError):
        penalty_schedule("3", 1.0, sizes(0.5))
    with pytest.raises(ValueError):
        penalty_schedule("1", 0.0, sizes(0.5))


@pytest.mark.parametrize("method", list(ASSEMBLERS))
@pytest.mark.parametrize("k", [0, 1, 2])
def test_symmetry(method, k):
    mesh, spaces, params, ops = setup(2, k)
    K = ASSEMBLERS[method](mesh, spaces, params, register_case(k).f, ops=ops).matrix
    assert abs(K - K.T).max() < 1e-12 * abs(K).max()


@pytest.mark.parametrize("method", list(ASSEMBLERS))
@pytest.mark.parametrize("regime", ["1", "2"])
def test_zero_source_gives_zero(method, regime):
    mesh, spaces, params, ops = setup(2, 1, regime)
    rep = solve(ASSEMBLERS[method](mesh, spaces, params, zero_source(1), ops=ops))
    assert np.abs(rep.x).max() == 0.0


def test_seven_field_residual():
    mesh, spaces, params, ops = setup(2, 1)
    rep = solve(assemble_seven_field(mesh, spaces, params, register_case(1).f, ops=ops))
    assert rep.success and rep.residual <= 1e-10


def test_k0_has_mean_constraint():
    mesh, spaces, params, ops = setup(2, 0)
    assert assemble_seven_field(mesh, spaces, params, register_case(0).f, ops=ops).has_mean_constraint


@pytest.mark.parametrize("method, regime", [("xg4a", "1"), ("xg4b", "2"), ("xg3", "1")])
def test_reduced_matches_seven_field(method, regime):
    mesh, spaces, params, ops = setup(2, 1, regime)
    f = register_case(1).f
    ref = solve(assemble_seven_field(mesh, spaces, params, f, ops=ops)).solution
    sol = solve(ASSEMBLERS[method](mesh, spaces, params, f, ops=ops)).solution
    for name in sol:
        assert np.linalg.norm(sol[name] - ref[name]) <= 1e-8 * max(np.linalg.norm(ref[name]), 1e-30)


def test_four_field_dimension_count():
    mesh, spaces, params, ops = setup(2, 1)
    f = register_case(1).f
    seven = assemble_seven_field(mesh, spaces, params, f, ops=ops)
    four = ASSEMBLERS["xg4a"](mesh, spaces, params, f, ops=ops)
    removed = sum(ops.dim(n) for n in ("sigma_check", "u_check", "u_check_star"))
    assert four.total_dim == seven.total_dim - removed


def test_checks_recoverable():
    mesh, spaces, params, ops = setup(2, 1)
    sol = solve(assemble_seven_field(mesh, spaces, params, register_case(1).f, ops=ops)).solution
    rec = recover_checks(ops, params, sol)
    for name, vec in rec.items():
        assert np.linalg.norm(vec - sol[name]) <= 1e-8 * max(np.linalg.norm(sol[name]), 1e-12)


def test_wrong_space_choice_rejected():
    from xgfeec.diff_forms import FormSpaceSpec as S
    mesh = build_structured_mesh(2)
    spaces = make_xg_spaces(mesh, 1, specs=(S(0, 2), S(1, 2), S(2, 0)))
    with pytest.raises(ConfigurationError):
        assemble_seven_field(mesh, spaces, penalty_schedule("1", 1.0, mesh.sizes()), zero_source(1))


def test_afw_mixed_poisson_dims():
    mesh = build_structured_mesh(3)
    afw = make_afw_spaces(mesh, 2, 0)
    system = assemble_afw(mesh, afw, register_case(2).f)
    assert system.total_dim == mesh.n_faces + mesh.n_cells


def test_afw_zero_source():
    mesh = build_structured_mesh(2)
    rep = solve(assemble_afw(mesh, make_afw_spaces(mesh, 1, 0), zero_source(1)))
    assert np.abs(rep.x).max() == 0.0


def test_afw_stability_constant():
    case = register_case(1)
    consts = []
    for div in (2, 4, 8):
        mesh = build_structured_mesh(div)
        system = assemble_afw(mesh, make_afw_spaces(mesh, 1, 0), case.f)
        ops = system.extras["operators"]
        sol = system.broken(solve(system).x)
        norm = 0.0
        for name, space in (("sigma", "minus"), ("u", "main")):
            G = ops.mass(space, "value", space, "value") + ops.mass(space, "d", space, "d")
            norm += np.sqrt(sol[name] @ (G @ sol[name]))
        w = ops.quad.cell_weights.ravel()
        fv = case.f(ops.quad.cell_points.reshape(-1, 2))
        consts.append(norm / np.sqrt(np.sum(w[:, None] * fv ** 2)))
    assert max(consts) / min(consts) < 2.0


def test_triple_norm_zero_field():
    mesh, spaces, params, ops = setup(2, 1)
    zero = {"sigma": np.zeros(ops.dim("sigma")), "u": np.zeros(ops.dim("u"))}
    assert triple_norm(zero, params, "I", ops) == 0.0


def test_triple_norm_of_conforming_field_is_graph_norm(rng):
    mesh, spaces, params, ops = setup(3, 1)
    conf = ConformingSpace(mesh, spaces.main.spec)
    u = conf.prolongation @ rng.standard_normal(conf.dim)
    graph = u @ (ops.mass("main", "value", "main", "value") + ops.mass("main", "d", "main", "d")) @ u
    assert triple_norm({"u": u}, params, "I", ops) ** 2 == pytest.approx(graph, rel=1e-12)


def test_jump_term_scales_inversely_with_rho(rng):
    mesh = build_structured_mesh(2)
    ops = FormOperators(make_xg_spaces(mesh, 1))
    u = rng.standard_normal(ops.dim("u"))
    j1 = jump_contribution(ops, penalty_schedule("1", 1.0, mesh.sizes()), "u", u)
    j2 = jump_contribution(ops, penalty_schedule("1", 2.0, mesh.sizes()), "u", u)
    assert j2 == pytest.approx(0.5 * j1, rel=1e-13)


def test_norm_gram_positive_definite():
    mesh, spaces, params, ops = setup(2, 1)
    for name in ("sigma", "xi", "u", "sigma_check", "u_check", "u_check_star", "xi_check_star"):
        G = norm_gram(ops, params, name).toarray()
        assert np.linalg.eigvalsh(G).min() > 0
