import json

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from xgfeec.harness import (CSV_COLUMNS, StudyConfig, StudyReport, calculus_identities,
                            convergence_study, level_divisions, make_case, rates, register_case,
                            rho_limit_study, zero_source)

x, y = sympy.symbols("x y", real=True)
S = np.linspace(0.05, 0.95, 7)


def test_k0_case_neumann_and_source():
    case = register_case(0)
    for X in (np.column_stack([0 * S, S]), np.column_stack([1 + 0 * S, S])):
        assert np.abs(case.du(X)[:, 0]).max() < 1e-12
    for X in (np.column_stack([S, 0 * S]), np.column_stack([S, 1 + 0 * S])):
        assert np.abs(case.du(X)[:, 1]).max() < 1e-12
    P = np.random.default_rng(0).uniform(size=(20, 2))
    expected = 2 * np.pi ** 2 * np.cos(np.pi * P[:, 0]) * np.cos(np.pi * P[:, 1])
    assert np.allclose(case.f(P)[:, 0], expected, rtol=1e-12, atol=1e-12)


def test_k2_case_vanishes_on_boundary():
    case = register_case(2)
    for X in (np.column_stack([S, 0 * S]), np.column_stack([1 + 0 * S, S])):
        assert np.abs(case.u(X)).max() < 1e-12


def test_k1_case_compatible():
    assert register_case(1).boundary_defect <= 1e-10


def test_fields_relations():
    case = register_case(1)
    P = np.random.default_rng(1).uniform(size=(10, 2))
    assert np.allclose(case.sigma(P), -case.delta_u(P))
    assert np.allclose(case.xi(P), -case.du(P))
    assert np.allclose(case.f(P), -case.d_sigma(P) - case.delta_xi(P))


def test_incompatible_case_rejected():
    with pytest.raises(ValueError):
        make_case(2, [x * y + 1])
    with pytest.raises(ValueError):
        make_case(0, [sympy.cos(sympy.pi * x) + 1])


def test_unknown_k():
    with pytest.raises(ValueError):
        register_case(3)


def test_level_divisions():
    assert [level_divisions(l) for l in (1, 2, 5)] == [1, 2, 16]
    with pytest.raises(ValueError):
        level_divisions(0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-8, 1e3), min_size=2, max_size=6))
def test_rates_are_pure_functions_of_errors(errs):
    r = rates(errs)
    assert np.isnan(r[0]) and len(r) == len(errs)
    for i in range(1, len(errs)):
        assert r[i] == pytest.approx(np.log2(errs[i - 1] / errs[i]), abs=1e-12)


def test_report_serialization_17_digits():
    rep = StudyReport("convergence", {"k": 1}, [{"level": 2, "h_max": 0.1, "dofs": 5, "err_u_triple": 1 / 3,
                                                "rate_u": float("nan")}])
    data = json.loads(rep.to_json())
    assert data["schema_version"] == "1"
    assert data["rows"][0]["err_u_triple"] == 1 / 3
    assert data["rows"][0]["rate_u"] is None
    assert "0.33333333333333331" in rep.to_json()
    header = rep.to_csv().splitlines()[0].split(",")
    assert tuple(header) == CSV_COLUMNS


def test_config_validation():
    with pytest.raises(ValueError):
        StudyConfig(method="nope")
    with pytest.raises(ValueError):
        StudyConfig(rho=[-1.0])
    with pytest.raises(ValueError):
        StudyConfig(method="hdg", regime="1")


@pytest.mark.parametrize("k", [0, 2, pytest.param(1, marks=pytest.mark.xfail(
    strict=True, reason="k=1 triple-norm error rises from 2 to 4 divisions before decaying"))])
def test_errors_decrease_under_refinement(k):
    rep = convergence_study(StudyConfig(k=k, levels=[2, 3, 4]))
    for col in ("err_u_triple", "err_u_l2"):
        e = rep.column(col)
        assert np.all(np.diff(e) < 0)


@pytest.mark.parametrize("regime", ["1", "2"])
def test_k1_errors_decrease_from_four_divisions(regime):
    rep = convergence_study(StudyConfig(k=1, regime=regime, levels=[3, 4, 5]))
    for col in ("err_u_triple", "err_u_l2", "err_sigma_triple", "err_xi_l2"):
        assert np.all(np.diff(rep.column(col)) < 0)


def test_hdg_matches_seven_field():
    a = convergence_study(StudyConfig(method="hdg", k=2, regime="h1", levels=[2, 3]))
    b = convergence_study(StudyConfig(method="xg7", k=2, regime="h1", levels=[2, 3]))
    assert np.allclose(a.column("err_u_triple"), b.column("err_u_triple"), rtol=1e-8)


def test_rho_limit_zero_source():
    rep = rho_limit_study(StudyConfig(k=1, rho=[1.0, 0.25]), divisions=2, f=zero_source(1))
    assert all(r["D"] == 0.0 for r in rep.rows)


def test_rho_limit_monotone():
    rep = rho_limit_study(StudyConfig(k=1, rho=[1.0, 0.25, 1 / 16, 1 / 64]), divisions=2)
    assert rep.summary["monotone"]


def test_identities_small():
    res = calculus_identities(20, seed=3)
    assert res["passed"]
