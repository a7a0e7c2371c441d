import math

import pytest

from config import material_from_config, resolve
from equilibrium import (equilibrium_residual, equilibrium_residual_derivative, find_phi_star, solve_spherical,
                         uniqueness_condition)
from errors import DomainError, NoBracket
from material import MaterialParams, effective_moduli
from stability import check_spherical


def test_unit_root_is_recovered(unit_params):
    eq = solve_spherical(unit_params)
    assert eq.phi0 == pytest.approx(0.5, abs=1e-10)
    assert eq.f0 == pytest.approx(1.0, abs=1e-10)
    assert eq.I1 == pytest.approx(3.0, abs=1e-9)
    assert eq.I3 == pytest.approx(1.0, abs=1e-9)
    assert abs(eq.residual) < 1e-10
    assert eq.kappa0 == pytest.approx(1.0, abs=1e-9)
    assert eq.nu0 == pytest.approx(1.0)
    assert len(eq.roots) == 1
    assert not eq.multiple_roots


def test_residual_signs_around_the_unit_root(unit_params):
    assert equilibrium_residual(0.25, unit_params) == pytest.approx(-4.28, abs=0.01)
    assert equilibrium_residual(0.75, unit_params) == pytest.approx(2.02, abs=0.01)
    assert equilibrium_residual(0.5, unit_params) == pytest.approx(0.0, abs=1e-12)


def test_residual_derivative_matches_finite_difference(unit_params):
    phi, h = 0.4, 1e-6
    numeric = (equilibrium_residual(phi + h, unit_params) - equilibrium_residual(phi - h, unit_params)) / (2 * h)
    assert equilibrium_residual_derivative(phi, unit_params) == pytest.approx(numeric, rel=1e-6)


def test_residual_rejects_closed_endpoints(unit_params):
    with pytest.raises(DomainError):
        equilibrium_residual(0.0, unit_params)
    with pytest.raises(DomainError):
        equilibrium_residual(1.0, unit_params)


def test_uniqueness_condition_of_the_unit_set(unit_params):
    holds, lhs, rhs = uniqueness_condition(unit_params)
    assert holds
    assert lhs == pytest.approx(4.0 - 4.0 * math.log(2.0))
    assert rhs == pytest.approx(0.5 ** (2.0 / 3.0) + 0.25)


def test_no_sign_change_raises():
    params = MaterialParams(a=0.0, b=0.0, c=0.0, alpha=1e-3, a3=10.0, s=1.0, q_exp=1.0, r=1.0)
    with pytest.raises(NoBracket):
        solve_spherical(params)


def test_phi_star_lies_below_the_root(unit_params):
    phi_star = find_phi_star(unit_params)
    assert phi_star is not None
    assert 0.0 < phi_star < 0.5
    assert solve_spherical(unit_params).phi_star == pytest.approx(phi_star)


def test_as_dict_is_flat(unit_params):
    row = solve_spherical(unit_params).as_dict()
    assert set(row) >= {"f0", "phi0", "I1", "I3", "residual", "kappa0", "nu0", "n_roots", "phi_star"}
    assert row["n_roots"] == 1


@pytest.mark.parametrize("preset, phi0", [("fig1", 0.63), ("fig2", 0.60)])
def test_presets_reach_a_stable_spherical_state(preset, phi0):
    params, _ = material_from_config(resolve(preset=preset))
    eq = solve_spherical(params)
    assert eq.phi0 == pytest.approx(phi0, abs=0.03)
    assert eq.f0 == pytest.approx((0.5 / eq.phi0) ** (1.0 / 3.0))
    assert check_spherical(effective_moduli(eq.f0, eq.phi0, params)).ok
