import logging
import math

import numpy as np
import pytest

from dynamics import (ForcingTerms, ScenarioConfig, SimState, Variant, assemble_operators, build_extensions,
                      build_forcing, initial_displacement, initial_state, simulate, step)
from equilibrium import solve_spherical
from errors import ConfigError, StabilityGateError
from fem_core import DivCoupling, assemble_form, scalar_p1, vector_p2
from material import EffectiveModuli, Scales, effective_moduli
from mesh import BoundaryTag, build_unit_square

PI = math.pi
UNIT_SCALES = Scales(stress=1.0, time=1.0)
VARIANTS = [v.value for v in Variant]


def _zero_state(operators, t=0.0):
    V, Q = operators.V, operators.Q
    v2 = np.zeros(V.dof_count) if operators.variant.viscous else None
    return SimState(t=t, u=np.zeros(V.dof_count), q=np.zeros(Q.dof_count), p=np.zeros(Q.dof_count), v2=v2)


# manufactured solution for the inviscid impermeable system:
# u = g(t) U, p = g(t) cos(pi x) cos(pi y), U = (sin(pi x) sin(pi y), sin(pi x) cos(pi y))

def _trig(x, y):
    return np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)


def exact_displacement(scale):
    def U(x, y):
        sx, _, sy, cy = _trig(x, y)
        return scale * sx * sy, scale * sx * cy
    return U


def exact_pressure(scale):
    def P(x, y):
        _, cx, _, cy = _trig(x, y)
        return scale * cx * cy
    return P


def manufactured_forcing(params, moduli, g, dg):
    def coefficients(t):
        return 2.0 * moduli.mu_t * g(t) + params.eta1 * dg(t), moduli.lambda_t * g(t) + params.mu1 * dg(t)

    def f1(x, y, t):
        a, b = coefficients(t)
        sx, cx, sy, cy = _trig(x, y)
        laplacian = (-2.0 * PI ** 2 * sx * sy, -2.0 * PI ** 2 * sx * cy)
        grad_div = (-PI ** 2 * sy * (sx + cx), PI ** 2 * cy * (cx - sx))
        grad_p = (-PI * sx * cy, -PI * cx * sy)
        return tuple(0.5 * a * laplacian[i] + (0.5 * a + b) * grad_div[i] - g(t) * grad_p[i] for i in range(2))

    def traction(x, y, normal, t):
        a, b = coefficients(t)
        sx, cx, sy, cy = _trig(x, y)
        div = PI * sy * (cx - sx)
        p = g(t) * cx * cy
        sxx = a * PI * cx * sy + b * div - p
        syy = -a * PI * sx * sy + b * div - p
        sxy = 0.5 * a * PI * cy * (sx + cx)
        nx, ny = normal[..., 0], normal[..., 1]
        return sxx * nx + sxy * ny, sxy * nx + syy * ny

    def source(x, y, t):
        sx, cx, sy, cy = _trig(x, y)
        return dg(t) * PI * sy * (cx - sx) + 2.0 * PI ** 2 * moduli.kappa_perm * g(t) * cx * cy

    return ForcingTerms(f1=f1, G=traction, H=source, steady=False)


def run_manufactured(params, mesh, g, dg, dt, n_steps):
    moduli = effective_moduli(1.0, 0.5, params)
    config = ScenarioConfig(variant=Variant.INVISCID_IMPERMEABLE, params=params, level=mesh.level, dt=dt,
                            n_steps=n_steps, P0=0.0, scales=UNIT_SCALES)
    operators = assemble_operators(config, mesh, moduli, 0.5, forcing=manufactured_forcing(params, moduli, g, dg))
    state = _zero_state(operators)
    for _ in range(n_steps):
        state = step(state, config, operators)
    return state, operators


def test_manufactured_solution_converges_in_space(unit_params):
    u_errors, p_errors = [], []
    for level in (2, 3, 4):
        state, operators = run_manufactured(unit_params, build_unit_square(level), lambda t: t, lambda t: 1.0, 0.1, 5)
        u_errors.append(operators.V.l2_error(state.u, exact_displacement(state.t)))
        p_errors.append(operators.Q.l2_error(state.p, exact_pressure(state.t)))
    u_rates = np.log2(np.array(u_errors[:-1]) / np.array(u_errors[1:]))
    p_rates = np.log2(np.array(p_errors[:-1]) / np.array(p_errors[1:]))
    assert u_rates[-1] >= 1.8, u_rates
    assert np.all(u_rates >= 1.5), u_rates
    assert np.all(p_rates >= 1.0), p_rates


def test_manufactured_solution_converges_in_time(unit_params, mesh2):
    finals = []
    for dt, n in ((0.1, 5), (0.05, 10), (0.025, 20)):
        state, _ = run_manufactured(unit_params, mesh2, lambda t: t * t, lambda t: 2.0 * t, dt, n)
        finals.append(state.u)
    coarse = np.linalg.norm(finals[0] - finals[1])
    fine = np.linalg.norm(finals[1] - finals[2])
    assert abs(math.log2(coarse / fine) - 1.0) < 0.25


@pytest.mark.parametrize("variant", VARIANTS)
def test_energy_never_increases_without_forcing(make_config, mesh3, variant):
    result = simulate(make_config(variant, level=3, n_steps=5), mesh=mesh3)
    assert len(result.records) == 5
    for record in result.records:
        assert record.work == pytest.approx(0.0, abs=1e-14)
        assert record.dissipation >= 0.0
        assert record.residual <= 1e-9 * max(1.0, record.energy_prev)
        assert record.energy <= record.energy_prev * (1.0 + 1e-12)
    assert result.operators.energy(result.initial) > 0.0


@pytest.mark.parametrize("variant", ["inviscid-permeable", "viscous-permeable"])
def test_energy_balance_with_boundary_pressure(make_config, mesh2, variant):
    config = make_config(variant, n_steps=4, P0=0.3, scales=UNIT_SCALES)
    result = simulate(config, mesh=mesh2)
    for record in result.records:
        assert record.residual <= 1e-9 * max(1.0, record.energy_prev)


def test_mirror_symmetry(make_config, mesh3):
    config = make_config("inviscid-impermeable", level=3, n_steps=3)
    direct = simulate(config, mesh=mesh3).final
    image = simulate(config, mesh=mesh3.mirrored()).final
    n = vector_p2(mesh3).n_nodes
    np.testing.assert_allclose(image.u[:n], -direct.u[:n], atol=1e-10)
    np.testing.assert_allclose(image.u[n:], direct.u[n:], atol=1e-10)
    np.testing.assert_allclose(image.p, direct.p, atol=1e-10)


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_state_stays_zero(make_config, mesh2, unit_params, variant):
    config = make_config(variant)
    operators = assemble_operators(config, mesh2, effective_moduli(1.0, 0.5, unit_params), 0.5)
    state = step(_zero_state(operators), config, operators)
    assert state.step == 1
    assert state.t == pytest.approx(config.dt)
    assert not np.any(state.u)
    assert not np.any(state.p)


def test_q_is_the_projected_divergence(make_config, mesh2):
    result = simulate(make_config("inviscid-impermeable", n_steps=3), mesh=mesh2)
    ops = result.operators
    final = result.final
    np.testing.assert_allclose(ops.matrices["MQ"] @ final.q, ops.matrices["B"] @ final.u, atol=1e-12)


@pytest.mark.parametrize("variant", ["viscous-impermeable", "viscous-permeable"])
def test_viscous_mixture_is_incompressible(make_config, mesh2, variant):
    result = simulate(make_config(variant, n_steps=3), mesh=mesh2)
    phi0 = result.equilibrium.phi0
    B = result.operators.matrices["B"]
    y = (result.final.u - result.previous.u) / result.config.dt
    np.testing.assert_allclose(phi0 * (B @ y) + (1.0 - phi0) * (B @ result.final.v2), 0.0, atol=1e-10)
    gamma0 = result.operators.V.boundary_dofs[BoundaryTag.GAMMA0]
    assert not np.any(result.final.v2[gamma0])
    assert not np.any(result.final.u[gamma0])


def test_impermeable_fluid_follows_the_polymer_on_the_pressure_boundary(make_config, mesh2):
    result = simulate(make_config("viscous-impermeable", n_steps=2), mesh=mesh2)
    y = (result.final.u - result.previous.u) / result.config.dt
    gammap = result.operators.V.boundary_dofs[BoundaryTag.GAMMAP]
    np.testing.assert_allclose(result.final.v2[gammap], y[gammap], atol=1e-10)


def test_viscous_impermeable_start_is_divergence_free(make_config, mesh2, unit_params):
    config = make_config("viscous-impermeable")
    state = initial_state(config, mesh2, solve_spherical(unit_params))
    B = assemble_form(DivCoupling(), scalar_p1(mesh2), vector_p2(mesh2))
    assert abs(float(np.sum(B @ state.u))) < 1e-12
    assert state.v2 is not None and not np.any(state.v2)


def test_viscous_impermeable_start_drops_the_vertical_component(make_config, mesh2, unit_params, caplog):
    V = vector_p2(mesh2)
    with caplog.at_level(logging.WARNING, logger="dynamics"):
        state = initial_state(make_config("viscous-impermeable"), mesh2, solve_spherical(unit_params))
    assert "y-component" in caplog.text
    amplitude = 0.9 * (1.0 - 0.9 ** 3)
    expected = V.interpolate(lambda x, y: initial_displacement(x, y, amplitude))
    expected[V.boundary_dofs[BoundaryTag.GAMMA0]] = 0.0
    np.testing.assert_allclose(state.u[V.n_nodes:], 0.0, atol=1e-12)
    np.testing.assert_allclose(state.u[:V.n_nodes], expected[:V.n_nodes], atol=1e-12)


def test_initial_displacement_is_clamped(make_config, mesh2, unit_params):
    state = initial_state(make_config("inviscid-impermeable"), mesh2, solve_spherical(unit_params))
    V = vector_p2(mesh2)
    assert not np.any(state.u[V.boundary_dofs[BoundaryTag.GAMMA0]])
    assert np.abs(state.u).max() > 0.0
    amplitude = 0.9 * (1.0 - 0.9 ** 3)
    ux, uy = initial_displacement(np.array([0.25]), np.array([1.0]), amplitude)
    assert ux[0] == pytest.approx(amplitude / (2.0 * PI))
    assert uy[0] == pytest.approx(amplitude)


def test_permeable_pressure_matches_boundary_data(make_config, mesh2):
    config = make_config("inviscid-permeable", P0=0.4, scales=UNIT_SCALES)
    extensions = build_extensions(config, mesh2)
    np.testing.assert_allclose(extensions.P, 0.4, atol=1e-12)
    result = simulate(config, mesh=mesh2)
    nodes = scalar_p1(mesh2).boundary_nodes(BoundaryTag.GAMMAP)
    np.testing.assert_allclose(result.final.p[nodes], 0.4, atol=1e-12)


def test_impermeable_extension_is_zero(make_config, mesh2, unit_params):
    config = make_config("inviscid-impermeable", P0=0.4, scales=UNIT_SCALES)
    extensions = build_extensions(config, mesh2)
    assert not np.any(extensions.P)
    moduli = effective_moduli(1.0, 0.5, unit_params)
    forcing = build_forcing(config, mesh2, 0.5, moduli, extensions)
    normal = np.array([[0.0, 1.0]])
    gx, gy = forcing.G(np.array([0.5]), np.array([1.0]), normal, 0.0)
    assert gy[0] == pytest.approx(-0.4)


def test_gate_refuses_unstable_moduli(make_config, mesh2):
    moduli = EffectiveModuli(lambda_t=-1.0, mu_t=0.5, lambda_iso=0.0, mu_iso=0.0, kappa_perm=0.25)
    with pytest.raises(StabilityGateError) as info:
        assemble_operators(make_config("inviscid-impermeable"), mesh2, moduli, 0.5)
    assert info.value.bulk_margin == pytest.approx(-2.0)
    assert info.value.exit_code == 3


def test_variant_is_required(unit_params, mesh2):
    with pytest.raises(ConfigError):
        simulate(ScenarioConfig(variant=None, params=unit_params, level=2), mesh=mesh2)


@pytest.mark.parametrize("name, expected", [
    ("inviscid-permeable", Variant.INVISCID_PERMEABLE),
    ("VISCOUS_IMPERMEABLE", Variant.VISCOUS_IMPERMEABLE),
    ("ViscousPermeable", Variant.VISCOUS_PERMEABLE),
])
def test_variant_names(name, expected):
    assert Variant.parse(name) is expected


def test_unknown_variant():
    with pytest.raises(ConfigError) as info:
        Variant.parse("elastic")
    assert info.value.key == "variant"


@pytest.mark.parametrize("overrides, key", [
    ({"dt": 0.0}, "dt"),
    ({"n_steps": 0}, "n_steps"),
    ({"level": 11}, "level"),
    ({"f0_override": -1.0}, "f0_override"),
])
def test_scenario_validation(unit_params, overrides, key):
    with pytest.raises(ConfigError) as info:
        ScenarioConfig(variant="inviscid-impermeable", params=unit_params, **overrides)
    assert info.value.key == key


def test_energy_frame(make_config, mesh2):
    frame = simulate(make_config("inviscid-impermeable", n_steps=3), mesh=mesh2).energy_frame()
    assert list(frame.columns) == ["step", "t", "energy_prev", "energy", "dissipation", "work", "residual"]
    assert frame["step"].tolist() == [1, 2, 3]
