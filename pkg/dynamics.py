"""
Time stepping of the four linearized gel systems about a spherical equilibrium.

Unknowns are blocked per field. Inviscid variants solve for (u, q, p_bar) with
q the P1 projection of div u; viscous variants solve for (y, v2, p_bar) with
y = (u^{n+1} - u^n)/dt the polymer velocity. p_bar = p - P, P being the pressure
extension of the boundary data, and SimState.p stores the total pressure.
Everything is nondimensional in the scales carried by the ScenarioConfig.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from equilibrium import EquilibriumState, solve_spherical
from errors import ConfigError, StabilityGateError
from fem_core import (BodyLoad, BoundaryTraction, DirectSolver, DivCoupling, FemSpace, FluxSource, Mass,
                      ScalarDiffusion, ScalarSource, SparseOperator, VectorElasticity, VectorViscosity,
                      apply_dirichlet, assemble_form, make_solver, scalar_p1, solve_sparse, vector_p2)
from logging_config import ContextLogger, log_performance
from material import EffectiveModuli, MaterialParams, Scales, effective_moduli
from mesh import MAX_LEVEL, BoundaryTag, Mesh, build_unit_square
from stability import check_spherical

logger = logging.getLogger(__name__)


class Variant(Enum):
    INVISCID_IMPERMEABLE = "inviscid-impermeable"
    INVISCID_PERMEABLE = "inviscid-permeable"
    VISCOUS_IMPERMEABLE = "viscous-impermeable"
    VISCOUS_PERMEABLE = "viscous-permeable"

    @property
    def viscous(self) -> bool:
        return self.value.startswith("viscous")

    @property
    def permeable(self) -> bool:
        return not self.value.endswith("impermeable")

    @classmethod
    def parse(cls, name) -> "Variant":
        """Accepts 'inviscid-permeable', 'INVISCID_PERMEABLE', 'InviscidPermeable' and the like"""
        if isinstance(name, Variant):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        for variant in cls:
            if variant.value.replace("-", "") == key:
                return variant
        raise ConfigError(f"unknown variant {name!r} (choose from {[v.value for v in cls]})", key="variant")


@dataclass(frozen=True)
class ScenarioConfig:
    variant: Optional[Variant]
    params: MaterialParams = field(default_factory=MaterialParams)
    level: int = 5
    dt: float = 0.01
    n_steps: int = 100
    P0: float = 1.0e4                   # Pa
    f0_override: Optional[float] = None
    snapshot_every: int = 0
    scales: Scales = field(default_factory=Scales)
    preset: Optional[str] = None
    krylov_level: int = 7
    raw: Mapping = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.variant is not None and not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt}", key="dt")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be at least 1, got {self.n_steps}", key="n_steps")
        if not 1 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"level must lie in [1, {MAX_LEVEL}], got {self.level}", key="level")
        if self.snapshot_every < 0:
            raise ConfigError(f"snapshot_every must be non-negative, got {self.snapshot_every}", key="snapshot_every")
        if self.f0_override is not None and not self.f0_override > 0:
            raise ConfigError(f"f0_override must be positive, got {self.f0_override}", key="f0_override")
        if not np.isfinite(self.P0):
            raise ConfigError(f"P0 must be finite, got {self.P0}", key="P0")

    @property
    def P0_nd(self) -> float:
        """Boundary pressure in units of the stress scale"""
        return self.P0 / self.scales.stress

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt


@dataclass(frozen=True)
class SimState:
    t: float
    u: np.ndarray
    q: np.ndarray
    p: np.ndarray
    v2: Optional[np.ndarray] = None
    step: int = 0


ScalarForcing = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
VectorForcing = Callable[[np.ndarray, np.ndarray, float], Sequence[np.ndarray]]
TractionForcing = Callable[[np.ndarray, np.ndarray, np.ndarray, float], Sequence[np.ndarray]]


def zero_scalar(x, y, t=0.0):
    return 0.0


def zero_vector(x, y, t=0.0):
    return 0.0, 0.0


def zero_traction(x, y, normal, t=0.0):
    return 0.0, 0.0


@dataclass(frozen=True)
class Extensions:
    """Boundary-data extensions; U and V are callables of (x, y, t), P holds P1 coefficients"""
    U: VectorForcing
    V: VectorForcing
    P: np.ndarray


@dataclass(frozen=True)
class ForcingTerms:
    """
    Right-hand sides of the perturbation equations as callables of (x, y, t).

    G is the traction on the pressure boundary; in viscous runs the fluid phase
    carries the fraction fluid_share of it. H is a volumetric source of the
    pressure equation and flux the vector field whose negative divergence adds to it.
    """
    f1: VectorForcing = zero_vector
    f2: VectorForcing = zero_vector
    G: TractionForcing = zero_traction
    h: ScalarForcing = zero_scalar
    H: ScalarForcing = zero_scalar
    flux: VectorForcing = zero_vector
    fluid_share: float = 0.0
    steady: bool = True


@dataclass(frozen=True)
class EnergyRecord:
    step: int
    t: float
    energy_prev: float
    energy: float
    dissipation: float
    work: float
    residual: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "step": self.step,
            "t": self.t,
            "energy_prev": self.energy_prev,
            "energy": self.energy,
            "dissipation": self.dissipation,
            "work": self.work,
            "residual": self.residual,
        }


def _require_variant(config: ScenarioConfig) -> Variant:
    if config.variant is None:
        raise ConfigError("a variant is required", key="variant")
    return config.variant


def _constant_tolerance(P0: float) -> float:
    return 1e-12 * max(abs(P0), 1.0)


def build_extensions(config: ScenarioConfig, mesh: Mesh) -> Extensions:
    """
    Extensions of the boundary data. Displacement data on GAMMA0 is zero, so U = 0
    and V = U_t = 0. Impermeable runs take P = 0; permeable runs the discrete
    harmonic extension of P0 from GAMMAP, natural on GAMMA0.
    """
    variant = _require_variant(config)
    Q = scalar_p1(mesh)
    P0 = config.P0_nd
    if not variant.permeable or P0 == 0.0:
        return Extensions(U=zero_vector, V=zero_vector, P=np.zeros(Q.dof_count))
    K = assemble_form(ScalarDiffusion(1.0), Q)
    op, rhs = apply_dirichlet(K, np.zeros(Q.dof_count), Q.boundary_nodes(BoundaryTag.GAMMAP), P0)
    P = solve_sparse(op, rhs)
    logger.debug(f"Harmonic pressure extension: range [{P.min():.6g}, {P.max():.6g}]")
    return Extensions(U=zero_vector, V=zero_vector, P=P)


def build_forcing(config: ScenarioConfig, mesh: Mesh, phi0: float, moduli: EffectiveModuli,
                  extensions: Extensions) -> ForcingTerms:
    """Forcing for U = 0: f1 = phi0 grad P, f2 = (1-phi0) grad P, G = (P - P0) n, flux = -kappa grad P"""
    variant = _require_variant(config)
    P0 = config.P0_nd
    P = extensions.P
    kappa = moduli.kappa_perm

    if P.size == 0 or np.ptp(P) <= _constant_tolerance(P0):
        offset = (float(P.mean()) if P.size else 0.0) - P0

        def traction(x, y, normal, t):
            return offset * normal[..., 0], offset * normal[..., 1]

        return ForcingTerms(G=traction, fluid_share=(1.0 - phi0) if variant.viscous and variant.permeable else 0.0)

    Q = scalar_p1(mesh)
    value = Q.interpolant(P)
    gradient = Q.interpolant(P, gradient=True)

    def f1(x, y, t):
        g = gradient(x, y)
        return phi0 * g[..., 0], phi0 * g[..., 1]

    def f2(x, y, t):
        g = gradient(x, y)
        return (1.0 - phi0) * g[..., 0], (1.0 - phi0) * g[..., 1]

    def traction(x, y, normal, t):
        jump = value(x, y) - P0
        return jump * normal[..., 0], jump * normal[..., 1]

    def flux(x, y, t):
        g = gradient(x, y)
        return -kappa * g[..., 0], -kappa * g[..., 1]

    return ForcingTerms(f1=f1, f2=f2, G=traction, flux=flux,
                        fluid_share=(1.0 - phi0) if variant.viscous else 0.0)


def initial_displacement(x, y, amplitude: float):
    """u0 = amplitude * (sin(2 pi x)/(2 pi), y (1 - cos(2 pi x)))"""
    two_pi_x = 2.0 * np.pi * np.asarray(x, dtype=float)
    return amplitude * np.sin(two_pi_x) / (2.0 * np.pi), amplitude * np.asarray(y) * (1.0 - np.cos(two_pi_x))


def _divergence_corrector(x, y):
    return 0.0 * np.asarray(x), np.asarray(y) * (1.0 - np.cos(2.0 * np.pi * np.asarray(x)))


def initial_state(config: ScenarioConfig, mesh: Mesh, eq: EquilibriumState) -> SimState:
    variant = _require_variant(config)
    V, Q = vector_p2(mesh), scalar_p1(mesh)
    f0 = config.f0_override if config.f0_override is not None else eq.f0
    amplitude = f0 * (1.0 - f0 ** 3)

    u = V.interpolate(lambda x, y: initial_displacement(x, y, amplitude))
    u[V.boundary_dofs[BoundaryTag.GAMMA0]] = 0.0
    B = assemble_form(DivCoupling(), Q, V)

    if variant is Variant.VISCOUS_IMPERMEABLE:
        mean_div = float(np.sum(B @ u))
        if abs(mean_div) > 1e-14:
            w = V.interpolate(_divergence_corrector)
            w[V.boundary_dofs[BoundaryTag.GAMMA0]] = 0.0
            u = u - (mean_div / float(np.sum(B @ w))) * w
            logger.warning(f"Removed the y-component of the initial displacement "
                           f"to cancel its mean divergence {mean_div:.6e}")

    q = solve_sparse(assemble_form(Mass(), Q), B @ u)
    p = build_extensions(config, mesh).P.copy()
    v2 = np.zeros(V.dof_count) if variant.viscous else None
    logger.debug(f"Initial state: f0={f0:.10g}, amplitude={amplitude:.6g}")
    return SimState(t=0.0, u=u, q=q, p=p, v2=v2, step=0)


def _prolongation(sizes: Sequence[int], fixed: Sequence[np.ndarray],
                  ties: Sequence[Tuple[int, int, np.ndarray]]) -> Tuple[sp.csr_matrix, List[np.ndarray]]:
    """
    Map from free unknowns to the full blocked vector. fixed[k] lists zero dofs of
    field k; a tie (src, dst, dofs) makes dst's dofs copies of src's same dofs.
    """
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    column = np.full(offsets[-1], -1, dtype=np.int64)
    blocks = []
    count = 0
    for k, size in enumerate(sizes):
        free = np.ones(size, dtype=bool)
        free[np.asarray(fixed[k], dtype=np.int64)] = False
        for _, dst, dofs in ties:
            if dst == k:
                free[dofs] = False
        idx = offsets[k] + np.flatnonzero(free)
        column[idx] = np.arange(count, count + len(idx))
        blocks.append(np.arange(count, count + len(idx)))
        count += len(idx)
    for src, dst, dofs in ties:
        source = column[offsets[src] + dofs]
        live = source >= 0
        column[offsets[dst] + dofs[live]] = source[live]
    rows = np.flatnonzero(column >= 0)
    T = sp.csr_matrix((np.ones(len(rows)), (rows, column[rows])), shape=(int(offsets[-1]), count))
    return T, blocks


@dataclass(eq=False)
class Operators:
    """Assembled matrices, the reduced monolithic system and its factorization"""
    variant: Variant
    mesh: Mesh
    V: FemSpace
    Q: FemSpace
    params: MaterialParams
    moduli: EffectiveModuli
    phi0: float
    dt: float
    matrices: Dict[str, SparseOperator]
    system: SparseOperator
    prolongation: sp.csr_matrix
    solver: object
    mass_solver: DirectSolver
    forcing: ForcingTerms
    P: np.ndarray
    sizes: Tuple[int, int, int]
    _cached_loads: Optional[Dict[str, np.ndarray]] = None

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        a, b, _ = self.sizes
        return x[:a], x[a:a + b], x[a + b:]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        T = self.prolongation
        return T @ self.solver.solve(T.T @ rhs)

    def loads(self, t: float) -> Dict[str, np.ndarray]:
        if self.forcing.steady and self._cached_loads is not None:
            return self._cached_loads
        f = self.forcing
        V, Q = self.V, self.Q
        traction = assemble_form(BoundaryTraction(BoundaryTag.GAMMAP, lambda x, y, n: f.G(x, y, n, t)), V)
        body1 = assemble_form(BodyLoad(lambda x, y: f.f1(x, y, t)), V)
        body2 = assemble_form(BodyLoad(lambda x, y: f.f2(x, y, t)), V)
        volume = assemble_form(ScalarSource(lambda x, y: f.h(x, y, t)), Q)
        if self.variant.viscous:
            share = f.fluid_share
            out = {"L1": (1.0 - share) * traction - body1, "L2": share * traction - body2, "Fh": volume}
        else:
            source = assemble_form(ScalarSource(lambda x, y: f.H(x, y, t)), Q)
            flux = assemble_form(FluxSource(lambda x, y: f.flux(x, y, t)), Q)
            out = {"Lu": traction - body1 - body2, "Lp": volume + source + flux}
        if f.steady:
            self._cached_loads = out
        return out

    def energy(self, state: SimState) -> float:
        m = self.matrices
        if self.variant.viscous:
            return 0.5 * float(state.u @ (m["A_el"] @ state.u))
        return (0.5 * float(state.u @ (m["A_mu"] @ state.u))
                + 0.5 * self.moduli.lambda_t * float(state.q @ (m["MQ"] @ state.q)))


def _gate(moduli: EffectiveModuli) -> None:
    check = check_spherical(moduli)
    if not check.ok:
        raise StabilityGateError(moduli.mu_t, 3.0 * moduli.lambda_t + 2.0 * moduli.mu_t)


def assemble_operators(config: ScenarioConfig, mesh: Mesh, moduli: EffectiveModuli, phi0: float,
                       extensions: Optional[Extensions] = None,
                       forcing: Optional[ForcingTerms] = None) -> Operators:
    """
    Stability gate, monolithic backward-Euler matrix, boundary reduction and
    factorization. Raises StabilityGateError before any assembly when the
    spherical check fails.
    """
    variant = _require_variant(config)
    _gate(moduli)
    start = time.time()
    p = config.params
    dt = config.dt
    V, Q = vector_p2(mesh), scalar_p1(mesh)
    extensions = extensions or build_extensions(config, mesh)
    forcing = forcing or build_forcing(config, mesh, phi0, moduli, extensions)

    B = assemble_form(DivCoupling(), Q, V)
    MQ = assemble_form(Mass(), Q)
    BT = B.T
    gamma0 = V.boundary_dofs[BoundaryTag.GAMMA0]

    if variant.viscous:
        A_el = assemble_form(VectorElasticity(moduli.lambda_t, moduli.mu_t), V)
        V1 = assemble_form(VectorViscosity(p.eta1, p.mu1), V)
        V2 = assemble_form(VectorViscosity(p.eta2, p.mu2), V)
        MV = assemble_form(Mass(), V)
        drag = MV.scaled(p.beta_drag)
        matrices = {"A_el": A_el, "V1": V1, "V2": V2, "MV": MV, "B": B, "MQ": MQ}
        system = SparseOperator.from_blocks([
            [A_el.scaled(dt) + V1 + drag, drag.scaled(-1.0), BT.scaled(-phi0)],
            [drag.scaled(-1.0), V2 + drag, BT.scaled(-(1.0 - phi0))],
            [B.scaled(-phi0), B.scaled(-(1.0 - phi0)), None],
        ])
        sizes = (V.dof_count, V.dof_count, Q.dof_count)
        fixed = [gamma0, gamma0, np.empty(0, dtype=np.int64)]
        ties = [] if variant.permeable else [(0, 1, V.boundary_dofs[BoundaryTag.GAMMAP])]
    else:
        A_mu = assemble_form(VectorElasticity(0.0, moduli.mu_t), V)
        Vis = assemble_form(VectorViscosity(p.eta1, 0.0), V)
        K = assemble_form(ScalarDiffusion(moduli.kappa_perm), Q)
        matrices = {"A_mu": A_mu, "V": Vis, "K": K, "B": B, "MQ": MQ}
        system = SparseOperator.from_blocks([
            [A_mu + Vis.scaled(1.0 / dt), BT.scaled(moduli.lambda_t + p.mu1 / dt), BT.scaled(-1.0)],
            [B.scaled(-1.0), MQ, None],
            [None, MQ.scaled(1.0 / dt), K],
        ])
        sizes = (V.dof_count, Q.dof_count, Q.dof_count)
        pressure_fixed = (Q.boundary_nodes(BoundaryTag.GAMMAP) if variant.permeable
                          else np.empty(0, dtype=np.int64))
        fixed = [gamma0, np.empty(0, dtype=np.int64), pressure_fixed]
        ties = []

    T, blocks = _prolongation(sizes, fixed, ties)
    reduced = SparseOperator((T.T @ system.matrix @ T).tocsr())
    solver = make_solver(reduced, config.level if mesh.level is None else mesh.level, blocks,
                         krylov_level=config.krylov_level, step=0)
    log_performance("assemble_operators", time.time() - start)
    logger.info(f"Assembled {variant.value} system: {system.dimension} dofs, {reduced.dimension} free")
    return Operators(
        variant=variant, mesh=mesh, V=V, Q=Q, params=p, moduli=moduli, phi0=phi0, dt=dt,
        matrices=matrices, system=system, prolongation=T, solver=solver,
        mass_solver=DirectSolver(MQ), forcing=forcing, P=np.asarray(extensions.P, dtype=float),
        sizes=sizes,
    )


def step(state: SimState, config: ScenarioConfig, operators: Operators) -> SimState:
    """One backward-Euler step from state.t to state.t + dt"""
    dt = operators.dt
    t = state.t + dt
    m = operators.matrices
    L = operators.loads(t)
    if operators.variant.viscous:
        rhs = np.concatenate([L["L1"] - m["A_el"] @ state.u, L["L2"], -L["Fh"]])
        y, v2, p_bar = operators.split(operators.solve(rhs))
        u = state.u + dt * y
        q = operators.mass_solver.solve(m["B"] @ u)
    else:
        mu1 = operators.params.mu1
        rhs = np.concatenate([
            L["Lu"] + (m["V"] @ state.u) / dt + (mu1 / dt) * (m["B"].T @ state.q),
            np.zeros(operators.Q.dof_count),
            (m["MQ"] @ state.q) / dt + L["Lp"],
        ])
        u, q, p_bar = operators.split(operators.solve(rhs))
        v2 = None
    return SimState(t=t, u=u, q=q, p=p_bar + operators.P, v2=v2, step=state.step + 1)


def energy_residual(prev: SimState, nxt: SimState, config: ScenarioConfig, operators: Operators) -> EnergyRecord:
    """
    Discrete energy balance of one step: E^{n+1} - E^n + dt*D - dt*W. Backward
    Euler makes this non-positive for any forcing.
    """
    dt = operators.dt
    m = operators.matrices
    L = operators.loads(nxt.t)
    y = (nxt.u - prev.u) / dt
    p_bar = nxt.p - operators.P
    if operators.variant.viscous:
        slip = y - nxt.v2
        dissipation = (float(y @ (m["V1"] @ y)) + float(nxt.v2 @ (m["V2"] @ nxt.v2))
                       + operators.params.beta_drag * float(slip @ (m["MV"] @ slip)))
        work = float(L["L1"] @ y) + float(L["L2"] @ nxt.v2) + float(L["Fh"] @ p_bar)
    else:
        q_t = (nxt.q - prev.q) / dt
        dissipation = (float(y @ (m["V"] @ y)) + operators.params.mu1 * float(q_t @ (m["MQ"] @ q_t))
                       + float(p_bar @ (m["K"] @ p_bar)))
        work = float(L["Lu"] @ y) + float(L["Lp"] @ p_bar)
    e0 = operators.energy(prev)
    e1 = operators.energy(nxt)
    return EnergyRecord(
        step=nxt.step,
        t=nxt.t,
        energy_prev=e0,
        energy=e1,
        dissipation=dissipation,
        work=work,
        residual=(e1 - e0) + dt * dissipation - dt * work,
    )


@dataclass(eq=False)
class SimulationResult:
    config: ScenarioConfig
    equilibrium: EquilibriumState
    moduli: EffectiveModuli
    mesh: Mesh
    operators: Operators
    initial: SimState
    previous: SimState
    final: SimState
    records: List[EnergyRecord]

    def energy_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.as_dict() for r in self.records],
                            columns=["step", "t", "energy_prev", "energy", "dissipation", "work", "residual"])


StepCallback = Callable[[SimState, SimState, EnergyRecord], None]


def simulate(config: ScenarioConfig, equilibrium: Optional[EquilibriumState] = None,
             mesh: Optional[Mesh] = None, callback: Optional[StepCallback] = None,
             forcing: Optional[ForcingTerms] = None) -> SimulationResult:
    """Equilibrium, gate, assembly and the full time loop of one scenario"""
    variant = _require_variant(config)
    log = ContextLogger(__name__, {"variant": variant.value, "level": config.level, "scenario": config.preset})
    eq = equilibrium or solve_spherical(config.params)
    mesh = mesh or build_unit_square(config.level)
    moduli = effective_moduli(eq.f0, eq.phi0, config.params)
    extensions = build_extensions(config, mesh)
    forcing = forcing or build_forcing(config, mesh, eq.phi0, moduli, extensions)
    operators = assemble_operators(config, mesh, moduli, eq.phi0, extensions, forcing)

    initial = initial_state(config, mesh, eq)
    state, previous = initial, initial
    records: List[EnergyRecord] = []
    start = time.time()
    for _ in range(config.n_steps):
        nxt = step(state, config, operators)
        record = energy_residual(state, nxt, config, operators)
        records.append(record)
        logger.debug(f"step {record.step}: t={record.t:.6g}, E={record.energy:.6e}, rho={record.residual:.3e}")
        if callback is not None:
            callback(state, nxt, record)
        previous, state = state, nxt
    log_performance("simulate.time_loop", time.time() - start)
    log.info(f"Completed {config.n_steps} steps to t={state.t:.6g}, final energy {operators.energy(state):.6e}")
    return SimulationResult(config=config, equilibrium=eq, moduli=moduli, mesh=mesh, operators=operators,
                            initial=initial, previous=previous, final=state, records=records)
