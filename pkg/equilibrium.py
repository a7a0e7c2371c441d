"""
Stress-free spherical equilibrium of the gel and the uniqueness inequality.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from errors import DomainError, EquilibriumError, MultipleRoots, NoBracket
from material import MaterialParams, StressCoefficients, osmotic_pressure, stress_coefficients

logger = logging.getLogger(__name__)

GRID_POINTS = 10_000
PHI_LO = 1.0e-4
PHI_HI = 1.0 - 1.0e-4
BISECT_XTOL = 1.0e-12
NEWTON_STEPS = 2


@dataclass(frozen=True)
class EquilibriumState:
    f0: float
    phi0: float
    I1: float
    I3: float
    residual: float
    kappa0: float
    nu0: float
    coefficients: StressCoefficients
    roots: Tuple[float, ...] = ()
    phi_star: Optional[float] = None
    diagnostics: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def multiple_roots(self) -> bool:
        return len(self.roots) > 1

    def as_dict(self) -> dict:
        return {
            "f0": self.f0,
            "phi0": self.phi0,
            "I1": self.I1,
            "I3": self.I3,
            "residual": self.residual,
            "kappa0": self.kappa0,
            "nu0": self.nu0,
            "n_roots": len(self.roots),
            "phi_star": self.phi_star,
        }


def _check_open_fraction(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if not np.all((phi > 0.0) & (phi < 1.0)):
        raise DomainError(f"volume fraction must lie in (0, 1), got {phi}")
    return phi


def equilibrium_residual(phi, params: MaterialParams):
    """Left minus right side of the spherical stress-free balance nu*f^2 = kappa written in phi"""
    phi = _check_open_fraction(phi)
    p = params
    ratio = p.phi_I / phi
    pi = osmotic_pressure(phi, p).pi
    lhs = pi / (p.mu_E * phi) + p.alpha * ratio ** (-2.0 * p.r) - p.a3 * ratio ** (2.0 * p.q_exp)
    rhs = p.a1 * 3.0 ** (p.s - 1.0) * ratio ** (2.0 * p.s / 3.0)
    return lhs - rhs


def equilibrium_residual_derivative(phi, params: MaterialParams):
    phi = _check_open_fraction(phi)
    p = params
    osm = osmotic_pressure(phi, p)
    d_osmotic = (osm.pi12 * phi - osm.pi) / (p.mu_E * phi ** 2)
    d_alpha = 2.0 * p.r * p.alpha * phi ** (2.0 * p.r - 1.0) / p.phi_I ** (2.0 * p.r)
    d_a3 = 2.0 * p.q_exp * p.a3 * p.phi_I ** (2.0 * p.q_exp) * phi ** (-2.0 * p.q_exp - 1.0)
    e = 2.0 * p.s / 3.0
    d_a1 = e * p.a1 * 3.0 ** (p.s - 1.0) * p.phi_I ** e * phi ** (-e - 1.0)
    return d_osmotic + d_alpha + d_a3 + d_a1


def _spherical_kappa(phi, params: MaterialParams):
    phi = _check_open_fraction(phi)
    p = params
    ratio = p.phi_I / phi
    pi = osmotic_pressure(phi, p).pi
    return pi / (p.mu_E * phi) + p.alpha * ratio ** (-2.0 * p.r) - p.a3 * ratio ** (2.0 * p.q_exp)


def _bracket_roots(func, params: MaterialParams, n_grid: int) -> List[float]:
    grid = np.linspace(PHI_LO, PHI_HI, n_grid)
    values = func(grid, params)
    roots: List[float] = []
    for i in range(n_grid - 1):
        v0, v1 = values[i], values[i + 1]
        if not (np.isfinite(v0) and np.isfinite(v1)):
            continue
        if v0 == 0.0:
            roots.append(float(grid[i]))
        elif v0 * v1 < 0.0:
            roots.append(float(bisect(func, grid[i], grid[i + 1], args=(params,), xtol=BISECT_XTOL)))
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def _newton_polish(phi: float, params: MaterialParams) -> float:
    best = phi
    best_res = abs(float(equilibrium_residual(phi, params)))
    for _ in range(NEWTON_STEPS):
        slope = float(equilibrium_residual_derivative(best, params))
        if slope == 0.0 or not np.isfinite(slope):
            break
        candidate = best - float(equilibrium_residual(best, params)) / slope
        if not 0.0 < candidate < 1.0:
            break
        res = abs(float(equilibrium_residual(candidate, params)))
        if res > best_res:
            break
        best, best_res = candidate, res
    return best


def find_phi_star(params: MaterialParams, n_grid: int = GRID_POINTS) -> Optional[float]:
    """Smallest volume fraction on the spherical branch where kappa changes sign"""
    roots = _bracket_roots(_spherical_kappa, params, n_grid)
    return roots[0] if roots else None


def uniqueness_condition(params: MaterialParams) -> Tuple[bool, float, float]:
    p = params
    lhs = p.alpha / p.phi_I
    rhs = (p.a1 * 3.0 ** (p.s - 1.0) * p.phi_I ** (2.0 * p.s / 3.0)
           + p.a3 * p.phi_I ** (2.0 * p.q_exp)
           + p.fh_scale * (p.c + p.b - p.a) / p.mu_E)
    return bool(lhs > rhs), float(lhs), float(rhs)


def solve_spherical(params: MaterialParams, n_grid: int = GRID_POINTS) -> EquilibriumState:
    """
    Bracket the equilibrium residual on a uniform grid, refine by bisection and
    polish with Newton steps. The smallest root is returned when several exist.
    """
    roots = _bracket_roots(equilibrium_residual, params, n_grid)
    if not roots:
        raise NoBracket(f"equilibrium residual has no sign change on ({PHI_LO}, {PHI_HI})")

    diagnostics: List[str] = []
    if len(roots) > 1:
        holds, lhs, rhs = uniqueness_condition(params)
        message = (f"{len(roots)} spherical equilibria found at phi={['%.6g' % r for r in roots]}; "
                   f"uniqueness condition {'holds' if holds else 'fails'} (lhs={lhs:.6g}, rhs={rhs:.6g}); "
                   f"returning the smallest root")
        diagnostics.append(message)
        logger.warning(message)
        warnings.warn(message, MultipleRoots, stacklevel=2)

    phi0 = _newton_polish(roots[0], params)
    f0 = (params.phi_I / phi0) ** (1.0 / 3.0)
    I1 = 3.0 * f0 ** 2
    I3 = f0 ** 6
    coefficients = stress_coefficients(I1, I3, phi0, params)
    if not coefficients.kappa > 0.0:
        raise EquilibriumError(f"kappa0={coefficients.kappa:.6g} is not positive at phi0={phi0:.6g}")

    residual = float(equilibrium_residual(phi0, params))
    phi_star = find_phi_star(params, n_grid)
    logger.info(f"Spherical equilibrium: f0={f0:.10g}, phi0={phi0:.10g}, residual={residual:.3e}")
    return EquilibriumState(
        f0=f0,
        phi0=phi0,
        I1=I1,
        I3=I3,
        residual=residual,
        kappa0=coefficients.kappa,
        nu0=coefficients.nu,
        coefficients=coefficients,
        roots=tuple(roots),
        phi_star=phi_star,
        diagnostics=tuple(diagnostics),
    )
