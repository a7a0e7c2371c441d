"""
Constitutive laws of the gel: Flory-Huggins mixing energy, osmotic pressure,
the Hadamard elastic energy and the linearized moduli about a spherical state.

All quantities are evaluated in whatever unit system the MaterialParams carry;
after MaterialParams.nondimensional the stress scale is mu_E and mu_E == 1.
"""

import logging
from dataclasses import dataclass, fields, replace
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from errors import DomainError, InvalidParameter, NonSPD

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Scales:
    """Reference scales used to nondimensionalize a scenario"""

    stress: float = 1.0e9   # mu_E, Pa
    time: float = 0.1       # eta1 / mu_E, s
    length: float = 0.01    # m

    @classmethod
    def from_dimensional(cls, mu_E: float, eta1: float, length: float = 0.01) -> "Scales":
        if mu_E <= 0 or eta1 <= 0 or length <= 0:
            raise InvalidParameter("scales require mu_E, eta1 and length > 0")
        return cls(stress=mu_E, time=eta1 / mu_E, length=length)

    @property
    def viscosity(self) -> float:
        return self.stress * self.time

    @property
    def drag(self) -> float:
        return self.viscosity / self.length ** 2


@dataclass(frozen=True)
class MaterialParams:
    """All constitutive constants of the gel in one validated record"""

    a: float = 0.01
    b: float = 1.0
    c: float = 0.25
    chi: float = 0.5
    fh_scale: float = 1.0
    mu_E: float = 1.0
    a1: float = 1.0
    a3: float = 1.0
    alpha: float = 1.0
    s: float = 1.0
    q_exp: float = 1.0
    r: float = 1.0
    phi_I: float = 0.5
    eta1: float = 1.0
    eta2: float = 0.1
    mu1: float = 1.0
    mu2: float = 0.1
    beta_drag: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value):
                raise InvalidParameter(f"{f.name} must be finite, got {value}")
        if not 0.0 < self.phi_I < 1.0:
            raise InvalidParameter(f"phi_I must lie in (0, 1), got {self.phi_I}")
        if self.mu_E <= 0:
            raise InvalidParameter(f"mu_E must be positive, got {self.mu_E}")
        if self.fh_scale <= 0:
            raise InvalidParameter(f"fh_scale must be positive, got {self.fh_scale}")
        for name in ("a1", "a3", "alpha"):
            if getattr(self, name) <= 0:
                raise InvalidParameter(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("s", "q_exp", "r"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"exponent {name} must be >= 1, got {getattr(self, name)}")
        for name in ("eta1", "eta2", "mu1", "mu2"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"viscosity {name} must be non-negative, got {getattr(self, name)}")
        if self.beta_drag <= 0:
            raise InvalidParameter(f"beta_drag must be positive, got {self.beta_drag}")

    @classmethod
    def from_flory(cls, chi: float, N1: float = 100.0, N2: float = 1.0, **rest) -> "MaterialParams":
        """Build the mixing coefficients from the Flory parameter and chain lengths"""
        if N1 <= 0 or N2 <= 0:
            raise InvalidParameter(f"chain lengths must be positive, got N1={N1}, N2={N2}")
        return cls(a=1.0 / N1, b=1.0 / N2, c=chi / 2.0, chi=chi, **rest)

    def with_chi(self, chi: float) -> "MaterialParams":
        return replace(self, chi=chi, c=chi / 2.0)

    def nondimensional(self, scales: Scales) -> "MaterialParams":
        """Divide stresses by the stress scale, viscosities by eta1 and drag by eta1/L^2"""
        return replace(
            self,
            mu_E=self.mu_E / scales.stress,
            fh_scale=self.fh_scale / scales.stress,
            eta1=self.eta1 / scales.viscosity,
            eta2=self.eta2 / scales.viscosity,
            mu1=self.mu1 / scales.viscosity,
            mu2=self.mu2 / scales.viscosity,
            beta_drag=self.beta_drag / scales.drag,
        )


class MixingEnergy(NamedTuple):
    G: ArrayLike
    G1: ArrayLike
    G2: ArrayLike
    G11: ArrayLike
    G12: ArrayLike
    G22: ArrayLike


class OsmoticPressure(NamedTuple):
    pi: ArrayLike
    pi1: ArrayLike
    pi2: ArrayLike
    pi12: ArrayLike


class InvariantDerivatives(NamedTuple):
    """First and second partials of an isotropic energy w(I1, I2, I3)"""

    w1: float
    w2: float
    w3: float
    w11: float
    w12: float
    w13: float
    w22: float
    w23: float
    w33: float


DerivativeProvider = Callable[[float, float, float], InvariantDerivatives]


@dataclass(frozen=True)
class StressCoefficients:
    nu: float
    kappa: float
    beta0: float
    beta1: float
    beta2: float

    def cauchy(self, B: np.ndarray) -> np.ndarray:
        """Total stress beta0*I + beta1*B + beta2*B^-1 for a left Cauchy-Green tensor B"""
        B = np.asarray(B, dtype=float)
        out = self.beta0 * np.eye(3) + self.beta1 * B
        if self.beta2 != 0.0:
            out = out + self.beta2 * np.linalg.inv(B)
        return out


@dataclass(frozen=True)
class EffectiveModuli:
    lambda_t: float
    mu_t: float
    lambda_iso: float
    mu_iso: float
    kappa_perm: float


class ElasticityTensor(NamedTuple):
    alpha0: float
    alpha1: float
    alpha2: float
    A1: float
    A2: float
    A3: float
    apply: Callable[[np.ndarray], np.ndarray]


def _check_fraction(phi1: ArrayLike, closed_left: bool = False) -> np.ndarray:
    phi = np.asarray(phi1, dtype=float)
    low_ok = phi >= 0.0 if closed_left else phi > 0.0
    if not np.all(low_ok & (phi < 1.0)):
        raise DomainError(f"volume fraction outside the admissible interval: {phi1}")
    return phi


def mixing_energy(phi1: ArrayLike, params: MaterialParams) -> MixingEnergy:
    """Flory-Huggins energy G(phi1, phi2) and its partials, restricted to phi1 + phi2 = 1"""
    phi = _check_fraction(phi1)
    phi2 = 1.0 - phi
    a, b, c, k = params.a, params.b, params.c, params.fh_scale
    G = a * phi * np.log(phi) + b * phi2 * np.log(phi2) + c * phi * phi2
    G1 = a * (np.log(phi) + 1.0) + c * phi2
    G2 = b * (np.log(phi2) + 1.0) + c * phi
    G11 = a / phi
    G12 = c * np.ones_like(phi)
    G22 = b / phi2
    return MixingEnergy(k * G, k * G1, k * G2, k * G11, k * G12, k * G22)


def osmotic_pressure(phi1: ArrayLike, params: MaterialParams) -> OsmoticPressure:
    """
    Osmotic pressure pi = phi1*(G1 - G2) - G and its partials.

    pi1 and pi2 are the partials in phi1 and phi2 of
    pi(phi1, phi2) = a*phi1 - b*phi1*(ln phi2 + 1) - c*phi1**2 - b*phi2*ln phi2,
    taken before substituting phi2 = 1 - phi1. pi12 = pi1 - pi2 is the slope
    of pi along the saturated line. The saturated value stays finite as
    phi1 -> 0 where pi -> 0.
    """
    phi = _check_fraction(phi1, closed_left=True)
    phi2 = 1.0 - phi
    a, b, c, k = params.a, params.b, params.c, params.fh_scale
    log2 = np.log(phi2)
    pi = (a - b) * phi - c * phi ** 2 - b * log2
    pi1 = a - b * (log2 + 1.0) - 2.0 * c * phi
    pi2 = -b * phi / phi2 - b * (log2 + 1.0)
    pi12 = a - b - 2.0 * c * phi + b / phi2
    return OsmoticPressure(k * pi, k * pi1, k * pi2, k * pi12)



def _check_invariants(I1: float, I3: float) -> None:
    if I1 <= 0 or I3 <= 0:
        raise DomainError(f"invariants must be positive, got I1={I1}, I3={I3}")


def hadamard_energy(I1: float, I3: float, params: MaterialParams) -> float:
    _check_invariants(I1, I3)
    p = params
    return 0.5 * p.mu_E * (
        p.a1 * I1 ** p.s / p.s + p.alpha * I3 ** (-p.r) / p.r + p.a3 * I3 ** p.q_exp / p.q_exp
    )


def hadamard_derivatives(params: MaterialParams) -> DerivativeProvider:
    """Closed-form partials of the Hadamard energy as a derivative provider"""
    p = params
    half = 0.5 * p.mu_E

    def provider(I1: float, I2: float, I3: float) -> InvariantDerivatives:
        _check_invariants(I1, I3)
        return InvariantDerivatives(
            w1=half * p.a1 * I1 ** (p.s - 1.0),
            w2=0.0,
            w3=half * (-p.alpha * I3 ** (-p.r - 1.0) + p.a3 * I3 ** (p.q_exp - 1.0)),
            w11=half * p.a1 * (p.s - 1.0) * I1 ** (p.s - 2.0),
            w12=0.0,
            w13=0.0,
            w22=0.0,
            w23=0.0,
            w33=half * (p.alpha * (p.r + 1.0) * I3 ** (-p.r - 2.0)
                        + p.a3 * (p.q_exp - 1.0) * I3 ** (p.q_exp - 2.0)),
        )

    return provider


def stress_coefficients(I1: float, I3: float, phi1: float, params: MaterialParams) -> StressCoefficients:
    _check_invariants(I1, I3)
    pi = float(osmotic_pressure(phi1, params).pi)
    p = params
    sqrt_I3 = np.sqrt(I3)
    nu = p.a1 * I1 ** (p.s - 1.0)
    kappa = pi * sqrt_I3 / (p.mu_E * p.phi_I) + p.alpha * I3 ** (-p.r) - p.a3 * I3 ** p.q_exp
    scale = p.phi_I * p.mu_E / sqrt_I3
    return StressCoefficients(nu=nu, kappa=kappa, beta0=-scale * kappa, beta1=scale * nu, beta2=0.0)


def invariants(C: np.ndarray):
    C = np.asarray(C, dtype=float)
    I1 = float(np.trace(C))
    I2 = 0.5 * (I1 ** 2 - float(np.tensordot(C, C)))
    I3 = float(np.linalg.det(C))
    return I1, I2, I3


def _check_spd(C0: np.ndarray) -> np.ndarray:
    C0 = np.asarray(C0, dtype=float)
    if C0.shape != (3, 3):
        raise NonSPD(f"expected a 3x3 tensor, got shape {C0.shape}")
    scale = max(np.abs(C0).max(), 1.0)
    if not np.allclose(C0, C0.T, atol=1e-12 * scale):
        raise NonSPD("tensor is not symmetric")
    eigenvalues = np.linalg.eigvalsh(C0)
    if eigenvalues.min() <= 1e-14 * scale:
        raise NonSPD(f"tensor is not positive definite (eigenvalues {eigenvalues})")
    return 0.5 * (C0 + C0.T)


def general_elasticity(C0: np.ndarray, phi1: float, params: MaterialParams,
                       derivatives: Optional[DerivativeProvider] = None) -> ElasticityTensor:
    """
    Coefficients alpha0..alpha2, the sums A1..A3 and an evaluator of the fourth-order
    tensor 2 d^2w/dC^2 at C0.

    Any isotropic energy can be supplied through ``derivatives``; the Hadamard
    energy of ``params`` is used otherwise.
    """
    C0 = _check_spd(C0)
    _check_fraction(phi1)
    provider = derivatives or hadamard_derivatives(params)
    I1, I2, I3 = invariants(C0)
    d = provider(I1, I2, I3)

    alpha0 = I3 * d.w3
    alpha1 = d.w1 + I1 * d.w2
    alpha2 = -d.w2
    A1 = d.w11 + d.w2 + I1 * d.w12 - d.w12 + I3 * d.w13
    A2 = d.w12 + I1 * d.w22 - d.w22 + I3 * d.w23
    A3 = d.w13 + I1 * d.w23 - d.w23 + d.w3 + I3 * d.w33
    C_inv = np.linalg.inv(C0)
    identity = np.eye(3)

    def apply(A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        trA = np.trace(A)
        dI1 = trA
        dI2 = I1 * trA - np.tensordot(C0, A)
        dI3 = I3 * np.tensordot(C_inv, A)
        d_alpha1 = ((d.w11 + d.w2 + I1 * d.w12) * dI1 + (d.w12 + I1 * d.w22) * dI2
                    + (d.w13 + I1 * d.w23) * dI3)
        d_alpha2 = -(d.w12 * dI1 + d.w22 * dI2 + d.w23 * dI3)
        d_alpha0 = I3 * (d.w13 * dI1 + d.w23 * dI2) + (d.w3 + I3 * d.w33) * dI3
        return 2.0 * (d_alpha1 * identity + d_alpha2 * C0 + alpha2 * A
                      + d_alpha0 * C_inv - alpha0 * C_inv @ A @ C_inv)

    return ElasticityTensor(alpha0, alpha1, alpha2, A1, A2, A3, apply)


def _linearized_moduli(f0: float, phi0: float, params: MaterialParams,
                       lambda_iso: float, mu_iso: float, tensor: ElasticityTensor) -> EffectiveModuli:
    osm = osmotic_pressure(phi0, params)
    f2 = f0 * f0
    # reference stress 2*phi_I*dw/dC at C0 = f0^2 I, a multiple of I
    p0 = 2.0 * params.phi_I * (tensor.alpha1 + tensor.alpha2 * f2 + tensor.alpha0 / f2)
    mu_t = 2.0 * params.phi_I * mu_iso + p0 / f2
    lambda_t = phi0 * float(osm.pi12) / f0 - p0 / f2 + 2.0 * params.phi_I * lambda_iso
    return EffectiveModuli(
        lambda_t=lambda_t,
        mu_t=mu_t,
        lambda_iso=lambda_iso,
        mu_iso=mu_iso,
        kappa_perm=(1.0 - phi0) ** 2 / params.beta_drag,
    )


def _check_state(f0: float, phi0: float) -> None:
    if f0 <= 0:
        raise DomainError(f"stretch must be positive, got {f0}")
    _check_fraction(phi0)


def effective_moduli(f0: float, phi0: float, params: MaterialParams) -> EffectiveModuli:
    """
    Linearized moduli of the total stress about the spherical state F0 = f0*I.

    For the Hadamard energy mu_t = phi_I*mu_E*nu/f0^2, and lambda_t combines the
    osmotic stiffness, the reference stress and the spherical tensor modulus.
    """
    _check_state(f0, phi0)
    f2 = f0 * f0
    C0 = f2 * np.eye(3)
    tensor = general_elasticity(C0, phi0, params)
    d = hadamard_derivatives(params)(3.0 * f2, 3.0 * f2 * f2, f2 ** 3)
    I3 = f2 ** 3
    lambda_iso = 2.0 * (d.w11 + f2 * (d.w3 + I3 * d.w33))
    mu_iso = -tensor.alpha0 / (f2 * f2)
    moduli = _linearized_moduli(f0, phi0, params, lambda_iso, mu_iso, tensor)
    nu = params.a1 * (3.0 * f2) ** (params.s - 1.0)
    mu_closed = params.phi_I * params.mu_E * nu / f2
    if not np.isclose(moduli.mu_t, mu_closed, rtol=1e-10, atol=1e-14):
        logger.warning(f"mu_t mismatch between tensor route {moduli.mu_t} and closed form {mu_closed}")
    return replace(moduli, mu_t=mu_closed)


def effective_moduli_from_tensor(f0: float, phi0: float, params: MaterialParams,
                                 derivatives: Optional[DerivativeProvider] = None) -> EffectiveModuli:
    """Same moduli extracted by applying the general tensor evaluator at C0 = f0^2 I"""
    _check_state(f0, phi0)
    f2 = f0 * f0
    tensor = general_elasticity(f2 * np.eye(3), phi0, params, derivatives)
    shear = np.zeros((3, 3))
    shear[0, 1] = shear[1, 0] = 1.0
    mu_iso = 0.5 * tensor.apply(shear)[0, 1]
    bulk = tensor.apply(np.eye(3))[0, 0]
    lambda_iso = (bulk - 2.0 * mu_iso) / 3.0
    return _linearized_moduli(f0, phi0, params, lambda_iso, mu_iso, tensor)
