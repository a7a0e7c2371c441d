"""
Numerical certification of stability for spherical and general equilibria,
and the quadratic energy form of the linearized problem about a general state.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import polar

from errors import NonSPD
from material import (EffectiveModuli, MaterialParams, effective_moduli, general_elasticity,
                      hadamard_derivatives, invariants, osmotic_pressure)

logger = logging.getLogger(__name__)


class SphericalCheck(NamedTuple):
    ok: bool
    mu0: float


class QuadraticForm(NamedTuple):
    H_value: np.ndarray
    lower_bound: np.ndarray


@dataclass(frozen=True)
class StabilityReport:
    general_ok: bool
    c2: float
    c3: float
    alpha0: float
    alpha1: float
    alpha1_margin: float
    diagonal_margin: float
    h_matrix: np.ndarray
    eigenvalues: np.ndarray
    spherical_ok: Optional[bool] = None
    mu_t_margin: Optional[float] = None
    bulk_margin: Optional[float] = None
    mu0: Optional[float] = None

    def margins(self) -> Dict[str, Any]:
        """Flat signed margins, one row of a stability table"""
        row = {k: v for k, v in asdict(self).items() if k not in ("h_matrix", "eigenvalues")}
        off = self.h_matrix[~np.eye(3, dtype=bool)]
        row["h_max_abs"] = float(np.abs(off).max())
        for i, lam in enumerate(self.eigenvalues, start=1):
            row[f"lambda{i}"] = float(lam)
        return row


def check_spherical(moduli: EffectiveModuli) -> SphericalCheck:
    """Coercivity of lambda_t*(tr A)^2 + 2*mu_t*|A|^2 over symmetric A"""
    mu_t, lam_t = moduli.mu_t, moduli.lambda_t
    ok = mu_t > 0.0 and 3.0 * lam_t + 2.0 * mu_t > 0.0
    return SphericalCheck(ok=bool(ok), mu0=float(min(2.0 * mu_t, 2.0 * mu_t + 3.0 * lam_t)))


def _right_cauchy_green(F0: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    F0 = np.asarray(F0, dtype=float)
    if F0.shape != (3, 3):
        raise NonSPD(f"expected a 3x3 deformation gradient, got shape {F0.shape}")
    if np.linalg.det(F0) <= 0.0:
        raise NonSPD(f"deformation gradient must have positive determinant, got {np.linalg.det(F0):.6g}")
    C0 = F0.T @ F0
    C0 = 0.5 * (C0 + C0.T)
    eigenvalues, Q = np.linalg.eigh(C0)
    if eigenvalues.min() <= 0.0:
        raise NonSPD(f"C0 has a nonpositive eigenvalue {eigenvalues.min():.6g}")
    return C0, eigenvalues, Q


def _h_matrix(alpha0: float, alpha1: float, eigenvalues: np.ndarray) -> np.ndarray:
    lam = eigenvalues
    h = (alpha0 + alpha1 * (lam[:, None] + lam[None, :])) / np.sqrt(np.outer(lam, lam))
    np.fill_diagonal(h, 0.0)
    return h


def check_general(F0: np.ndarray, phi1: float, params: MaterialParams) -> StabilityReport:
    """
    Stability hypotheses at a general equilibrium gradient F0.

    Besides alpha0 < 0, C2 > 0, C3 > 0 and alpha1 > max|h_ij|/2 the report carries the
    diagonal margin min_i(2*alpha1 + alpha0/(2*lambda_i)), which controls the
    principal-frame diagonal of the quadratic form and is required for general_ok.
    When C0 is a multiple of the identity the spherical margins are filled as well.
    """
    C0, eigenvalues, _ = _right_cauchy_green(F0)
    tensor = general_elasticity(C0, phi1, params)
    I1, I2, I3 = invariants(C0)
    d = hadamard_derivatives(params)(I1, I2, I3)
    pi12 = float(osmotic_pressure(phi1, params).pi12)

    c2 = d.w11 + I3 * d.w13
    c3 = I3 ** 2 * d.w33 + 0.5 * phi1 * pi12
    h = _h_matrix(tensor.alpha0, tensor.alpha1, eigenvalues)
    off = h[~np.eye(3, dtype=bool)]
    alpha1_margin = tensor.alpha1 - 0.5 * float(np.abs(off).max())
    diagonal_margin = float(np.min(2.0 * tensor.alpha1 + tensor.alpha0 / (2.0 * eigenvalues)))
    general_ok = (tensor.alpha0 < 0.0 and c2 > 0.0 and c3 > 0.0
                  and alpha1_margin > 0.0 and diagonal_margin > 0.0)

    spherical = {}
    if np.allclose(eigenvalues, eigenvalues.mean(), rtol=1e-12, atol=0.0):
        moduli = effective_moduli(float(np.sqrt(eigenvalues.mean())), phi1, params)
        check = check_spherical(moduli)
        spherical = {
            "spherical_ok": check.ok,
            "mu_t_margin": moduli.mu_t,
            "bulk_margin": 3.0 * moduli.lambda_t + 2.0 * moduli.mu_t,
            "mu0": check.mu0,
        }

    return StabilityReport(
        general_ok=bool(general_ok),
        c2=float(c2),
        c3=float(c3),
        alpha0=float(tensor.alpha0),
        alpha1=float(tensor.alpha1),
        alpha1_margin=float(alpha1_margin),
        diagonal_margin=diagonal_margin,
        h_matrix=h,
        eigenvalues=eigenvalues,
        **spherical,
    )


def certify(state, params: MaterialParams) -> StabilityReport:
    """Full report at the spherical equilibrium F0 = f0*I of a solved state"""
    report = check_general(state.f0 * np.eye(3), state.phi0, params)
    logger.info(
        f"Stability at f0={state.f0:.6g}: spherical_ok={report.spherical_ok} "
        f"(mu_t={report.mu_t_margin:.4g}, bulk={report.bulk_margin:.4g}), general_ok={report.general_ok}"
    )
    return report


def _batched(grad_u: np.ndarray) -> Tuple[np.ndarray, bool]:
    G = np.asarray(grad_u, dtype=float)
    if G.shape[-2:] != (3, 3):
        raise ValueError(f"gradient must have trailing shape (3, 3), got {G.shape}")
    single = G.ndim == 2
    return (G[None] if single else G.reshape(-1, 3, 3)), single


def _trace(M: np.ndarray) -> np.ndarray:
    return np.einsum("nii->n", M)


def _frob(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nij->n", A, B)


def quadratic_form_parts(F0: np.ndarray, phi1: float, grad_u: np.ndarray,
                         params: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """The two pieces H1 (trace and alpha0 terms) and H2 (alpha0/alpha1 cross terms)"""
    F0 = np.asarray(F0, dtype=float)
    report = check_general(F0, phi1, params)
    G, single = _batched(grad_u)
    F_inv = np.linalg.inv(F0)

    tr_1 = _trace(np.einsum("nji,jk->nik", G, F0))
    tr_2 = _trace(np.einsum("ij,njk->nik", F_inv, G))
    GF_inv = np.einsum("nij,jk->nik", G, F_inv)
    H1 = report.c2 * tr_1 ** 2 + report.c3 * tr_2 ** 2 - 0.5 * report.alpha0 * _frob(GF_inv, GF_inv)

    X = np.einsum("ji,nkj->nik", F_inv, G)           # F0^-T grad_u^T
    Y = np.einsum("ij,nkj->nik", F0, G)              # F0 grad_u^T
    H2 = (0.5 * report.alpha0 * _trace(X @ X)
          + report.alpha1 * (_frob(Y, GF_inv) + _frob(G, G)))
    if single:
        return H1[0], H2[0]
    return H1.reshape(np.shape(grad_u)[:-2]), H2.reshape(np.shape(grad_u)[:-2])


def quadratic_form_H(F0: np.ndarray, phi1: float, grad_u: np.ndarray,
                     params: MaterialParams) -> QuadraticForm:
    """
    Quadratic energy density H = H1 + H2 of a perturbation gradient and its
    guaranteed lower bound |alpha0|/2*|grad_u F0^-1|^2 + C2*tr^2 + C3*tr^2.

    grad_u may be a single 3x3 tensor or a stack of them.
    """
    F0 = np.asarray(F0, dtype=float)
    report = check_general(F0, phi1, params)
    H1, H2 = quadratic_form_parts(F0, phi1, grad_u, params)
    G, single = _batched(grad_u)
    F_inv = np.linalg.inv(F0)
    GF_inv = np.einsum("nij,jk->nik", G, F_inv)
    tr_1 = _trace(np.einsum("nji,jk->nik", G, F0))
    tr_2 = _trace(np.einsum("ij,njk->nik", F_inv, G))
    bound = (0.5 * abs(report.alpha0) * _frob(GF_inv, GF_inv)
             + report.c2 * tr_1 ** 2 + report.c3 * tr_2 ** 2)
    bound = bound[0] if single else bound.reshape(np.shape(grad_u)[:-2])
    return QuadraticForm(H_value=H1 + H2, lower_bound=bound)


def h2_eigenbasis(F0: np.ndarray, grad_u: np.ndarray, alpha0: float, alpha1: float) -> float:
    """
    H2 evaluated in the principal frame of C0 through N = Q^T grad_u^T R Q, with R the
    rotation of the right polar decomposition of F0 and Q the eigenvectors of C0.
    """
    _, eigenvalues, Q = _right_cauchy_green(F0)
    R, _ = polar(np.asarray(F0, dtype=float), side="right")
    N = Q.T @ np.asarray(grad_u, dtype=float).T @ R @ Q
    h = _h_matrix(alpha0, alpha1, eigenvalues)
    off = ~np.eye(3, dtype=bool)
    diagonal = np.sum(np.diag(N) ** 2 * (2.0 * alpha1 + alpha0 / (2.0 * eigenvalues)))
    gamma = h * N * N.T
    return float(diagonal + 0.5 * gamma[off].sum() + alpha1 * np.sum(N[off] ** 2))
