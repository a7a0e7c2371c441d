"""
Finite element core: quadrature, P1/P2 spaces, form assembly, Dirichlet
elimination and sparse solvers.

Vector P2 coefficients are stored component-blocked: dof = comp * n_nodes + node,
with P2 nodes numbered vertices first and edge midpoints after.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, singledispatch
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu
from scipy.sparse.linalg import norm as sparse_norm

from errors import DimensionMismatch, DirichletConflict, IterationLimit, SingularMatrix
from logging_config import log_performance
from mesh import BoundaryTag, Mesh

logger = logging.getLogger(__name__)

# Symmetric 6-point rule, exact for polynomials of degree 4 (weights sum to 1)
_QA, _WA = 0.44594849091596488, 0.22338158967801147
_QB, _WB = 0.091576213509770743, 0.10995174365532187
QUAD_POINTS = np.array([
    [_QA, _QA, 1.0 - 2.0 * _QA],
    [_QA, 1.0 - 2.0 * _QA, _QA],
    [1.0 - 2.0 * _QA, _QA, _QA],
    [_QB, _QB, 1.0 - 2.0 * _QB],
    [_QB, 1.0 - 2.0 * _QB, _QB],
    [1.0 - 2.0 * _QB, _QB, _QB],
])
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])

# Gauss-Legendre points on [0, 1] for edge integrals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
EDGE_POINTS = 0.5 * (_GL_X + 1.0)
EDGE_WEIGHTS = 0.5 * _GL_W

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

Coefficient = Union[float, np.ndarray]
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray, np.ndarray], Sequence[np.ndarray]]


class SpaceKind(Enum):
    SCALAR_P1 = "ScalarP1"
    SCALAR_P2 = "ScalarP2"
    VECTOR_P2 = "VectorP2"


def p1_values(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary, dtype=float)


def p2_values(bary: np.ndarray) -> np.ndarray:
    L = np.asarray(bary, dtype=float)
    vertex = L * (2.0 * L - 1.0)
    edge = np.stack([4.0 * L[..., i] * L[..., j] for i, j in _LOCAL_EDGES], axis=-1)
    return np.concatenate([vertex, edge], axis=-1)


def p2_gradients(bary: np.ndarray, grad_L: np.ndarray) -> np.ndarray:
    """P2 basis gradients; bary (..., 3) per point, grad_L (nt, 3, 2) per triangle"""
    L = np.asarray(bary, dtype=float)
    vertex = (4.0 * L - 1.0)[..., :, None] * grad_L
    edge = [4.0 * (L[..., j, None] * grad_L[..., i, :] + L[..., i, None] * grad_L[..., j, :])
            for i, j in _LOCAL_EDGES]
    return np.concatenate([vertex, np.stack(edge, axis=-2)], axis=-2)


@dataclass(frozen=True, eq=False)
class FemSpace:
    mesh: Mesh
    kind: SpaceKind

    @property
    def degree(self) -> int:
        return 1 if self.kind is SpaceKind.SCALAR_P1 else 2

    @property
    def is_vector(self) -> bool:
        return self.kind is SpaceKind.VECTOR_P2

    @property
    def n_components(self) -> int:
        return 2 if self.is_vector else 1

    @property
    def n_nodes(self) -> int:
        if self.degree == 1:
            return self.mesh.n_vertices
        return self.mesh.n_vertices + self.mesh.n_edges

    @property
    def dof_count(self) -> int:
        return self.n_components * self.n_nodes

    @property
    def n_local(self) -> int:
        return 3 if self.degree == 1 else 6

    @cached_property
    def node_map(self) -> np.ndarray:
        """Triangle -> scalar node indices"""
        if self.degree == 1:
            return self.mesh.triangles
        return np.hstack([self.mesh.triangles, self.mesh.n_vertices + self.mesh.triangle_edges])

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Triangle -> global dofs, component-major for vector spaces"""
        if self.is_vector:
            return np.hstack([self.node_map, self.n_nodes + self.node_map])
        return self.node_map

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        if self.degree == 1:
            return self.mesh.vertices
        v = self.mesh.vertices
        midpoints = 0.5 * (v[self.mesh.edges[:, 0]] + v[self.mesh.edges[:, 1]])
        return np.vstack([v, midpoints])

    def boundary_nodes(self, tag: BoundaryTag) -> np.ndarray:
        """Scalar nodes on a boundary part; GAMMAP excludes the corners owned by GAMMA0"""
        vertices = self.mesh.boundary_vertices(tag)
        if self.degree == 1:
            return vertices
        return np.concatenate([vertices, self.mesh.n_vertices + self.mesh.boundary_edges(tag)])

    @cached_property
    def boundary_dofs(self) -> Dict[BoundaryTag, np.ndarray]:
        out = {}
        for tag in (BoundaryTag.GAMMA0, BoundaryTag.GAMMAP):
            nodes = self.boundary_nodes(tag)
            if self.is_vector:
                nodes = np.concatenate([nodes, self.n_nodes + nodes])
            out[tag] = np.sort(nodes)
        return out

    # geometry -------------------------------------------------------------

    @cached_property
    def grad_barycentric(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the barycentric coordinates"""
        p = self.mesh.vertices[self.mesh.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        g1 = np.stack([d2[:, 1], -d2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-d1[:, 1], d1[:, 0]], axis=1) / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    @cached_property
    def quadrature_points(self) -> np.ndarray:
        """(nt, nq, 2) physical quadrature points"""
        p = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qi,tic->tqc", QUAD_POINTS, p)

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        """(nt, nq) weights including the element area"""
        return np.abs(self.mesh.signed_areas)[:, None] * QUAD_WEIGHTS[None, :]

    @cached_property
    def basis_values(self) -> np.ndarray:
        """(nq, n_local) scalar basis at the reference quadrature points"""
        return p1_values(QUAD_POINTS) if self.degree == 1 else p2_values(QUAD_POINTS)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """(nt, nq, n_local, 2) physical gradients of the scalar basis"""
        G = self.grad_barycentric
        if self.degree == 1:
            return np.broadcast_to(G[:, None], (G.shape[0], len(QUAD_WEIGHTS), 3, 2))
        bary = np.broadcast_to(QUAD_POINTS, (G.shape[0],) + QUAD_POINTS.shape)
        return p2_gradients(bary, G[:, None])

    # fields ---------------------------------------------------------------

    def _components(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.dof_count,):
            raise DimensionMismatch(f"{self.kind.value} expects {self.dof_count} coefficients, got {coeffs.shape}")
        return coeffs.reshape(self.n_components, self.n_nodes)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant; vector callables return the pair (f_x, f_y)"""
        x, y = self.node_coordinates[:, 0], self.node_coordinates[:, 1]
        if self.is_vector:
            return evaluate_vector(func, x, y).reshape(-1)
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape).copy()

    def values_at_quadrature(self, coeffs: np.ndarray) -> np.ndarray:
        """(nt, nq) for scalar spaces, (nt, nq, 2) for vector spaces"""
        comps = self._components(coeffs)
        local = comps[:, self.node_map]                       # (c, nt, nl)
        vals = np.einsum("ql,ctl->tqc", self.basis_values, local)
        return vals if self.is_vector else vals[..., 0]

    def gradients_at_quadrature(self, coeffs: np.ndarray) -> np.ndarray:
        """(nt, nq, 2) for scalar spaces, (nt, nq, 2, 2) indexed [component, derivative] for vector spaces"""
        comps = self._components(coeffs)
        local = comps[:, self.node_map]
        grads = np.einsum("tqld,ctl->tqcd", self.basis_gradients, local)
        return grads if self.is_vector else grads[..., 0, :]

    def interpolant(self, coeffs: np.ndarray, gradient: bool = False) -> Callable:
        """Point evaluation of a discrete field (or its gradient) on a structured mesh"""
        comps = self._components(coeffs)

        def evaluate(x, y):
            shape = np.shape(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))[0])
            xf = np.broadcast_to(x, shape).ravel()
            yf = np.broadcast_to(y, shape).ravel()
            tri, bary = self.mesh.locate(xf, yf)
            local = comps[:, self.node_map[tri]]              # (c, n, nl)
            if gradient:
                G = self.grad_barycentric[tri]
                basis = G[:, :, :] if self.degree == 1 else p2_gradients(bary, G)
                out = np.einsum("nld,cnl->cnd", basis, local)
                out = out.reshape((self.n_components,) + shape + (2,))
            else:
                basis = p1_values(bary) if self.degree == 1 else p2_values(bary)
                out = np.einsum("nl,cnl->cn", basis, local).reshape((self.n_components,) + shape)
            return out if self.is_vector else out[0]

        return evaluate

    def l2_error(self, coeffs: np.ndarray, exact) -> float:
        xq = self.quadrature_points
        diff = self.values_at_quadrature(coeffs)
        if self.is_vector:
            ref = evaluate_vector(exact, xq[..., 0], xq[..., 1])
            sq = ((diff - np.moveaxis(ref, 0, -1)) ** 2).sum(axis=-1)
        else:
            ref = np.broadcast_to(np.asarray(exact(xq[..., 0], xq[..., 1]), float), diff.shape)
            sq = (diff - ref) ** 2
        return float(np.sqrt(np.sum(self.quadrature_weights * sq)))


def scalar_p1(mesh: Mesh) -> FemSpace:
    return FemSpace(mesh, SpaceKind.SCALAR_P1)


def scalar_p2(mesh: Mesh) -> FemSpace:
    return FemSpace(mesh, SpaceKind.SCALAR_P2)


def vector_p2(mesh: Mesh) -> FemSpace:
    return FemSpace(mesh, SpaceKind.VECTOR_P2)


def evaluate_vector(func, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate a vector callable into a (2, *x.shape) array, broadcasting constants"""
    values = func(x, y)
    out = np.empty((2,) + np.shape(x))
    out[0] = values[0]
    out[1] = values[1]
    return out


# sparse operators -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sp.csr_matrix
    symmetric: bool = False

    @classmethod
    def from_triplets(cls, rows, cols, values, shape: Tuple[int, int], symmetric: bool = False) -> "SparseOperator":
        matrix = sp.coo_matrix((np.ravel(values), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()
        matrix.sum_duplicates()
        return cls(matrix, symmetric)

    @classmethod
    def from_blocks(cls, blocks, symmetric: bool = False) -> "SparseOperator":
        raw = [[b.matrix if isinstance(b, SparseOperator) else b for b in row] for row in blocks]
        matrix = sp.bmat(raw, format="csr")
        matrix.sum_duplicates()
        return cls(matrix, symmetric)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> "SparseOperator":
        return SparseOperator(self.matrix.T.tocsr(), self.symmetric)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator((self.matrix @ other.matrix).tocsr())
        return self.matrix @ other

    def scaled(self, factor: float) -> "SparseOperator":
        return SparseOperator((factor * self.matrix).tocsr(), self.symmetric)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.matrix + other.matrix).tocsr(), self.symmetric and other.symmetric)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


# forms ------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorElasticity:
    """integral of 2*mu*D(u):D(w) + lam*div(u)*div(w)"""
    lam: Coefficient
    mu: Coefficient


@dataclass(frozen=True)
class VectorViscosity:
    """integral of eta*D(v):D(w) + mu_bulk*div(v)*div(w)"""
    eta: Coefficient
    mu_bulk: Coefficient


@dataclass(frozen=True)
class ScalarDiffusion:
    kappa: Coefficient


@dataclass(frozen=True)
class Mass:
    coefficient: Coefficient = 1.0


@dataclass(frozen=True)
class DivCoupling:
    """integral of weight*div(u)*psi; rows are scalar test functions, columns vector trial dofs"""
    weight: Coefficient = 1.0


@dataclass(frozen=True)
class BoundaryTraction:
    """integral over a tagged boundary of G.w; traction(x, y, normal) returns (G_x, G_y)"""
    tag: BoundaryTag
    traction: Callable[[np.ndarray, np.ndarray, np.ndarray], Sequence[np.ndarray]]


@dataclass(frozen=True)
class BodyLoad:
    force: VectorField


@dataclass(frozen=True)
class ScalarSource:
    source: ScalarField


@dataclass(frozen=True)
class FluxSource:
    """integral of flux . grad(psi)"""
    flux: VectorField


def _per_element(coefficient: Coefficient, n_triangles: int) -> np.ndarray:
    c = np.asarray(coefficient, dtype=float)
    if c.ndim == 0:
        return np.full(n_triangles, float(c))
    if c.shape != (n_triangles,):
        raise DimensionMismatch(f"per-element coefficient must have {n_triangles} entries, got {c.shape}")
    return c


def _assemble_local(test: FemSpace, trial: FemSpace, local: np.ndarray, symmetric: bool) -> SparseOperator:
    rows = np.broadcast_to(test.dof_map[:, :, None], local.shape)
    cols = np.broadcast_to(trial.dof_map[:, None, :], local.shape)
    return SparseOperator.from_triplets(rows, cols, local, (test.dof_count, trial.dof_count), symmetric)


def _require(space: FemSpace, kinds, form) -> None:
    if space.kind not in kinds:
        raise DimensionMismatch(f"{type(form).__name__} is not defined on {space.kind.value}")


def _same_space(test: FemSpace, trial: Optional[FemSpace], form) -> FemSpace:
    trial = trial or test
    if trial.kind is not test.kind or trial.mesh is not test.mesh:
        raise DimensionMismatch(f"{type(form).__name__} needs identical trial and test spaces")
    return trial


def _gradient_products(space: FemSpace) -> np.ndarray:
    """S[t, i, j, k, l] = integral of d_k(phi_i) d_l(phi_j)"""
    g = space.basis_gradients
    return np.einsum("tq,tqik,tqjl->tijkl", space.quadrature_weights, g, g)


def _strain_matrix(space: FemSpace, two_mu: np.ndarray, lam: np.ndarray) -> SparseOperator:
    S = _gradient_products(space)
    S_dot = S[..., 0, 0] + S[..., 1, 1]
    nt, nl = S.shape[0], S.shape[1]
    local = np.zeros((nt, 2, nl, 2, nl))
    half = 0.5 * two_mu[:, None, None]
    for a in range(2):
        for b in range(2):
            block = half * S[..., b, a] + lam[:, None, None] * S[..., a, b]
            if a == b:
                block = block + half * S_dot
            local[:, a, :, b, :] = block
    return _assemble_local(space, space, local.reshape(nt, 2 * nl, 2 * nl), True)


@singledispatch
def assemble_form(form, test: FemSpace, trial: Optional[FemSpace] = None):
    """Galerkin matrix (or load vector) of a form on the given spaces"""
    raise TypeError(f"unsupported form {type(form).__name__}")


@assemble_form.register
def _(form: VectorElasticity, test: FemSpace, trial: Optional[FemSpace] = None) -> SparseOperator:
    _require(test, (SpaceKind.VECTOR_P2,), form)
    _same_space(test, trial, form)
    nt = test.mesh.n_triangles
    return _strain_matrix(test, 2.0 * _per_element(form.mu, nt), _per_element(form.lam, nt))


@assemble_form.register
def _(form: VectorViscosity, test: FemSpace, trial: Optional[FemSpace] = None) -> SparseOperator:
    _require(test, (SpaceKind.VECTOR_P2,), form)
    _same_space(test, trial, form)
    nt = test.mesh.n_triangles
    return _strain_matrix(test, _per_element(form.eta, nt), _per_element(form.mu_bulk, nt))


@assemble_form.register
def _(form: ScalarDiffusion, test: FemSpace, trial: Optional[FemSpace] = None) -> SparseOperator:
    _require(test, (SpaceKind.SCALAR_P1, SpaceKind.SCALAR_P2), form)
    _same_space(test, trial, form)
    g = test.basis_gradients
    kappa = _per_element(form.kappa, test.mesh.n_triangles)
    local = np.einsum("tq,t,tqid,tqjd->tij", test.quadrature_weights, kappa, g, g)
    return _assemble_local(test, test, local, True)


@assemble_form.register
def _(form: Mass, test: FemSpace, trial: Optional[FemSpace] = None) -> SparseOperator:
    _same_space(test, trial, form)
    c = _per_element(form.coefficient, test.mesh.n_triangles)
    phi = test.basis_values
    local = np.einsum("tq,t,qi,qj->tij", test.quadrature_weights, c, phi, phi)
    if test.is_vector:
        nt, nl = local.shape[0], local.shape[1]
        block = np.zeros((nt, 2, nl, 2, nl))
        block[:, 0, :, 0, :] = local
        block[:, 1, :, 1, :] = local
        local = block.reshape(nt, 2 * nl, 2 * nl)
    return _assemble_local(test, test, local, True)


@assemble_form.register
def _(form: DivCoupling, test: FemSpace, trial: Optional[FemSpace] = None) -> SparseOperator:
    if trial is None:
        raise DimensionMismatch("DivCoupling needs a vector trial space")
    _require(test, (SpaceKind.SCALAR_P1, SpaceKind.SCALAR_P2), form)
    _require(trial, (SpaceKind.VECTOR_P2,), form)
    if trial.mesh is not test.mesh:
        raise DimensionMismatch("DivCoupling spaces live on different meshes")
    weight = _per_element(form.weight, test.mesh.n_triangles)
    psi = test.basis_values
    g = trial.basis_gradients
    local = np.einsum("tq,t,qi,tqjb->tibj", test.quadrature_weights, weight, psi, g)
    nt = local.shape[0]
    return _assemble_local(test, trial, local.reshape(nt, test.n_local, 2 * trial.n_local), False)


@assemble_form.register
def _(form: BoundaryTraction, test: FemSpace, trial: Optional[FemSpace] = None) -> np.ndarray:
    _require(test, (SpaceKind.VECTOR_P2,), form)
    mesh = test.mesh
    edges = mesh.boundary_edges(form.tag)
    load = np.zeros(test.dof_count)
    if len(edges) == 0:
        return load
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    s = EDGE_POINTS
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]          # (ne, ng, 2)
    normals = np.broadcast_to(mesh.edge_normals[edges][:, None, :], pts.shape)
    values = form.traction(pts[..., 0], pts[..., 1], normals)
    G = np.empty((2,) + pts.shape[:2])
    G[0] = values[0]
    G[1] = values[1]
    basis = np.stack([(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)], axis=1)
    weights = EDGE_WEIGHTS[None, :] * mesh.edge_lengths[edges, None]         # (ne, ng)
    local = np.einsum("eg,ceg,gn->cen", weights, G, basis)                  # (2, ne, 3)
    nodes = np.stack([mesh.edges[edges, 0], mesh.edges[edges, 1], mesh.n_vertices + edges], axis=1)
    for comp in range(2):
        np.add.at(load, comp * test.n_nodes + nodes, local[comp])
    return load


@assemble_form.register
def _(form: BodyLoad, test: FemSpace, trial: Optional[FemSpace] = None) -> np.ndarray:
    _require(test, (SpaceKind.VECTOR_P2,), form)
    xq = test.quadrature_points
    f = evaluate_vector(form.force, xq[..., 0], xq[..., 1])                # (2, nt, nq)
    local = np.einsum("tq,ctq,ql->tcl", test.quadrature_weights, f, test.basis_values)
    load = np.zeros(test.dof_count)
    np.add.at(load, test.dof_map, local.reshape(local.shape[0], -1))
    return load


@assemble_form.register
def _(form: ScalarSource, test: FemSpace, trial: Optional[FemSpace] = None) -> np.ndarray:
    _require(test, (SpaceKind.SCALAR_P1, SpaceKind.SCALAR_P2), form)
    xq = test.quadrature_points
    h = np.broadcast_to(np.asarray(form.source(xq[..., 0], xq[..., 1]), float), xq.shape[:2])
    local = np.einsum("tq,tq,ql->tl", test.quadrature_weights, h, test.basis_values)
    load = np.zeros(test.dof_count)
    np.add.at(load, test.dof_map, local)
    return load


@assemble_form.register
def _(form: FluxSource, test: FemSpace, trial: Optional[FemSpace] = None) -> np.ndarray:
    _require(test, (SpaceKind.SCALAR_P1, SpaceKind.SCALAR_P2), form)
    xq = test.quadrature_points
    flux = evaluate_vector(form.flux, xq[..., 0], xq[..., 1])              # (2, nt, nq)
    local = np.einsum("tq,dtq,tqld->tl", test.quadrature_weights, flux, test.basis_gradients)
    load = np.zeros(test.dof_count)
    np.add.at(load, test.dof_map, local)
    return load


# boundary conditions ----------------------------------------------------------

def apply_dirichlet(op: SparseOperator, rhs: np.ndarray, dofs, values) -> Tuple[SparseOperator, np.ndarray]:
    """
    Symmetric elimination: constrained rows and columns are zeroed, the diagonal set
    to one and the right-hand side lifted by the known values.
    """
    dofs = np.asarray(dofs, dtype=np.int64).ravel()
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).astype(float)
    rhs = np.asarray(rhs, dtype=float)
    n = op.dimension
    if rhs.shape != (n,):
        raise DimensionMismatch(f"rhs has shape {rhs.shape}, operator dimension is {n}")
    if len(dofs) == 0:
        return op, rhs.copy()
    if dofs.min() < 0 or dofs.max() >= n:
        raise DimensionMismatch(f"Dirichlet dof outside [0, {n})")

    order = np.argsort(dofs, kind="stable")
    sorted_dofs, sorted_values = dofs[order], values[order]
    repeated = sorted_dofs[1:] == sorted_dofs[:-1]
    if np.any(repeated & (sorted_values[1:] != sorted_values[:-1])):
        bad = int(sorted_dofs[1:][repeated & (sorted_values[1:] != sorted_values[:-1])][0])
        raise DirichletConflict(f"dof {bad} constrained to conflicting values")

    fixed = np.zeros(n)
    fixed[sorted_dofs] = sorted_values
    mask = np.zeros(n)
    mask[sorted_dofs] = 1.0
    lifted = rhs - op.matrix @ fixed
    keep = sp.diags(1.0 - mask)
    matrix = (keep @ op.matrix @ keep + sp.diags(mask)).tocsr()
    lifted = (1.0 - mask) * lifted + mask * fixed
    return SparseOperator(matrix, op.symmetric), lifted


# solvers ------------------------------------------------------------------------

RESIDUAL_TOL = 1e-10


def _residual_ok(A: sp.csr_matrix, x: np.ndarray, b: np.ndarray, norm_A: float) -> Tuple[bool, float]:
    r = float(np.linalg.norm(A @ x - b))
    return r <= RESIDUAL_TOL * (norm_A * float(np.linalg.norm(x)) + float(np.linalg.norm(b))), r


class DirectSolver:
    """Sparse LU factorization computed once and reused for every right-hand side"""

    def __init__(self, op: SparseOperator, step: Optional[int] = None):
        if op.shape[0] != op.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {op.shape}")
        self.op = op
        self.norm = float(sparse_norm(op.matrix))
        start = time.time()
        try:
            self.lu = splu(op.matrix.tocsc())
        except RuntimeError as e:
            raise SingularMatrix(f"sparse LU failed: {e}", pivot=_zero_line(op.matrix), step=step) from e
        diag = np.abs(self.lu.U.diagonal())
        if diag.size and diag.min() <= 1e-14 * max(diag.max(), 1.0):
            k = int(np.argmin(diag))
            raise SingularMatrix("near-zero pivot in sparse LU", pivot=int(np.flatnonzero(self.lu.perm_c == k)[0]), step=step)
        log_performance("DirectSolver.factorize", time.time() - start)
        logger.debug(f"Factorized {op.dimension}x{op.dimension} operator, nnz={op.matrix.nnz}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.op.dimension,):
            raise DimensionMismatch(f"rhs has shape {rhs.shape}, operator dimension is {self.op.dimension}")
        x = self.lu.solve(rhs)
        ok, r = _residual_ok(self.op.matrix, x, rhs, self.norm)
        if not ok:
            x = x + self.lu.solve(rhs - self.op.matrix @ x)
            ok, r2 = _residual_ok(self.op.matrix, x, rhs, self.norm)
            logger.warning(f"Residual {r:.3e} above tolerance, refined to {r2:.3e}")
        return x


def _zero_line(matrix: sp.csr_matrix) -> Optional[int]:
    row_nnz = np.diff(matrix.tocsr().indptr)
    if np.any(row_nnz == 0):
        return int(np.flatnonzero(row_nnz == 0)[0])
    col_nnz = np.diff(matrix.tocsc().indptr)
    if np.any(col_nnz == 0):
        return int(np.flatnonzero(col_nnz == 0)[0])
    return None


class KrylovSolver:
    """Restarted GMRES preconditioned by exact solves on diagonal blocks"""

    def __init__(self, op: SparseOperator, blocks: Sequence[np.ndarray], restart: int = 200,
                 maxiter: int = 50, step: Optional[int] = None):
        self.op = op
        self.restart = restart
        self.maxiter = maxiter
        self.step = step
        self.norm = float(sparse_norm(op.matrix))
        A = op.matrix.tocsr()
        self._blocks = []
        for idx in blocks:
            idx = np.asarray(idx, dtype=np.int64)
            sub = A[idx][:, idx].tocsc()
            try:
                if sub.nnz == 0:
                    raise RuntimeError("empty block")
                self._blocks.append((idx, splu(sub).solve))
            except RuntimeError:
                # lumped absolute row sums of the full rows stand in for a zero block
                lumped = np.asarray(abs(A[idx]).sum(axis=1)).ravel()
                lumped[lumped == 0.0] = 1.0
                self._blocks.append((idx, lambda v, d=lumped: v / d))
        n = op.dimension
        self.preconditioner = LinearOperator((n, n), matvec=self._apply_preconditioner)

    def _apply_preconditioner(self, v: np.ndarray) -> np.ndarray:
        out = np.array(v, dtype=float, copy=True)
        for idx, inverse in self._blocks:
            out[idx] = inverse(v[idx])
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x, info = gmres(self.op.matrix, rhs, M=self.preconditioner, rtol=RESIDUAL_TOL,
                        atol=0.0, restart=self.restart, maxiter=self.maxiter)
        residual = float(np.linalg.norm(self.op.matrix @ x - rhs))
        if info != 0:
            raise IterationLimit(self.restart * self.maxiter if info > 0 else -1, residual)
        return x


def make_solver(op: SparseOperator, level: int, blocks: Optional[Sequence[np.ndarray]] = None,
                krylov_level: int = 7, step: Optional[int] = None):
    if level > krylov_level and blocks:
        logger.info(f"Level {level} > {krylov_level}: using block-preconditioned GMRES")
        return KrylovSolver(op, blocks, step=step)
    return DirectSolver(op, step=step)


def solve_sparse(op: SparseOperator, rhs: np.ndarray) -> np.ndarray:
    return DirectSolver(op).solve(rhs)
