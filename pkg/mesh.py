"""
Structured triangulations of the unit square with boundary tags.

Vertices sit on a (2^k + 1)^2 lattice; cell (i, j) is split along its
lower-left to upper-right diagonal into triangles 2c and 2c + 1, c = j*2^k + i.
Edges on x = 0 and x = 1 form the clamped boundary GAMMA0, edges on y = 0 and
y = 1 the pressure boundary GAMMAP. The four corners belong to GAMMA0.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np

import vtk_io
from errors import MeshError

logger = logging.getLogger(__name__)

MAX_LEVEL = 10
_ON_SIDE_TOL = 1e-12


class BoundaryTag(IntEnum):
    INTERIOR = 0
    GAMMA0 = 1
    GAMMAP = 2
    UNTAGGED = 3


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray        # (n_vertices, 2)
    triangles: np.ndarray       # (n_triangles, 3), counter-clockwise
    edges: np.ndarray           # (n_edges, 2), sorted vertex pairs
    edge_tags: np.ndarray       # (n_edges,), BoundaryTag values
    triangle_edges: np.ndarray  # (n_triangles, 3), local edges v0v1, v1v2, v2v0
    level: Optional[int] = None
    mirror: bool = False

    @classmethod
    def from_arrays(cls, vertices, triangles, level: Optional[int] = None, mirror: bool = False) -> "Mesh":
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (n, 2), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError(f"triangles must have shape (n, 3), got {triangles.shape}")

        local = np.stack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        inverse = np.asarray(inverse).reshape(-1)
        triangle_edges = inverse.reshape(-1, 3)

        tags = np.full(len(edges), int(BoundaryTag.INTERIOR), dtype=np.int64)
        ends = vertices[edges]                      # (n_edges, 2 endpoints, 2 coords)
        x, y = ends[:, :, 0], ends[:, :, 1]
        on_x = np.all(np.abs(x) < _ON_SIDE_TOL, axis=1) | np.all(np.abs(x - 1.0) < _ON_SIDE_TOL, axis=1)
        on_y = np.all(np.abs(y) < _ON_SIDE_TOL, axis=1) | np.all(np.abs(y - 1.0) < _ON_SIDE_TOL, axis=1)
        boundary = counts == 1
        tags[boundary] = int(BoundaryTag.UNTAGGED)
        tags[boundary & on_y] = int(BoundaryTag.GAMMAP)
        tags[boundary & on_x] = int(BoundaryTag.GAMMA0)

        mesh = cls(vertices, triangles, edges, tags, triangle_edges, level, mirror)
        if np.any(mesh.signed_areas <= 0.0):
            raise MeshError("triangles must have positive orientation")
        return mesh

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_owner(self) -> np.ndarray:
        """First triangle containing each edge, with the edge's local slot"""
        owner = np.full((self.n_edges, 2), -1, dtype=np.int64)
        for slot in (2, 1, 0):
            owner[self.triangle_edges[:, slot]] = np.stack(
                [np.arange(self.n_triangles), np.full(self.n_triangles, slot)], axis=1)
        return owner

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit outward normals on boundary edges, zero on interior edges"""
        normals = np.zeros((self.n_edges, 2))
        boundary = np.flatnonzero(self.edge_tags != BoundaryTag.INTERIOR)
        a = self.vertices[self.edges[boundary, 0]]
        b = self.vertices[self.edges[boundary, 1]]
        tri = self.triangles[self.edge_owner[boundary, 0]]
        third = self.vertices[tri].sum(axis=1) - self.vertices[self.edges[boundary]].sum(axis=1)
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], axis=1) / self.edge_lengths[boundary, None]
        flip = np.einsum("ij,ij->i", n, third - a) > 0.0
        n[flip] *= -1.0
        normals[boundary] = n
        return normals

    def boundary_edges(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == int(tag))

    @cached_property
    def vertex_tags(self) -> np.ndarray:
        """Per-vertex tag; a vertex touching GAMMA0 is GAMMA0 even if it also touches GAMMAP"""
        tags = np.full(self.n_vertices, int(BoundaryTag.INTERIOR), dtype=np.int64)
        for tag in (BoundaryTag.UNTAGGED, BoundaryTag.GAMMAP, BoundaryTag.GAMMA0):
            tags[self.edges[self.boundary_edges(tag)].ravel()] = int(tag)
        return tags

    def boundary_vertices(self, tag: BoundaryTag) -> np.ndarray:
        return np.flatnonzero(self.vertex_tags == int(tag))

    def mirrored(self) -> "Mesh":
        """Image under x -> 1 - x with the same vertex, triangle and edge numbering"""
        vertices = self.vertices.copy()
        vertices[:, 0] = 1.0 - vertices[:, 0]
        triangles = self.triangles[:, [0, 2, 1]]
        return Mesh.from_arrays(vertices, triangles, self.level, not self.mirror)

    def locate(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates of points (structured meshes only)"""
        if self.level is None:
            raise MeshError("point location requires a structured mesh")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        n = 2 ** self.level
        xs = 1.0 - x if self.mirror else x
        i = np.clip(np.floor(xs * n).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(y * n).astype(np.int64), 0, n - 1)
        cell = j * n + i
        points = np.stack([x, y], axis=1)

        best_tri = np.empty(len(x), dtype=np.int64)
        best_bary = np.empty((len(x), 3))
        best_score = np.full(len(x), -np.inf)
        for offset in (0, 1):
            tri = 2 * cell + offset
            bary = self.barycentric(tri, points)
            score = bary.min(axis=1)
            better = score > best_score
            best_tri[better] = tri[better]
            best_bary[better] = bary[better]
            best_score[better] = score[better]
        if np.any(best_score < -1e-10):
            raise MeshError("point outside the unit square")
        return best_tri, best_bary

    def barycentric(self, tri: np.ndarray, points: np.ndarray) -> np.ndarray:
        p = self.vertices[self.triangles[tri]]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        r = points - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def export_vtk(self, path: str) -> str:
        return vtk_io.write_unstructured_grid(
            path, f"gelsim mesh level {self.level}", self.vertices, self.triangles,
            point_data={"vertex_tag": self.vertex_tags.astype(float)},
        )


def build_unit_square(level: int) -> Mesh:
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= MAX_LEVEL:
        raise MeshError(f"level must be an integer in [1, {MAX_LEVEL}], got {level}")
    n = 2 ** level
    ticks = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(ticks, ticks)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (jj * (n + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.stack([v00, v10, v11], axis=1)
    triangles[1::2] = np.stack([v00, v11, v01], axis=1)

    mesh = Mesh.from_arrays(vertices, triangles, level)
    logger.debug(f"Built level-{level} mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


def classify_boundary(mesh: Mesh) -> Dict[str, int]:
    """Boundary edge counts per tag; raises if any boundary edge is untagged"""
    untagged = mesh.boundary_edges(BoundaryTag.UNTAGGED)
    if len(untagged):
        raise MeshError(f"{len(untagged)} boundary edges carry no tag (first: {mesh.edges[untagged[0]].tolist()})")
    stats = {
        "gamma0": len(mesh.boundary_edges(BoundaryTag.GAMMA0)),
        "gammap": len(mesh.boundary_edges(BoundaryTag.GAMMAP)),
        "interior": len(mesh.boundary_edges(BoundaryTag.INTERIOR)),
    }
    stats["boundary"] = stats["gamma0"] + stats["gammap"]
    return stats
