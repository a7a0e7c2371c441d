"""
Stress recovery, debonding thresholds, osmotic-pressure curves and field export.
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd

import vtk_io
from dynamics import ScenarioConfig, SimState
from errors import DimensionMismatch, InvalidParameter
from fem_core import scalar_p1, vector_p2
from logging_config import log_performance
from material import EffectiveModuli, MaterialParams, osmotic_pressure
from mesh import BoundaryTag, Mesh

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PHI_RANGE = (0.01, 0.99)


class Verdict(Enum):
    SAFE = "Safe"
    WARNING = "Warning"
    EXCEEDED = "Exceeded"


@dataclass(frozen=True)
class StressField:
    """Element-averaged total stress, in the stress unit of the run"""
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    includes_viscous: bool
    t: float

    @property
    def components(self) -> Dict[str, np.ndarray]:
        return {"sxx": self.sxx, "syy": self.syy, "sxy": self.sxy}

    def principal_max_abs(self) -> np.ndarray:
        centre = 0.5 * (self.sxx + self.syy)
        radius = np.hypot(0.5 * (self.sxx - self.syy), self.sxy)
        return np.maximum(np.abs(centre + radius), np.abs(centre - radius))


@dataclass(frozen=True)
class DebondReport:
    max_boundary_pressure: float
    location: Tuple[float, float]
    threshold_lo: float
    threshold_hi: float
    verdict: Verdict

    def as_dict(self) -> Dict[str, object]:
        return {
            "max_boundary_pressure": self.max_boundary_pressure,
            "location_x": self.location[0],
            "location_y": self.location[1],
            "threshold_lo": self.threshold_lo,
            "threshold_hi": self.threshold_hi,
            "verdict": self.verdict.value,
        }


def _symmetric_part(grad: np.ndarray) -> np.ndarray:
    return 0.5 * (grad + np.swapaxes(grad, -1, -2))


def _viscous_like(grad: np.ndarray, shear: float, bulk: float) -> np.ndarray:
    """shear*D + bulk*div*I from a (..., 2, 2) gradient"""
    div = grad[..., 0, 0] + grad[..., 1, 1]
    return shear * _symmetric_part(grad) + bulk * div[..., None, None] * np.eye(2)


def stress_field(state: SimState, prev: Optional[SimState], moduli: EffectiveModuli,
                 config: ScenarioConfig, mesh: Mesh) -> StressField:
    """
    T = 2 mu_t D(u) + lambda_t div(u) I + eta1 D(u_t) + mu1 div(u_t) I
        [+ eta2 D(v2) + mu2 div(v2) I] - p I, averaged over each triangle.

    u_t is the backward difference against prev; without prev the viscous
    polymer part is omitted.
    """
    V, Q = vector_p2(mesh), scalar_p1(mesh)
    if state.u.shape != (V.dof_count,) or state.p.shape != (Q.dof_count,):
        raise DimensionMismatch(
            f"state does not live on this mesh: u {state.u.shape} vs {V.dof_count}, p {state.p.shape} vs {Q.dof_count}")
    params = config.params

    grad_u = V.gradients_at_quadrature(state.u)
    T = _viscous_like(grad_u, 2.0 * moduli.mu_t, moduli.lambda_t)
    includes_viscous = False
    if prev is not None and state.t > prev.t:
        if prev.u.shape != state.u.shape:
            raise DimensionMismatch("consecutive states live on different meshes")
        grad_y = (grad_u - V.gradients_at_quadrature(prev.u)) / (state.t - prev.t)
        T = T + _viscous_like(grad_y, params.eta1, params.mu1)
        includes_viscous = True
    if state.v2 is not None:
        T = T + _viscous_like(V.gradients_at_quadrature(state.v2), params.eta2, params.mu2)
        includes_viscous = True
    T = T - Q.values_at_quadrature(state.p)[..., None, None] * np.eye(2)

    weights = V.quadrature_weights
    mean = np.einsum("tq,tqij->tij", weights, T) / weights.sum(axis=1)[:, None, None]
    return StressField(sxx=mean[:, 0, 0], syy=mean[:, 1, 1], sxy=0.5 * (mean[:, 0, 1] + mean[:, 1, 0]),
                       includes_viscous=includes_viscous, t=state.t)


def boundary_cells(mesh: Mesh, tag: BoundaryTag) -> np.ndarray:
    """Triangles with at least one vertex carrying the tag"""
    return np.flatnonzero(np.any(mesh.vertex_tags[mesh.triangles] == int(tag), axis=1))


def interior_cells(mesh: Mesh) -> np.ndarray:
    return np.flatnonzero(np.all(mesh.vertex_tags[mesh.triangles] == int(BoundaryTag.INTERIOR), axis=1))


def debonding_report(field: StressField, mesh: Mesh, params: MaterialParams) -> DebondReport:
    """Largest absolute principal stress over cells touching GAMMA0 against [0.5, 10] mu_E"""
    if field.sxx.shape != (mesh.n_triangles,):
        raise DimensionMismatch(f"stress field has {field.sxx.shape[0]} cells, mesh has {mesh.n_triangles}")
    lo, hi = 0.5 * params.mu_E, 10.0 * params.mu_E
    cells = boundary_cells(mesh, BoundaryTag.GAMMA0)
    magnitude = field.principal_max_abs()[cells]
    k = int(np.argmax(magnitude))
    worst = float(magnitude[k])
    tri = mesh.triangles[cells[k]]
    on_gamma0 = tri[mesh.vertex_tags[tri] == int(BoundaryTag.GAMMA0)]
    x, y = mesh.vertices[on_gamma0].mean(axis=0)

    if worst < lo:
        verdict = Verdict.SAFE
    elif worst <= hi:
        verdict = Verdict.WARNING
    else:
        verdict = Verdict.EXCEEDED
    logger.info(f"Debonding check: max {worst:.6g} at ({x:.4f}, {y:.4f}) -> {verdict.value}")
    return DebondReport(max_boundary_pressure=worst, location=(float(x), float(y)),
                        threshold_lo=lo, threshold_hi=hi, verdict=verdict)


def stress_summary(field: StressField, mesh: Mesh) -> Dict[str, float]:
    summary: Dict[str, float] = {}
    for name, values in field.components.items():
        summary[f"{name}_max"] = float(values.max())
        summary[f"{name}_min"] = float(values.min())
        summary[f"{name}_max_abs"] = float(np.abs(values).max())

    syy = np.abs(field.syy)
    k = int(np.argmax(syy))
    cx, cy = mesh.vertices[mesh.triangles[k]].mean(axis=0)
    summary["syy_argmax_x"] = float(cx)
    summary["syy_argmax_y"] = float(cy)

    edge = boundary_cells(mesh, BoundaryTag.GAMMA0)
    interior = interior_cells(mesh)
    summary["syy_max_abs_gamma0"] = float(syy[edge].max())
    summary["syy_max_abs_interior"] = float(syy[interior].max()) if len(interior) else 0.0
    summary["syy_median_abs_interior"] = float(np.median(syy[interior])) if len(interior) else 0.0
    return summary


def pi_curve(params: MaterialParams, chi_list: Iterable[float], n_points: int) -> pd.DataFrame:
    """
    Osmotic pressure and its mixed derivative on phi in [0.01, 0.99] for each chi.

    monotonicity_change is set for a chi whose pi12 reaches zero or below
    anywhere on the grid.
    """
    if n_points < 2:
        raise InvalidParameter(f"n_points must be at least 2, got {n_points}")
    phi = np.linspace(PHI_RANGE[0], PHI_RANGE[1], n_points)
    frames = []
    for chi in chi_list:
        osm = osmotic_pressure(phi, params.with_chi(float(chi)))
        flag = bool(np.any(osm.pi12 <= 0.0))
        frames.append(pd.DataFrame({
            "chi": float(chi),
            "phi": phi,
            "pi": osm.pi,
            "pi12": osm.pi12,
            "monotonicity_change": flag,
        }))
        if flag:
            logger.info(f"chi={chi}: osmotic pressure changes monotonicity on the grid")
    if not frames:
        return pd.DataFrame(columns=["chi", "phi", "pi", "pi12", "monotonicity_change"])
    return pd.concat(frames, ignore_index=True)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OSError(f"cannot write CSV file '{path}': {e}") from e


def node_table(state: SimState, mesh: Mesh) -> pd.DataFrame:
    """One row per P2 node; p and q are P1 fields and stay empty on edge midpoints"""
    V = vector_p2(mesh)
    n = V.n_nodes
    coords = V.node_coordinates
    columns = {
        "node": np.arange(n),
        "x": coords[:, 0],
        "y": coords[:, 1],
        "ux": state.u[:n],
        "uy": state.u[n:],
    }
    if state.v2 is not None:
        columns["v2x"] = state.v2[:n]
        columns["v2y"] = state.v2[n:]
    for name, values in (("p", state.p), ("q", state.q)):
        padded = np.full(n, np.nan)
        padded[:mesh.n_vertices] = values
        columns[name] = padded
    return pd.DataFrame(columns)


def export_fields(state: SimState, stress: StressField, mesh: Mesh, path: Union[str, Path]) -> Dict[str, str]:
    """
    Write <path>.vtk (vertex u/p/q, cell stress) plus <path>_nodes.csv and
    <path>_cells.csv. Output is byte-stable for identical inputs.
    """
    start = time.time()
    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    V = vector_p2(mesh)
    if state.u.shape != (V.dof_count,):
        raise DimensionMismatch(f"state has {state.u.shape[0]} displacement dofs, mesh needs {V.dof_count}")
    nv = mesh.n_vertices
    n = V.n_nodes

    point_data = {
        "u": np.stack([state.u[:nv], state.u[n:n + nv]], axis=1),
        "p": state.p,
        "q": state.q,
    }
    if state.v2 is not None:
        point_data["v2"] = np.stack([state.v2[:nv], state.v2[n:n + nv]], axis=1)
    outputs = {
        "vtk": vtk_io.write_unstructured_grid(
            str(stem.with_name(stem.name + ".vtk")), f"gelsim fields t={state.t:.17g}",
            mesh.vertices, mesh.triangles, point_data=point_data, cell_data=stress.components),
    }

    nodes_path = stem.with_name(stem.name + "_nodes.csv")
    cells_path = stem.with_name(stem.name + "_cells.csv")
    _write_csv(node_table(state, mesh), nodes_path)
    cells = pd.DataFrame({"cell": np.arange(mesh.n_triangles), **stress.components})
    _write_csv(cells, cells_path)
    outputs["nodes_csv"] = str(nodes_path)
    outputs["cells_csv"] = str(cells_path)
    log_performance("export_fields", time.time() - start)
    return outputs


def read_fields_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
