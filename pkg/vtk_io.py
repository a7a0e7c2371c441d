"""
Legacy-VTK ASCII writer for triangulated 2D fields
"""

import logging
from typing import Dict, Optional, TextIO

import numpy as np

logger = logging.getLogger(__name__)

VTK_TRIANGLE = 5
NUMBER_FORMAT = "%.17g"


def _fmt(values) -> str:
    return " ".join(NUMBER_FORMAT % v for v in values)


def _write_attributes(f: TextIO, data: Dict[str, np.ndarray], count: int) -> None:
    for name in sorted(data):
        values = np.asarray(data[name], dtype=float)
        if values.shape[0] != count:
            raise ValueError(f"attribute '{name}' has {values.shape[0]} entries, expected {count}")
        if values.ndim == 1:
            f.write(f"SCALARS {name} double 1\n")
            f.write("LOOKUP_TABLE default\n")
            for v in values:
                f.write(NUMBER_FORMAT % v + "\n")
        else:
            padded = np.zeros((count, 3))
            padded[:, :values.shape[1]] = values
            f.write(f"VECTORS {name} double\n")
            for row in padded:
                f.write(_fmt(row) + "\n")


def write_unstructured_grid(path: str, title: str, points: np.ndarray, triangles: np.ndarray,
                            point_data: Optional[Dict[str, np.ndarray]] = None,
                            cell_data: Optional[Dict[str, np.ndarray]] = None) -> str:
    """
    Write points, triangle cells and optional point/cell attributes.

    Attributes are emitted in name order with 17 significant digits so two exports
    of the same data are byte-identical. 2-column arrays become 3D vectors.
    """
    points = np.asarray(points, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    n_points, n_cells = points.shape[0], triangles.shape[0]
    coords = np.zeros((n_points, 3))
    coords[:, :points.shape[1]] = points

    try:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("# vtk DataFile Version 3.0\n")
            f.write(f"{title}\n")
            f.write("ASCII\n")
            f.write("DATASET UNSTRUCTURED_GRID\n")
            f.write(f"POINTS {n_points} double\n")
            for row in coords:
                f.write(_fmt(row) + "\n")
            f.write(f"CELLS {n_cells} {4 * n_cells}\n")
            for tri in triangles:
                f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
            f.write(f"CELL_TYPES {n_cells}\n")
            for _ in range(n_cells):
                f.write(f"{VTK_TRIANGLE}\n")
            if point_data:
                f.write(f"POINT_DATA {n_points}\n")
                _write_attributes(f, point_data, n_points)
            if cell_data:
                f.write(f"CELL_DATA {n_cells}\n")
                _write_attributes(f, cell_data, n_cells)
    except OSError as e:
        raise OSError(f"cannot write VTK file '{path}': {e}") from e

    logger.debug(f"VTK written: {path} ({n_points} points, {n_cells} cells)")
    return path
