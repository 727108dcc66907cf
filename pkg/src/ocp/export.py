import logging
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from src.mesh.triangular_mesh import TriangularMesh

logger = logging.getLogger(__name__)

VARIABLES = ("y", "u", "p")


def nodal_frame(mesh: TriangularMesh, values: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({
        "node": np.arange(mesh.n_vertices),
        "x": mesh.vertices[:, 0],
        "y": mesh.vertices[:, 1],
        "value": np.asarray(values, dtype=float),
    })


def export_fields(mesh: TriangularMesh, fields: dict[str, np.ndarray], directory,
                  steps: Iterable[int] | None = None) -> list[Path]:
    """
    Write one ``node,x,y,value`` CSV per variable.

    Args:
        mesh: Mesh the nodal values live on.
        fields: Variable name -> (n,) or (n_steps, n) nodal values.
        directory: Output directory, created when missing.
        steps: Time levels to write for (n_steps, n) fields; every level when omitted.

    Returns:
        The written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            path = directory / f"{name}.csv"
            nodal_frame(mesh, values).to_csv(path, index=False, float_format="%.17g")
            written.append(path)
            continue
        selected = range(values.shape[0]) if steps is None else steps
        for k in selected:
            path = directory / f"{name}_t{k + 1:03d}.csv"
            nodal_frame(mesh, values[k]).to_csv(path, index=False, float_format="%.17g")
            written.append(path)
    logger.info(f"Exported {len(written)} solution files to {directory}")
    return written


def export_solution(mesh: TriangularMesh, triple, directory, steps: Iterable[int] | None = None) -> list[Path]:
    """Export the lifted state, control and adjoint of an ``OptimalTriple``-like object."""
    return export_fields(mesh, {"y": triple.y, "u": triple.u, "p": triple.p}, directory, steps)
