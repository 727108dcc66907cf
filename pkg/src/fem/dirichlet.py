import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np
from scipy import sparse as sp

from src.errors import InvalidGeometryError
from src.fem.forms import FormMatrices
from src.mesh.triangular_mesh import TriangularMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DirichletHandler:
    """
    Constrained vertices and the lifting R_y (nodal interpolant of the boundary data,
    zero at every other vertex). State and adjoint are constrained on the same vertices;
    the control is not constrained.
    """

    dofs: np.ndarray
    lifting: np.ndarray

    @property
    def n(self) -> int:
        return int(self.lifting.size)

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.dofs] = False
        return np.flatnonzero(mask)

    def space_time_dofs(self, n_steps: int) -> np.ndarray:
        return (np.arange(n_steps)[:, None] * self.n + self.dofs[None, :]).ravel()

    def homogenize(self, y: np.ndarray) -> np.ndarray:
        return y - self.lifting

    def lift(self, y_bar: np.ndarray) -> np.ndarray:
        return y_bar + self.lifting


def build_dirichlet_handler(mesh: TriangularMesh, boundary_values: Mapping[str, float | Callable]) -> DirichletHandler:
    """
    Args:
        mesh: Tagged mesh.
        boundary_values: Label -> constant or callable(points) -> values. Labels are applied in
            order, so a vertex shared by two Dirichlet segments takes the value of the later one.
            Every Dirichlet label of the mesh scheme must be present.
    """
    dirichlet_labels = set(mesh.scheme.dirichlet_labels)
    unknown = set(boundary_values) - dirichlet_labels
    if unknown:
        raise InvalidGeometryError(f"Boundary data given for non-Dirichlet or unknown labels {sorted(unknown)}")
    missing = dirichlet_labels - set(boundary_values)
    if missing:
        raise InvalidGeometryError(f"No boundary data for Dirichlet labels {sorted(missing)}")

    lifting = np.zeros(mesh.n_vertices)
    constrained = []
    for label, value in boundary_values.items():
        vertices = mesh.boundary_vertices([label])
        points = mesh.vertices[vertices]
        lifting[vertices] = value(points) if callable(value) else float(value)
        constrained.append(vertices)
    dofs = np.unique(np.concatenate(constrained)) if constrained else np.zeros(0, dtype=np.int64)
    logger.debug(f"{dofs.size} Dirichlet vertices, lifting range [{lifting.min()}, {lifting.max()}]")
    return DirichletHandler(dofs, lifting)


def _keep(n: int, dofs: np.ndarray) -> sp.dia_matrix:
    keep = np.ones(n)
    keep[dofs] = 0.0
    return sp.diags(keep)


def zero_rows(matrix: sp.spmatrix, dofs: np.ndarray) -> sp.csr_matrix:
    return (_keep(matrix.shape[0], dofs) @ matrix).tocsr()


def zero_cols(matrix: sp.spmatrix, dofs: np.ndarray) -> sp.csr_matrix:
    return (matrix @ _keep(matrix.shape[1], dofs)).tocsr()


def constrain(matrix: sp.spmatrix, dofs: np.ndarray, diagonal: float = 1.0) -> sp.csr_matrix:
    """Zero the rows and columns of ``dofs`` and put ``diagonal`` on their diagonal entries."""
    n = matrix.shape[0]
    keep = _keep(n, dofs)
    unit = np.zeros(n)
    unit[dofs] = diagonal
    return (keep @ matrix @ keep + sp.diags(unit)).tocsr()


def zero_entries(vector: np.ndarray, dofs: np.ndarray) -> np.ndarray:
    out = np.array(vector, dtype=float, copy=True)
    out[dofs] = 0.0
    return out


@dataclass(frozen=True)
class LoadCorrection:
    state: np.ndarray
    adjoint: np.ndarray


def apply_dirichlet(matrices: FormMatrices, handler: DirichletHandler,
                    desired_state: np.ndarray | None = None) -> tuple[FormMatrices, LoadCorrection]:
    """
    Homogenize the system in y_bar = y - R_y.

    Operators acting on state or adjoint get their constrained rows and columns removed (unit
    diagonal on the square state/adjoint operators); the control columns stay. The returned
    corrections are -K_s R_y for the state load and M_obs,s (y_d - R_y) for the adjoint load,
    both zero on constrained vertices.
    """
    if handler.n != matrices.stiffness.shape[0]:
        raise InvalidGeometryError("Dirichlet handler and forms have different sizes")
    dofs, lifting = handler.dofs, handler.lifting
    y_d = np.zeros(handler.n) if desired_state is None else desired_state
    correction = LoadCorrection(
        state=zero_entries(-(matrices.stiffness @ lifting), dofs),
        adjoint=zero_entries(matrices.observation @ (y_d - lifting), dofs),
    )
    constrained = replace(
        matrices,
        stiffness=constrain(matrices.stiffness, dofs),
        adjoint_stiffness=constrain(matrices.adjoint_stiffness, dofs),
        state_mass=constrain(matrices.state_mass, dofs, 0.0),
        adjoint_mass=constrain(matrices.adjoint_mass, dofs, 0.0),
        observation=constrain(matrices.observation, dofs, 0.0),
        control=zero_rows(matrices.control, dofs),
        control_adjoint=zero_cols(matrices.control_adjoint, dofs),
        load=zero_entries(matrices.load, dofs),
    )
    return constrained, correction
