"""
Vectorized P1 element kernels on triangles and their scatter into scipy.sparse matrices.

Element matrices are indexed [element, test, trial], so the assembled matrix A satisfies
A[i, j] = form(phi_j, phi_i).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse as sp

from src.errors import StabilizationSingularityError
from src.mesh.triangular_mesh import TriangularMesh

logger = logging.getLogger(__name__)

# Symmetric 6-point rule, exact for degree 4 (barycentric points, weights summing to 1).
_A, _B = 0.445948490915965, 0.108103018168070
_C, _D = 0.091576213509771, 0.816847572980459
QUADRATURE_POINTS = np.array([
    [_B, _A, _A], [_A, _B, _A], [_A, _A, _B],
    [_D, _C, _C], [_C, _D, _C], [_C, _C, _D],
])
QUADRATURE_WEIGHTS = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

SPEED_FLOOR = 1e-12


@dataclass(frozen=True)
class OperatorSplit:
    """
    Pointwise evaluators of the symmetric and skew-symmetric parts of the advection operator.

    For P1 functions the diffusion part of T_S vanishes inside each element, so
    ``symmetric`` returns -1/2 (div eta) y and ``skew`` returns eta . grad y + 1/2 (div eta) y.
    """

    field: Callable[[np.ndarray], np.ndarray]
    divergence: Callable[[np.ndarray], np.ndarray]

    def _eval(self, points: np.ndarray):
        flat = points.reshape(-1, 2)
        eta = self.field(flat).reshape(points.shape)
        div = self.divergence(flat).reshape(points.shape[:-1])
        return eta, div

    def symmetric(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        _, div = self._eval(points)
        return -0.5 * div[..., None] * values

    def skew(self, values: np.ndarray, gradients: np.ndarray, points: np.ndarray) -> np.ndarray:
        """
        Args:
            values: (m, q, nb) basis values at the points.
            gradients: (m, nb, 2) element-constant basis gradients.
            points: (m, q, 2) evaluation points.
        """
        eta, div = self._eval(points)
        return np.einsum("eqd,ebd->eqb", eta, gradients) + 0.5 * div[..., None] * values


def split_operator(field: Callable, divergence: Callable) -> OperatorSplit:
    return OperatorSplit(field, divergence)


@dataclass(frozen=True)
class ElementData:
    """Geometry and basis data of every triangle, computed once per mesh."""

    mesh: TriangularMesh
    areas: np.ndarray = field(init=False)
    gradients: np.ndarray = field(init=False)
    points: np.ndarray = field(init=False)

    def __post_init__(self):
        corners = self.mesh.vertices[self.mesh.triangles]
        x, y = corners[..., 0], corners[..., 1]
        twice_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        gradients = np.empty(corners.shape)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            gradients[:, i, 0] = (y[:, j] - y[:, k]) / twice_area
            gradients[:, i, 1] = (x[:, k] - x[:, j]) / twice_area
        object.__setattr__(self, "areas", 0.5 * twice_area)
        object.__setattr__(self, "gradients", gradients)
        object.__setattr__(self, "points", np.einsum("qi,eid->eqd", QUADRATURE_POINTS, corners))

    @property
    def phi(self) -> np.ndarray:
        return QUADRATURE_POINTS

    def basis_values(self, elements: np.ndarray) -> np.ndarray:
        return np.broadcast_to(QUADRATURE_POINTS, (elements.size, *QUADRATURE_POINTS.shape))

    def evaluate(self, function: Callable, elements: np.ndarray, vector: bool = False) -> np.ndarray:
        pts = self.points[elements]
        values = np.asarray(function(pts.reshape(-1, 2)), dtype=float)
        return values.reshape(pts.shape if vector else pts.shape[:-1])


def stabilization_parameter(data: ElementData, elements: np.ndarray, delta,
                            speed: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """tau_K = delta_K h_K / |eta(barycenter)|, zero where the field vanishes."""
    mesh = data.mesh
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (mesh.n_triangles,))[elements]
    norm = np.asarray(speed(mesh.barycenters[elements]), dtype=float)
    if np.any(~np.isfinite(norm)) or np.any(norm < 0.0):
        raise StabilizationSingularityError("Advection speed is not finite and non-negative on every triangle")
    tau = np.zeros(elements.size)
    active = norm >= SPEED_FLOOR
    tau[active] = delta[active] * mesh.h_K[elements][active] / norm[active]
    if np.any(~active & (delta > 0.0)):
        logger.debug(f"{int(np.sum(~active & (delta > 0.0)))} triangles with vanishing advection get no SUPG")
    return tau


def mass_kernel(data: ElementData, elements: np.ndarray, coefficient: Callable | None = None) -> np.ndarray:
    c = np.ones((elements.size, QUADRATURE_WEIGHTS.size)) if coefficient is None \
        else data.evaluate(coefficient, elements)
    local = np.einsum("q,eq,qi,qj->eij", QUADRATURE_WEIGHTS, c, QUADRATURE_POINTS, QUADRATURE_POINTS)
    return data.areas[elements, None, None] * local


def diffusion_kernel(data: ElementData, elements: np.ndarray, coefficient: Callable, axis: int) -> np.ndarray:
    c = data.evaluate(coefficient, elements) @ QUADRATURE_WEIGHTS
    g = data.gradients[elements, :, axis]
    return (data.areas[elements] * c)[:, None, None] * g[:, :, None] * g[:, None, :]


def advection_kernel(data: ElementData, elements: np.ndarray, field: Callable) -> np.ndarray:
    b = data.evaluate(field, elements, vector=True)
    directional = np.einsum("eqd,ejd->eqj", b, data.gradients[elements])
    local = np.einsum("q,eqj,qi->eij", QUADRATURE_WEIGHTS, directional, QUADRATURE_POINTS)
    return data.areas[elements, None, None] * local


def supg_pair_kernel(data: ElementData, elements: np.ndarray, tau: np.ndarray,
                     trial: OperatorSplit, test: OperatorSplit, trial_divergence: float) -> np.ndarray:
    """
    sum_K tau_K (b . grad phi_j + c_div (div b) phi_j, T_SS phi_i)_K.

    ``trial_divergence`` is 0 for the state residual (T y = eta . grad y on P1) and 1 for the
    adjoint residual, whose sign flip is absorbed by the -T_SS test function.
    """
    pts = data.points[elements]
    values = data.basis_values(elements)
    grads = data.gradients[elements]
    trial_values = trial.skew(values, grads, pts) + (trial_divergence - 0.5) * \
        trial.divergence(pts.reshape(-1, 2)).reshape(pts.shape[:-1])[..., None] * values
    test_values = test.skew(values, grads, pts)
    local = np.einsum("q,eqj,eqi->eij", QUADRATURE_WEIGHTS, trial_values, test_values)
    return (tau * data.areas[elements])[:, None, None] * local


def supg_mass_kernel(data: ElementData, elements: np.ndarray, tau: np.ndarray, test: OperatorSplit,
                     coefficient: Callable | None = None) -> np.ndarray:
    """sum_K tau_K (c phi_j, T_SS phi_i)_K."""
    pts = data.points[elements]
    values = data.basis_values(elements)
    c = np.ones(pts.shape[:-1]) if coefficient is None else data.evaluate(coefficient, elements)
    test_values = test.skew(values, data.gradients[elements], pts)
    local = np.einsum("q,eq,qj,eqi->eij", QUADRATURE_WEIGHTS, c, QUADRATURE_POINTS, test_values)
    return (tau * data.areas[elements])[:, None, None] * local


def load_kernel(data: ElementData, elements: np.ndarray, source: Callable) -> np.ndarray:
    f = data.evaluate(source, elements)
    return data.areas[elements, None] * np.einsum("q,eq,qi->ei", QUADRATURE_WEIGHTS, f, QUADRATURE_POINTS)


def supg_load_kernel(data: ElementData, elements: np.ndarray, tau: np.ndarray, test: OperatorSplit,
                     source: Callable) -> np.ndarray:
    pts = data.points[elements]
    f = data.evaluate(source, elements)
    test_values = test.skew(data.basis_values(elements), data.gradients[elements], pts)
    return (tau * data.areas[elements])[:, None] * np.einsum("q,eq,eqi->ei", QUADRATURE_WEIGHTS, f, test_values)


def scatter_matrix(data: ElementData, elements: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    n = data.mesh.n_vertices
    dofs = data.mesh.triangles[elements]
    rows = np.repeat(dofs[:, :, None], 3, axis=2)
    cols = np.repeat(dofs[:, None, :], 3, axis=1)
    matrix = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    return matrix


def scatter_vector(data: ElementData, elements: np.ndarray, local: np.ndarray) -> np.ndarray:
    dofs = data.mesh.triangles[elements]
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=data.mesh.n_vertices)


def reference_inner_products(mesh: TriangularMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Parameter-independent H1 (stiffness + mass) and L2 (mass) Gram matrices."""
    data = ElementData(mesh)
    everything = np.arange(mesh.n_triangles)
    mass = scatter_matrix(data, everything, mass_kernel(data, everything))
    one = lambda points: np.ones(points.shape[0])
    stiffness = scatter_matrix(data, everything,
                               diffusion_kernel(data, everything, one, 0) + diffusion_kernel(data, everything, one, 1))
    return (stiffness + mass).tocsr(), mass
