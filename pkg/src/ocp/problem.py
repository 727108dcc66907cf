import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import sparse as sp

from src.errors import ConfigError, InvalidParameterError
from src.fem.assembly import reference_inner_products
from src.fem.benchmarks import (
    GRAETZ_BOUNDARY_VALUES,
    GRAETZ_EXTENTS,
    SQUARE_BOUNDARY_VALUES,
    SQUARE_EXTENTS,
    graetz_coefficients,
    graetz_observation,
    graetz_scheme,
    poiseuille_field,
    square_coefficients,
    square_observation,
    square_scheme,
)
from src.fem.coefficients import CoefficientField, constant_vector
from src.fem.dirichlet import DirichletHandler, build_dirichlet_handler
from src.fem.forms import MODES, AssembledForms, assemble_forms
from src.mesh.triangular_mesh import PecletField, RegionMask, TaggingScheme, TriangularMesh, mesh_for_target_h, peclet_field
from src.ocp.kkt import KktSystem, KktTerms, assemble_kkt, build_kkt_terms
from src.quadrature.beta_box import BetaParameterBox

logger = logging.getLogger(__name__)

PROBLEM_IDS = ("graetz-steady", "graetz-parabolic", "square-steady", "square-parabolic")


@dataclass(frozen=True)
class GeometryFamily:
    """Everything about a benchmark that does not depend on the discretization settings."""

    name: str
    extents: tuple[float, float, float, float]
    scheme: Callable[[], TaggingScheme]
    coefficients: Callable[[], CoefficientField]
    boundary_values: Mapping[str, float]
    observation: Callable[[np.ndarray], np.ndarray]
    desired_state: float
    physical_advection: Callable[[np.ndarray], Callable]


FAMILIES = {
    "graetz": GeometryFamily(
        name="graetz",
        extents=GRAETZ_EXTENTS,
        scheme=graetz_scheme,
        coefficients=graetz_coefficients,
        boundary_values=GRAETZ_BOUNDARY_VALUES,
        observation=graetz_observation,
        desired_state=1.0,
        physical_advection=lambda mu: poiseuille_field,
    ),
    "square": GeometryFamily(
        name="square",
        extents=SQUARE_EXTENTS,
        scheme=square_scheme,
        coefficients=square_coefficients,
        boundary_values=SQUARE_BOUNDARY_VALUES,
        observation=square_observation,
        desired_state=0.5,
        physical_advection=lambda mu: constant_vector(np.cos(mu[1]), np.sin(mu[1])),
    ),
}


def split_problem_id(problem_id: str) -> tuple[str, bool]:
    """'graetz-parabolic' -> ('graetz', True)."""
    if problem_id not in PROBLEM_IDS:
        raise ConfigError(f"Unknown problem '{problem_id}', expected one of {', '.join(PROBLEM_IDS)}")
    family, kind = problem_id.split("-")
    return family, kind == "parabolic"


@dataclass
class OcpDefinition:
    """
    A discretized benchmark: mesh, affine forms, boundary data, observation and time grid.

    Attributes:
        problem_id: One of ``PROBLEM_IDS``.
        mesh: Reference-domain triangulation.
        forms: Stabilized affine forms (the plain system filters the SUPG terms).
        handler: Dirichlet vertices and lifting R_y.
        observation: Triangles of the observation region.
        alpha: Control penalization.
        box: Parameter box with its Beta law.
        delta: SUPG constant delta_K.
        n_steps: Number of time levels, 1 for steady problems.
        final_time: T for parabolic problems.
        state_product: X_y = X_p, the H1 Gram matrix on the reference domain.
        control_product: X_u, the L2 Gram matrix.
    """

    problem_id: str
    family: GeometryFamily
    mesh: TriangularMesh
    forms: AssembledForms
    handler: DirichletHandler
    observation: RegionMask
    alpha: float
    box: BetaParameterBox
    delta: float = 1.0
    n_steps: int = 1
    final_time: float | None = None
    initial_state: np.ndarray | None = None
    state_product: sp.csr_matrix | None = None
    control_product: sp.csr_matrix | None = None
    terms: KktTerms = field(init=False)

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise InvalidParameterError(f"Penalization alpha must be positive, got {self.alpha}")
        if self.n_steps < 1:
            raise InvalidParameterError(f"Need at least one time step, got {self.n_steps}")
        if self.is_space_time and (self.final_time is None or self.final_time <= 0.0):
            raise InvalidParameterError(f"Final time must be positive, got {self.final_time}")
        if self.state_product is None or self.control_product is None:
            self.state_product, self.control_product = reference_inner_products(self.mesh)
        self.terms = build_kkt_terms(self.forms, self.handler, self.n_steps, self.dt, self.initial_state)

    @property
    def is_space_time(self) -> bool:
        return self.problem_id.endswith("parabolic")

    @property
    def dt(self) -> float | None:
        return self.final_time / self.n_steps if self.is_space_time else None

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_total(self) -> int:
        return 3 * self.n * self.n_steps

    @property
    def thetas(self):
        return self.forms.thetas

    def kkt_terms(self, mode: str = "stabilized") -> KktTerms:
        if mode not in MODES:
            raise InvalidParameterError(f"Unknown mode '{mode}', expected one of {MODES}")
        return self.terms.select(mode)

    def assemble(self, mu, mode: str = "stabilized") -> KktSystem:
        return assemble_kkt(self.kkt_terms(mode), mu, self.alpha, self.handler)

    def desired_state(self) -> np.ndarray:
        return self.forms.desired_state

    def peclet(self, mu) -> PecletField:
        """Local Péclet numbers of the physical problem (diffusivity 1/mu1) on this mesh."""
        mu = np.asarray(mu, dtype=float)
        self.thetas.validate(mu)
        return peclet_field(self.mesh, 1.0 / mu[0], self.family.physical_advection(mu))


def build_problem(problem_id: str, h: float, box: BetaParameterBox, delta: float = 1.0, alpha: float = 0.01,
                  n_steps: int = 30, final_time: float = 3.0, desired_state: float | None = None) -> OcpDefinition:
    """
    Mesh and assemble one of the four benchmarks.

    Args:
        problem_id: One of ``PROBLEM_IDS``.
        h: Target mesh size; the mesh is the coarsest structured one with h <= target.
        box: Parameter box and Beta law.
        delta: SUPG constant, the same on every triangle.
        alpha: Control penalization.
        n_steps: Time levels of the parabolic variants (ignored for steady ones).
        final_time: T of the parabolic variants.
        desired_state: Constant y_d on the observation region; the benchmark value when omitted.
    """
    family_name, parabolic = split_problem_id(problem_id)
    family = FAMILIES[family_name]
    mesh = mesh_for_target_h(family.extents, h, family.scheme())
    observation = mesh.region_where(family.observation)
    y_d = family.desired_state if desired_state is None else float(desired_state)
    forms = assemble_forms(mesh, family.coefficients(), delta, y_d, observation)
    handler = build_dirichlet_handler(mesh, family.boundary_values)
    ocp = OcpDefinition(
        problem_id=problem_id,
        family=family,
        mesh=mesh,
        forms=forms,
        handler=handler,
        observation=observation,
        alpha=alpha,
        box=box,
        delta=delta,
        n_steps=n_steps if parabolic else 1,
        final_time=final_time if parabolic else None,
    )
    logger.info(f"{problem_id}: N={ocp.n} per variable, N_tot={ocp.n_total}, h={mesh.h:.4f}, "
                f"{len(observation)} observed triangles")
    return ocp
