import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse as sp

from src.fem.assembly import (
    ElementData,
    advection_kernel,
    diffusion_kernel,
    load_kernel,
    mass_kernel,
    scatter_matrix,
    scatter_vector,
    split_operator,
    stabilization_parameter,
    supg_load_kernel,
    supg_mass_kernel,
    supg_pair_kernel,
)
from src.fem.coefficients import CoefficientField, ThetaTable, theta_product
from src.errors import InvalidParameterError
from src.mesh.triangular_mesh import RegionMask, TriangularMesh

logger = logging.getLogger(__name__)

MODES = ("stabilized", "plain")


@dataclass(frozen=True)
class AffineTerm:
    theta: str
    block: object  # sparse matrix or 1D array


@dataclass
class AffineOperator:
    """sum_q Theta_q(mu) * block_q with terms sharing a Theta merged."""

    terms: list[AffineTerm] = field(default_factory=list)

    def add(self, theta: str, block) -> None:
        for index, term in enumerate(self.terms):
            if term.theta == theta:
                self.terms[index] = AffineTerm(theta, term.block + block)
                return
        self.terms.append(AffineTerm(theta, block))

    def __len__(self) -> int:
        return len(self.terms)

    def evaluate(self, thetas: ThetaTable, mu, shape=None):
        if not self.terms:
            if shape is None:
                raise ValueError("Cannot evaluate an empty operator without a shape")
            return sp.csr_matrix(shape) if len(shape) == 2 else np.zeros(shape[0])
        total = None
        for term in self.terms:
            contribution = thetas(term.theta, mu) * term.block
            total = contribution if total is None else total + contribution
        return total

    def transposed(self) -> "AffineOperator":
        return AffineOperator([AffineTerm(term.theta, term.block.T.tocsr()) for term in self.terms])


@dataclass(frozen=True)
class FormMatrices:
    """All operators of the stabilized (or plain) optimality system at one parameter value."""

    stiffness: sp.spmatrix
    adjoint_stiffness: sp.spmatrix
    mass: sp.spmatrix
    state_mass: sp.spmatrix
    adjoint_mass: sp.spmatrix
    observation: sp.spmatrix
    control: sp.spmatrix
    control_adjoint: sp.spmatrix
    load: np.ndarray
    plain_observation: sp.spmatrix


@dataclass
class AssembledForms:
    """
    Affine decomposition of every form of the optimality system.

    Galerkin parts and SUPG parts are kept apart so the plain system is the stabilized one with
    the ``*_supg`` operators dropped. ``adjoint_supg`` is the stabilization of the adjoint
    operator; ``observation_supg`` carries the -T_SS modification with a positive sign
    (it is subtracted when combined).
    """

    n: int
    thetas: ThetaTable
    mode: str = "stabilized"
    stiffness: AffineOperator = field(default_factory=AffineOperator)
    stiffness_supg: AffineOperator = field(default_factory=AffineOperator)
    adjoint_supg: AffineOperator = field(default_factory=AffineOperator)
    mass: AffineOperator = field(default_factory=AffineOperator)
    mass_supg: AffineOperator = field(default_factory=AffineOperator)
    observation_mass: AffineOperator = field(default_factory=AffineOperator)
    observation_supg: AffineOperator = field(default_factory=AffineOperator)
    load: AffineOperator = field(default_factory=AffineOperator)
    load_supg: AffineOperator = field(default_factory=AffineOperator)
    desired_state: np.ndarray | None = None

    OPERATORS = ("stiffness", "stiffness_supg", "adjoint_supg", "mass", "mass_supg",
                 "observation_mass", "observation_supg", "load", "load_supg")

    def merged_with(self, other: "AssembledForms") -> "AssembledForms":
        merged = replace(self, **{name: AffineOperator(list(getattr(self, name).terms)) for name in self.OPERATORS})
        for name in self.OPERATORS:
            for term in getattr(other, name).terms:
                getattr(merged, name).add(term.theta, term.block)
        if other.desired_state is not None:
            merged.desired_state = other.desired_state
        return merged

    def plain(self) -> "AssembledForms":
        empty = {name: AffineOperator() for name in self.OPERATORS if name.endswith("_supg")}
        return replace(self, mode="plain", **empty)

    def term_count(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in self.OPERATORS}

    def evaluate(self, mu, mode: str | None = None) -> FormMatrices:
        """Concrete operators at ``mu`` (no boundary conditions applied)."""
        mode = mode or self.mode
        if mode not in MODES:
            raise InvalidParameterError(f"Unknown mode '{mode}', expected one of {MODES}")
        self.thetas.validate(np.asarray(mu, dtype=float))
        shape = (self.n, self.n)
        use_supg = mode == "stabilized"

        def get(name):
            if name.endswith("_supg") and not use_supg:
                return sp.csr_matrix(shape) if name != "load_supg" else np.zeros(self.n)
            return getattr(self, name).evaluate(self.thetas, mu, shape if name not in ("load", "load_supg") else (self.n,))

        stiffness = get("stiffness")
        mass = get("mass")
        mass_supg = get("mass_supg")
        observation = get("observation_mass")
        return FormMatrices(
            stiffness=(stiffness + get("stiffness_supg")).tocsr(),
            adjoint_stiffness=(stiffness.T + get("adjoint_supg")).tocsr(),
            mass=mass.tocsr(),
            state_mass=(mass + mass_supg).tocsr(),
            adjoint_mass=(mass - mass_supg).tocsr(),
            observation=(observation - get("observation_supg")).tocsr(),
            control=(-(mass + mass_supg)).tocsr(),
            control_adjoint=(-mass).tocsr(),
            load=np.asarray(get("load") + get("load_supg"), dtype=float),
            plain_observation=observation.tocsr(),
        )


def _advection_splits(sub):
    return [split_operator(term.field, term.divergence) for term in sub.advection]


def assemble_state_forms(mesh: TriangularMesh, coeffs: CoefficientField, delta=1.0,
                         mode: str = "stabilized") -> AssembledForms:
    """
    Stiffness a, control mass, source F and, in stabilized mode, their SUPG additions.

    Args:
        mesh: Triangulation whose subdomain labels match ``coeffs``.
        coeffs: Affine piecewise coefficients.
        delta: Global or per-triangle stabilization constant delta_K >= 0.
        mode: 'stabilized' or 'plain'.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"Unknown mode '{mode}', expected one of {MODES}")
    if np.any(np.asarray(delta) < 0.0):
        raise InvalidParameterError("Stabilization constants must be non-negative")
    data = ElementData(mesh)
    forms = AssembledForms(n=mesh.n_vertices, thetas=coeffs.thetas, mode=mode)
    for sub in coeffs.subdomains:
        elements = mesh.region(sub.label).triangles
        if elements.size == 0:
            continue
        for term in sub.diffusion_xx:
            forms.stiffness.add(term.theta, scatter_matrix(data, elements, diffusion_kernel(data, elements, term.spatial, 0)))
        for term in sub.diffusion_yy:
            forms.stiffness.add(term.theta, scatter_matrix(data, elements, diffusion_kernel(data, elements, term.spatial, 1)))
        for term in sub.advection:
            forms.stiffness.add(term.theta, scatter_matrix(data, elements, advection_kernel(data, elements, term.field)))
        forms.mass.add(sub.jacobian, scatter_matrix(data, elements, mass_kernel(data, elements)))
        for term in sub.forcing:
            forms.load.add(theta_product(sub.jacobian, term.theta),
                           scatter_vector(data, elements, load_kernel(data, elements, term.spatial)))
        if mode != "stabilized":
            continue

        tau = stabilization_parameter(data, elements, delta, sub.speed)
        splits = _advection_splits(sub)
        for trial_term, trial in zip(sub.advection, splits):
            for test_term, test in zip(sub.advection, splits):
                theta = theta_product(sub.supg_scale, trial_term.theta, test_term.theta)
                local = supg_pair_kernel(data, elements, tau, trial, test, trial_divergence=0.0)
                forms.stiffness_supg.add(theta, scatter_matrix(data, elements, local))
        for test_term, test in zip(sub.advection, splits):
            theta = theta_product(sub.supg_scale, sub.jacobian, test_term.theta)
            forms.mass_supg.add(theta, scatter_matrix(data, elements, supg_mass_kernel(data, elements, tau, test)))
            for source in sub.forcing:
                forms.load_supg.add(theta_product(theta, source.theta),
                                    scatter_vector(data, elements, supg_load_kernel(data, elements, tau, test, source.spatial)))
    logger.debug(f"State forms assembled ({mode}): {forms.term_count()}")
    return forms


def assemble_adjoint_forms(mesh: TriangularMesh, coeffs: CoefficientField, delta, y_d,
                           obs: RegionMask, mode: str = "stabilized") -> AssembledForms:
    """
    Observation mass on Omega_obs and, in stabilized mode, the SUPG terms of the adjoint
    operator (reversed advection, -T_SS test functions) and of the observation term.

    ``y_d`` is a nodal field or a constant; only its values on Omega_obs matter.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"Unknown mode '{mode}', expected one of {MODES}")
    data = ElementData(mesh)
    forms = AssembledForms(n=mesh.n_vertices, thetas=coeffs.thetas, mode=mode)
    forms.desired_state = np.broadcast_to(np.asarray(y_d, dtype=float), (mesh.n_vertices,)).copy()
    observed = obs.indicator
    for sub in coeffs.subdomains:
        region = mesh.region(sub.label).triangles
        if region.size == 0:
            continue
        elements = region[observed[region]]
        if elements.size:
            forms.observation_mass.add(sub.jacobian, scatter_matrix(data, elements, mass_kernel(data, elements)))
        if mode != "stabilized":
            continue

        splits = _advection_splits(sub)
        tau = stabilization_parameter(data, region, delta, sub.speed)
        for trial_term, trial in zip(sub.advection, splits):
            for test_term, test in zip(sub.advection, splits):
                theta = theta_product(sub.supg_scale, trial_term.theta, test_term.theta)
                local = supg_pair_kernel(data, region, tau, trial, test, trial_divergence=1.0)
                forms.adjoint_supg.add(theta, scatter_matrix(data, region, local))
        if elements.size:
            tau_obs = stabilization_parameter(data, elements, delta, sub.speed)
            for test_term, test in zip(sub.advection, splits):
                theta = theta_product(sub.supg_scale, sub.jacobian, test_term.theta)
                forms.observation_supg.add(
                    theta, scatter_matrix(data, elements, supg_mass_kernel(data, elements, tau_obs, test)))
    return forms


def assemble_forms(mesh: TriangularMesh, coeffs: CoefficientField, delta, y_d, obs: RegionMask,
                   mode: str = "stabilized") -> AssembledForms:
    state = assemble_state_forms(mesh, coeffs, delta, mode)
    return state.merged_with(assemble_adjoint_forms(mesh, coeffs, delta, y_d, obs, mode))
