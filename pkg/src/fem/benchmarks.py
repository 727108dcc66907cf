"""
Coefficients, tagging and boundary data of the two benchmark geometries.

Graetz-Poiseuille: reference domain (0,2)x(0,1). The right half is the image of a
stretching of the x0 direction by mu2, pulled back to the reference configuration.
Square: unit square with constant advection (cos mu2, sin mu2) and diffusivity 1/mu1.
"""

import math

import numpy as np

from src.errors import InvalidParameterError
from src.fem.coefficients import (
    AdvectionTerm,
    CoefficientField,
    ScalarTerm,
    SubdomainCoefficients,
    ThetaTable,
    constant,
    constant_vector,
)
from src.fem.forms import AssembledForms, assemble_state_forms
from src.mesh.triangular_mesh import BoundarySegment, TaggingScheme, TriangularMesh

GRAETZ_EXTENTS = (0.0, 2.0, 0.0, 1.0)
SQUARE_EXTENTS = (0.0, 1.0, 0.0, 1.0)


def _positive(*indices: int):
    def validate(mu: np.ndarray) -> None:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (2,) or not np.all(np.isfinite(mu)):
            raise InvalidParameterError(f"Expected a finite 2-vector parameter, got {mu}")
        for i in indices:
            if mu[i] <= 0.0:
                raise InvalidParameterError(f"mu{i + 1} must be positive, got {mu[i]}")
    return validate


GRAETZ_THETAS = ThetaTable(
    functions={
        "one": lambda mu: 1.0,
        "inv_mu1": lambda mu: 1.0 / mu[0],
        "inv_mu1_mu2": lambda mu: 1.0 / (mu[0] * mu[1]),
        "mu2_over_mu1": lambda mu: mu[1] / mu[0],
        "mu2": lambda mu: mu[1],
        "inv_sqrt_mu2": lambda mu: 1.0 / math.sqrt(mu[1]),
    },
    validate=_positive(0, 1),
)

SQUARE_THETAS = ThetaTable(
    functions={
        "one": lambda mu: 1.0,
        "inv_mu1": lambda mu: 1.0 / mu[0],
        "cos": lambda mu: math.cos(mu[1]),
        "sin": lambda mu: math.sin(mu[1]),
    },
    validate=_positive(0),
)

THETA_TABLES = {"graetz": GRAETZ_THETAS, "square": SQUARE_THETAS}


def poiseuille_profile(points: np.ndarray) -> np.ndarray:
    x1 = points[:, 1]
    return 4.0 * x1 * (1.0 - x1)


def poiseuille_field(points: np.ndarray) -> np.ndarray:
    return np.column_stack([poiseuille_profile(points), np.zeros(points.shape[0])])


def graetz_scheme() -> TaggingScheme:
    return TaggingScheme(
        segments=(
            BoundarySegment("gamma1", (0.0, 0.0), (1.0, 0.0)),
            BoundarySegment("gamma2", (1.0, 0.0), (2.0, 0.0)),
            BoundarySegment("gamma3", (2.0, 0.0), (2.0, 1.0), dirichlet=False),
            BoundarySegment("gamma4", (1.0, 1.0), (2.0, 1.0)),
            BoundarySegment("gamma5", (0.0, 1.0), (1.0, 1.0)),
            BoundarySegment("gamma6", (0.0, 0.0), (0.0, 1.0)),
        ),
        interfaces=(1.0,),
        subdomain_labels=("omega1", "omega2"),
    )


# Later entries win at shared corners, so (1, 0) and (1, 1) carry the heated value.
GRAETZ_BOUNDARY_VALUES = {"gamma1": 0.0, "gamma5": 0.0, "gamma6": 0.0, "gamma2": 1.0, "gamma4": 1.0}


def graetz_observation(points: np.ndarray) -> np.ndarray:
    x0, x1 = points[:, 0], points[:, 1]
    return (x0 >= 1.0) & ((x1 <= 0.2) | (x1 >= 0.8))


def graetz_coefficients() -> CoefficientField:
    one = constant(1.0)
    advection = (AdvectionTerm("one", poiseuille_field),)
    return CoefficientField(
        subdomains=(
            SubdomainCoefficients(
                label="omega1",
                diffusion_xx=(ScalarTerm("inv_mu1", one),),
                diffusion_yy=(ScalarTerm("inv_mu1", one),),
                advection=advection,
                speed=poiseuille_profile,
            ),
            SubdomainCoefficients(
                label="omega2",
                diffusion_xx=(ScalarTerm("inv_mu1_mu2", one),),
                diffusion_yy=(ScalarTerm("mu2_over_mu1", one),),
                advection=advection,
                speed=poiseuille_profile,
                jacobian="mu2",
                supg_scale="inv_sqrt_mu2",
            ),
        ),
        thetas=GRAETZ_THETAS,
        name="graetz",
    )


def square_scheme() -> TaggingScheme:
    return TaggingScheme(segments=(
        BoundarySegment("gamma1", (0.0, 0.0), (0.0, 0.25)),
        BoundarySegment("gamma2", (0.0, 0.0), (1.0, 0.0)),
        BoundarySegment("gamma3", (1.0, 0.0), (1.0, 1.0)),
        BoundarySegment("gamma4", (0.0, 1.0), (1.0, 1.0)),
        BoundarySegment("gamma5", (0.0, 0.25), (0.0, 1.0)),
    ))


SQUARE_BOUNDARY_VALUES = {"gamma3": 0.0, "gamma4": 0.0, "gamma5": 0.0, "gamma1": 1.0, "gamma2": 1.0}


def square_observation(points: np.ndarray) -> np.ndarray:
    return (points[:, 0] >= 0.25) & (points[:, 1] >= 0.75)


def square_coefficients() -> CoefficientField:
    one = constant(1.0)
    return CoefficientField(
        subdomains=(
            SubdomainCoefficients(
                label="omega",
                diffusion_xx=(ScalarTerm("inv_mu1", one),),
                diffusion_yy=(ScalarTerm("inv_mu1", one),),
                advection=(AdvectionTerm("cos", constant_vector(1.0, 0.0)),
                           AdvectionTerm("sin", constant_vector(0.0, 1.0))),
                speed=constant(1.0),
            ),
        ),
        thetas=SQUARE_THETAS,
        name="square",
    )


def assemble_graetz_transformed(mesh: TriangularMesh, mu=None, delta=1.0,
                                mode: str = "stabilized") -> AssembledForms:
    """
    State forms of the Graetz problem on the reference domain.

    On omega2 the d/dx0 d/dx0 diffusion carries 1/(mu1 mu2), the d/dx1 d/dx1 diffusion mu2/mu1,
    masses mu2 and the stabilization parameter the extra factor 1/sqrt(mu2); the Poiseuille
    advection is unscaled. ``mu`` is only validated.
    """
    if set(mesh.scheme.subdomain_labels) != {"omega1", "omega2"}:
        raise InvalidParameterError("Graetz assembly needs a mesh split into omega1 and omega2")
    if mu is not None:
        GRAETZ_THETAS.validate(np.asarray(mu, dtype=float))
    return assemble_state_forms(mesh, graetz_coefficients(), delta, mode)
