"""
Piecewise, affinely parametrized coefficients of the advection-diffusion operator.

Every parameter dependence goes through a named Θ-function held in a ``ThetaTable``;
spatial factors are plain callables mapping (k, 2) points to (k,) or (k, 2) arrays.
Products of Θ-functions are written as ``"a*b"`` and evaluated factor by factor.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from src.errors import InvalidCoefficientError, InvalidParameterError

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]


def constant(value: float) -> ScalarField:
    return lambda points: np.full(points.shape[0], float(value))


def constant_vector(vx: float, vy: float) -> VectorField:
    return lambda points: np.tile([float(vx), float(vy)], (points.shape[0], 1))


def zero_field(points: np.ndarray) -> np.ndarray:
    return np.zeros(points.shape[0])


@dataclass(frozen=True)
class ThetaTable:
    """Named parameter functions plus the parameter validity check."""

    functions: Mapping[str, Callable[[np.ndarray], float]]
    validate: Callable[[np.ndarray], None] = lambda mu: None

    def __call__(self, expression: str, mu) -> float:
        value = 1.0
        for factor in expression.split("*"):
            try:
                value *= float(self.functions[factor](np.asarray(mu, dtype=float)))
            except KeyError as e:
                raise InvalidParameterError(f"Unknown theta function '{factor}'") from e
        return value


def theta_product(*names: str) -> str:
    factors = [name for name in names if name != "one"]
    return "*".join(factors) if factors else "one"


@dataclass(frozen=True)
class ScalarTerm:
    theta: str
    spatial: ScalarField


@dataclass(frozen=True)
class AdvectionTerm:
    """One affine component theta(mu) * b(x) of the advection field, with div b in closed form."""

    theta: str
    field: VectorField
    divergence: ScalarField = zero_field


@dataclass(frozen=True)
class SubdomainCoefficients:
    """
    Reference-domain coefficients on one subdomain.

    Attributes:
        label: Subdomain label on the mesh.
        diffusion_xx: Affine terms of the d/dx0 d/dx0 diffusion coefficient.
        diffusion_yy: Affine terms of the d/dx1 d/dx1 diffusion coefficient.
        advection: Affine components of the advection field.
        forcing: Affine terms of the source f.
        jacobian: Theta name of the change-of-variables determinant (mass scaling).
        supg_scale: Theta name multiplying the stabilization parameter.
        speed: |eta| as a parameter-independent spatial function.
    """

    label: str
    diffusion_xx: tuple[ScalarTerm, ...]
    diffusion_yy: tuple[ScalarTerm, ...]
    advection: tuple[AdvectionTerm, ...]
    speed: ScalarField
    forcing: tuple[ScalarTerm, ...] = ()
    jacobian: str = "one"
    supg_scale: str = "one"


@dataclass(frozen=True)
class CoefficientField:
    subdomains: tuple[SubdomainCoefficients, ...]
    thetas: ThetaTable
    name: str = ""
    _by_label: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_label", {sub.label: sub for sub in self.subdomains})

    def subdomain(self, label: str) -> SubdomainCoefficients:
        try:
            return self._by_label[label]
        except KeyError as e:
            raise InvalidCoefficientError(f"No coefficients for subdomain '{label}'") from e

    def _sum(self, terms, points, mu) -> np.ndarray:
        total = np.zeros(points.shape[0])
        for term in terms:
            total += self.thetas(term.theta, mu) * term.spatial(points)
        return total

    def diffusion(self, label: str, points: np.ndarray, mu) -> tuple[np.ndarray, np.ndarray]:
        sub = self.subdomain(label)
        kxx = self._sum(sub.diffusion_xx, points, mu)
        kyy = self._sum(sub.diffusion_yy, points, mu)
        if np.any(kxx <= 0.0) or np.any(kyy <= 0.0):
            raise InvalidCoefficientError(f"Diffusion must be positive on '{label}' at mu={tuple(mu)}")
        return kxx, kyy

    def advection(self, label: str, points: np.ndarray, mu) -> np.ndarray:
        sub = self.subdomain(label)
        total = np.zeros((points.shape[0], 2))
        for term in sub.advection:
            total += self.thetas(term.theta, mu) * term.field(points)
        return total

    def forcing(self, label: str, points: np.ndarray, mu) -> np.ndarray:
        return self._sum(self.subdomain(label).forcing, points, mu)

    def validate(self, mu) -> None:
        self.thetas.validate(np.asarray(mu, dtype=float))
