"""Random and quasi-random training sets with their wPOD weights."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import qmc

from src.errors import InvalidParameterError
from src.quadrature.beta_box import BetaParameterBox

logger = logging.getLogger(__name__)

RULES = ("pod", "mc", "halton", "gauss-jacobi", "clenshaw-curtis", "smolyak-gj", "smolyak-cc")


@dataclass(frozen=True)
class WeightedSample:
    """
    Parameter nodes with the weights used in the weighted correlation matrix.

    Attributes:
        nodes: (n, d) parameter points.
        weights: (n,) wPOD weights w_k.
        rule: One of ``RULES``.
        quadrature_weights: Raw quadrature weights when the rule has them.
        densities: Beta density at the nodes when the rule uses it.
        level: Sparse-grid level for Smolyak rules.
    """

    nodes: np.ndarray
    weights: np.ndarray
    rule: str
    quadrature_weights: np.ndarray | None = None
    densities: np.ndarray | None = None
    level: int | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise InvalidParameterError(f"Unknown rule '{self.rule}', expected one of {RULES}")
        if self.nodes.ndim != 2 or self.nodes.shape[0] != self.weights.shape[0]:
            raise InvalidParameterError("Nodes and weights must have matching lengths")

    def __len__(self) -> int:
        return int(self.nodes.shape[0])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.nodes, columns=[f"mu{i + 1}" for i in range(self.nodes.shape[1])])
        frame["w"] = self.weights
        return frame

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def _check_count(n: int) -> None:
    if n < 1:
        raise InvalidParameterError(f"Sample size must be at least 1, got {n}")


def sample_monte_carlo(box: BetaParameterBox, n: int, seed: int) -> WeightedSample:
    """Independent draws from the box's Beta law, weighted by the joint density."""
    _check_count(n)
    rng = np.random.default_rng(seed)
    unit = rng.beta(np.asarray(box.alpha), np.asarray(box.beta), size=(n, box.dim))
    nodes = box.from_unit(unit)
    densities = box.density(nodes)
    return WeightedSample(nodes, densities.copy(), "mc", densities=densities)


def sample_uniform_pod(box: BetaParameterBox, n: int, seed: int) -> WeightedSample:
    """Uniform Monte-Carlo training set with unit weights (standard POD)."""
    _check_count(n)
    rng = np.random.default_rng(seed)
    nodes = box.from_unit(rng.random((n, box.dim)))
    return WeightedSample(nodes, np.ones(n), "pod")


def sample_halton(box: BetaParameterBox, n: int) -> WeightedSample:
    """First ``n`` points of the unscrambled Halton sequence, skipping the origin."""
    _check_count(n)
    engine = qmc.Halton(d=box.dim, scramble=False)
    engine.fast_forward(1)
    nodes = box.from_unit(engine.random(n))
    densities = box.density(nodes)
    return WeightedSample(nodes, densities.copy(), "halton", densities=densities)


def sample_testing_set(box: BetaParameterBox, n: int, seed: int, uniform: bool = False) -> WeightedSample:
    """Monte-Carlo testing set; the uniform variant serves the standard POD comparison."""
    if uniform:
        return sample_uniform_pod(box, n, seed)
    return sample_monte_carlo(box, n, seed)
