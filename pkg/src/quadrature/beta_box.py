from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from src.errors import DomainError, InvalidParameterError


@dataclass(frozen=True)
class BetaParameterBox:
    """
    Rectangular parameter domain with independent, affinely mapped Beta laws.

    Attributes:
        lower: Lower bound a_i per dimension.
        upper: Upper bound b_i per dimension.
        alpha: First Beta shape per dimension.
        beta: Second Beta shape per dimension.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        for name in ("lower", "upper", "alpha", "beta"):
            object.__setattr__(self, name, tuple(float(value) for value in getattr(self, name)))
        sizes = {len(self.lower), len(self.upper), len(self.alpha), len(self.beta)}
        if len(sizes) != 1 or not self.lower:
            raise InvalidParameterError("Bounds and shapes must share one positive dimension")
        if any(b <= a for a, b in zip(self.lower, self.upper)):
            raise InvalidParameterError(f"Need lower < upper, got {self.lower} and {self.upper}")
        if any(s <= 0.0 for s in self.alpha + self.beta):
            raise InvalidParameterError(f"Beta shapes must be positive, got {self.alpha}, {self.beta}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def uniform(self) -> "BetaParameterBox":
        """Same box with the uniform law Beta(1, 1) in every dimension."""
        ones = (1.0,) * self.dim
        return BetaParameterBox(self.lower, self.upper, ones, ones)

    def from_unit(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(self.lower) + self.widths * np.asarray(t, dtype=float)

    def to_unit(self, mu: np.ndarray) -> np.ndarray:
        return (np.asarray(mu, dtype=float) - np.asarray(self.lower)) / self.widths

    def contains(self, mu: Sequence[float], tol: float = 1e-12) -> bool:
        t = self.to_unit(mu)
        return bool(np.all(t >= -tol) and np.all(t <= 1.0 + tol))

    def density(self, mu: np.ndarray) -> np.ndarray:
        """Joint density with respect to the Lebesgue measure on the box.

        Accepts one point (d,) or a batch (n, d).
        """
        points = np.atleast_2d(np.asarray(mu, dtype=float))
        t = self.to_unit(points)
        tol = 1e-12
        if np.any(t < -tol) or np.any(t > 1.0 + tol):
            raise DomainError(f"Parameter point outside the box {list(zip(self.lower, self.upper))}")
        t = np.clip(t, 0.0, 1.0)
        values = np.ones(points.shape[0])
        for i in range(self.dim):
            values *= stats.beta.pdf(t[:, i], self.alpha[i], self.beta[i]) / self.widths[i]
        return values if np.ndim(mu) == 2 else values[0]


def beta_density(box: BetaParameterBox, mu) -> float:
    """Joint Beta density of ``box`` at the single point ``mu``."""
    return float(box.density(np.asarray(mu, dtype=float).reshape(-1)))
