"""
Deterministic quadrature training sets: tensor Gauss-Jacobi, tensor Clenshaw-Curtis
and isotropic Smolyak grids built from either family.

One-dimensional rules are produced on the unit interval and mapped to the box.
Gauss-Jacobi rules integrate against the Beta probability law (weights sum to 1);
Clenshaw-Curtis rules integrate against the Lebesgue measure (weights sum to the width).
"""

import itertools
import logging
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from src.errors import InvalidParameterError, NumericError
from src.quadrature.beta_box import BetaParameterBox
from src.quadrature.sampling import WeightedSample, sample_halton, sample_monte_carlo, sample_uniform_pod

logger = logging.getLogger(__name__)

COALESCE_DECIMALS = 13
MAX_SMOLYAK_LEVEL = 40

Rule1D = Callable[[int], tuple[np.ndarray, np.ndarray]]


def jacobi_recurrence(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Recurrence coefficients of the monic Jacobi polynomials for (1-x)^a (1+x)^b on [-1, 1].

    Returns:
        tuple: Diagonal (n,) and squared off-diagonal (n-1,) of the Jacobi matrix.
    """
    k = np.arange(n, dtype=float)
    s = 2.0 * k + a + b
    diagonal = np.empty(n)
    diagonal[0] = (b - a) / (a + b + 2.0)
    if n > 1:
        diagonal[1:] = (b * b - a * a) / (s[1:] * (s[1:] + 2.0))
    off = np.empty(max(n - 1, 0))
    if n > 1:
        off[0] = 4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0) ** 2 * (a + b + 3.0))
        j = k[2:]
        sj = s[2:]
        off[1:] = 4.0 * j * (j + a) * (j + b) * (j + a + b) / (sj**2 * (sj + 1.0) * (sj - 1.0))
    return diagonal, off


def gauss_jacobi_unit(n: int, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule on [0, 1] for the Beta(alpha, beta) probability law (Golub-Welsch)."""
    if n < 1:
        raise InvalidParameterError(f"Need at least one Gauss node, got {n}")
    diagonal, off = jacobi_recurrence(n, beta - 1.0, alpha - 1.0)
    if n == 1:
        x, weights = diagonal.copy(), np.ones(1)
    else:
        try:
            x, vectors = eigh_tridiagonal(diagonal, np.sqrt(off))
        except (LinAlgError, ValueError) as e:
            raise NumericError(f"Jacobi matrix eigen solve failed for n={n}, Beta({alpha}, {beta}): {e}") from e
        weights = vectors[0, :] ** 2
        weights /= weights.sum()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(weights))):
        raise NumericError(f"Non-finite Gauss-Jacobi rule for n={n}, Beta({alpha}, {beta})")
    return 0.5 * (x + 1.0), weights


def clenshaw_curtis_reference(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Clenshaw-Curtis rule on [-1, 1] (Chebyshev extrema, Lebesgue weights)."""
    if n < 1:
        raise InvalidParameterError(f"Need at least one Clenshaw-Curtis node, got {n}")
    if n == 1:
        return np.zeros(1), np.full(1, 2.0)
    order = n - 1
    theta = np.pi * np.arange(n) / order
    weights = np.ones(n)
    for k in range(1, order // 2 + 1):
        b = 1.0 if 2 * k == order else 2.0
        weights -= b * np.cos(2.0 * k * theta) / (4.0 * k * k - 1.0)
    scale = np.full(n, 2.0 / order)
    scale[[0, -1]] = 1.0 / order
    return np.cos(theta)[::-1].copy(), (scale * weights)[::-1].copy()


def clenshaw_curtis_unit(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, weights = clenshaw_curtis_reference(n)
    return 0.5 * (x + 1.0), 0.5 * weights


def _per_dim(n_per_dim, dim: int) -> tuple[int, ...]:
    counts = (int(n_per_dim),) * dim if np.isscalar(n_per_dim) else tuple(int(n) for n in n_per_dim)
    if len(counts) != dim or any(n < 1 for n in counts):
        raise InvalidParameterError(f"Need {dim} positive node counts, got {n_per_dim}")
    return counts


def _tensorize(rules: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    grids = np.meshgrid(*[nodes for nodes, _ in rules], indexing="ij")
    weight_grids = np.meshgrid(*[weights for _, weights in rules], indexing="ij")
    nodes = np.column_stack([grid.ravel() for grid in grids])
    weights = np.prod(np.column_stack([grid.ravel() for grid in weight_grids]), axis=1)
    return nodes, weights


def gauss_jacobi_tensor(box: BetaParameterBox, n_per_dim) -> WeightedSample:
    counts = _per_dim(n_per_dim, box.dim)
    unit, omega = _tensorize([gauss_jacobi_unit(n, box.alpha[i], box.beta[i]) for i, n in enumerate(counts)])
    return WeightedSample(box.from_unit(unit), omega.copy(), "gauss-jacobi", quadrature_weights=omega)


def clenshaw_curtis_tensor(box: BetaParameterBox, n_per_dim) -> WeightedSample:
    counts = _per_dim(n_per_dim, box.dim)
    unit, omega = _tensorize([clenshaw_curtis_unit(n) for n in counts])
    omega = omega * box.volume
    nodes = box.from_unit(unit)
    densities = box.density(nodes)
    return WeightedSample(nodes, densities * omega, "clenshaw-curtis",
                          quadrature_weights=omega, densities=densities)


def _family_rules(box: BetaParameterBox, family: str) -> list[Rule1D]:
    if family == "gj":
        return [lambda level, i=i: gauss_jacobi_unit(level + 1, box.alpha[i], box.beta[i]) for i in range(box.dim)]
    if family == "cc":
        return [lambda level: clenshaw_curtis_unit(level + 1)] * box.dim
    raise InvalidParameterError(f"Unknown sparse-grid family '{family}', expected 'gj' or 'cc'")


def smolyak_grid(rules: Sequence[Rule1D], level: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Isotropic Smolyak combination technique on the unit cube.

    Rule i at level l has l + 1 nodes. Coincident nodes are merged and their weights summed,
    so the node count is that of the union of all tensor grids in the combination.
    """
    dim = len(rules)
    merged: dict[tuple, list] = {}
    for total in range(max(0, level - dim + 1), level + 1):
        coefficient = (-1) ** (level - total) * comb(dim - 1, level - total)
        for index in itertools.product(range(total + 1), repeat=dim):
            if sum(index) != total:
                continue
            nodes, weights = _tensorize([rules[k](index[k]) for k in range(dim)])
            for point, weight in zip(nodes, weights):
                key = tuple(np.round(point, COALESCE_DECIMALS))
                if key in merged:
                    merged[key][1] += coefficient * weight
                else:
                    merged[key] = [point, coefficient * weight]
    keys = sorted(merged)
    nodes = np.array([merged[key][0] for key in keys])
    weights = np.array([merged[key][1] for key in keys])
    return nodes, weights


def smolyak_sparse(box: BetaParameterBox, family: str, target_n: int) -> WeightedSample:
    """
    Largest isotropic Smolyak grid whose node count does not exceed ``target_n``.

    Args:
        box: Parameter box and Beta law.
        family: 'gj' (w_k = omega_k) or 'cc' (w_k = rho_k * omega_k).
        target_n: Requested training set size.
    """
    if target_n < 1:
        raise InvalidParameterError(f"Target node count must be positive, got {target_n}")
    rules = _family_rules(box, family)
    best = smolyak_grid(rules, 0)
    chosen = 0
    for level in range(1, MAX_SMOLYAK_LEVEL + 1):
        candidate = smolyak_grid(rules, level)
        if candidate[0].shape[0] > target_n:
            break
        best, chosen = candidate, level
    unit, omega = best
    nodes = box.from_unit(unit)
    if family == "cc":
        omega = omega * box.volume
        densities = box.density(nodes)
        weights = densities * omega
        rule = "smolyak-cc"
    else:
        densities = None
        weights = omega.copy()
        rule = "smolyak-gj"
    if np.any(weights < 0.0):
        logger.info(f"{rule} level {chosen} carries {int(np.sum(weights < 0))} negative combination weights")
    logger.info(f"{rule}: level {chosen} with {nodes.shape[0]} nodes for target {target_n}")
    return WeightedSample(nodes, weights, rule, quadrature_weights=omega, densities=densities, level=chosen)


def build_sample(rule: str, box: BetaParameterBox, n_train: int, seed: int = 0) -> WeightedSample:
    """Training set for ``rule`` sized as close to ``n_train`` as the rule allows."""
    if rule == "pod":
        return sample_uniform_pod(box, n_train, seed)
    if rule == "mc":
        return sample_monte_carlo(box, n_train, seed)
    if rule == "halton":
        return sample_halton(box, n_train)
    if rule in ("gauss-jacobi", "clenshaw-curtis"):
        per_dim = max(1, int(round(n_train ** (1.0 / box.dim))))
        if rule == "gauss-jacobi":
            return gauss_jacobi_tensor(box, per_dim)
        return clenshaw_curtis_tensor(box, per_dim)
    if rule == "smolyak-gj":
        return smolyak_sparse(box, "gj", n_train)
    if rule == "smolyak-cc":
        return smolyak_sparse(box, "cc", n_train)
    raise InvalidParameterError(f"Unknown rule '{rule}'")
