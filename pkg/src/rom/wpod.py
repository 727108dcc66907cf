"""
Offline phase of the partitioned weighted POD: snapshots, weighted correlation matrices,
eigenpairs, bases per variable and the aggregated state/adjoint space.
"""

import asyncio
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy import sparse as sp

from src.errors import BasisTruncationError, InvalidParameterError, NumericError, SnapshotError
from src.ocp.problem import OcpDefinition
from src.ocp.solver import OptimalTriple, solve_truth
from src.quadrature.sampling import WeightedSample
from src.rom.reduced_model import ReducedModel

logger = logging.getLogger(__name__)

EIGEN_THRESHOLD = 1e-14
DROP_TOLERANCE = 1e-10
VARIABLES = ("y", "u", "p")


def snapshot_products(ocp: OcpDefinition) -> dict[str, sp.csr_matrix]:
    """X_y = X_p = H1 and X_u = L2; space-time products add the levels with weight dt."""
    products = {"y": ocp.state_product, "u": ocp.control_product, "p": ocp.state_product}
    if not ocp.is_space_time:
        return products
    levels = ocp.dt * sp.identity(ocp.n_steps, format="csr")
    return {name: sp.kron(levels, matrix, format="csr") for name, matrix in products.items()}


@dataclass
class SnapshotSet:
    """
    Snapshot matrices, one column per training parameter.

    Attributes:
        matrices: Variable -> (rows, n_train) array of homogenized states, controls, adjoints.
        sample: The weighted training set.
        products: Variable -> inner product matrix X_v.
    """

    matrices: dict[str, np.ndarray]
    sample: WeightedSample
    products: dict[str, sp.spmatrix]

    def __post_init__(self):
        for name, matrix in self.matrices.items():
            if matrix.shape[1] != len(self.sample):
                raise InvalidParameterError(f"Snapshot matrix '{name}' has {matrix.shape[1]} columns "
                                            f"for {len(self.sample)} parameters")

    @property
    def n_train(self) -> int:
        return len(self.sample)

    @classmethod
    def from_triples(cls, triples: list[OptimalTriple], sample: WeightedSample,
                     products: dict[str, sp.spmatrix]) -> "SnapshotSet":
        matrices = {name: np.column_stack([triple.column(name) for triple in triples]) for name in VARIABLES}
        return cls(matrices, sample, products)


async def _collect_async(ocp: OcpDefinition, nodes: np.ndarray, mode: str, jobs: int) -> list[OptimalTriple]:
    semaphore = asyncio.Semaphore(jobs)

    async def solve_one(mu):
        async with semaphore:
            try:
                return await asyncio.to_thread(solve_truth, ocp, mu, mode)
            except NumericError as e:
                raise SnapshotError(mu, e) from e

    return await asyncio.gather(*(solve_one(mu) for mu in nodes))


def collect_snapshots(ocp: OcpDefinition, sample: WeightedSample, mode: str = "stabilized",
                      jobs: int = 1) -> SnapshotSet:
    """
    One truth solve per training parameter.

    Args:
        ocp: The discretized benchmark.
        sample: Training nodes and weights.
        mode: Truth system used for the snapshots.
        jobs: Concurrent solves; 1 solves in order.
    """
    if len(sample) == 0:
        raise InvalidParameterError("Training sample is empty")
    if jobs > 1:
        triples = asyncio.run(_collect_async(ocp, sample.nodes, mode, jobs))
    else:
        triples = []
        for mu in sample.nodes:
            try:
                triples.append(solve_truth(ocp, mu, mode))
            except NumericError as e:
                raise SnapshotError(mu, e) from e
    logger.info(f"Collected {len(triples)} snapshots ({sample.rule}, {mode}) for {ocp.problem_id}")
    return SnapshotSet.from_triples(triples, sample, snapshot_products(ocp))


def weighted_correlation(snapshots: SnapshotSet, variable: str) -> tuple[np.ndarray, np.ndarray]:
    """D_kl = (s_k, s_l)_X / N_train and the weighted matrix W D."""
    matrix = snapshots.matrices[variable]
    gram = matrix.T @ (snapshots.products[variable] @ matrix)
    correlation = 0.5 * (gram + gram.T) / snapshots.n_train
    return correlation, snapshots.sample.weights[:, None] * correlation


@dataclass
class WeightedEigenpairs:
    """Retained eigenpairs sorted descending; ``spectrum`` keeps every real eigenvalue."""

    values: np.ndarray
    vectors: np.ndarray
    spectrum: np.ndarray
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.values.size)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    for n in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, n]) > 1e-12 * np.abs(vectors[:, n]).max(initial=0.0))
        if nonzero.size and vectors[nonzero[0], n] < 0.0:
            vectors[:, n] = -vectors[:, n]
    return vectors


def weighted_eig(weighted: np.ndarray, correlation: np.ndarray, weights: np.ndarray,
                 threshold: float = EIGEN_THRESHOLD) -> WeightedEigenpairs:
    """
    Eigenpairs of W D.

    Nonnegative weights go through the symmetric similarity W^1/2 D W^1/2 and a symmetric
    solver; otherwise a general eigensolver is used and non-real or non-positive eigenvalues
    are discarded with a diagnostic.
    """
    weights = np.asarray(weights, dtype=float)
    diagnostics = []
    if np.all(weights >= 0.0):
        root = np.sqrt(weights)
        values, vectors = linalg.eigh(root[:, None] * correlation * root[None, :])
        vectors = root[:, None] * vectors
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        spectrum = values.copy()
    else:
        diagnostics.append(f"{int(np.sum(weights < 0.0))} negative weights, general eigensolver used")
        values, vectors = linalg.eig(weighted)
        scale = np.abs(values).max(initial=0.0)
        real = np.abs(values.imag) <= 1e-12 * max(scale, 1e-300)
        if not np.all(real):
            diagnostics.append(f"{int(np.sum(~real))} non-real eigenvalues discarded")
        spectrum = np.sort(values.real)[::-1]
        values, vectors = values[real].real, vectors[:, real].real
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]

    largest = values[0] if values.size and values[0] > 0.0 else 0.0
    keep = values > threshold * largest if largest > 0.0 else np.zeros(values.size, dtype=bool)
    if diagnostics and np.any(values < -threshold * largest):
        diagnostics.append(f"{int(np.sum(values < -threshold * largest))} negative eigenvalues discarded")
    values, vectors = values[keep], vectors[:, keep]
    norms = np.linalg.norm(vectors, axis=0)
    vectors = _fix_signs(vectors / np.where(norms > 0.0, norms, 1.0))
    for message in diagnostics:
        logger.warning(message)
    return WeightedEigenpairs(values, vectors, spectrum, diagnostics)


def gram_schmidt(columns: np.ndarray, product: sp.spmatrix, tol: float = DROP_TOLERANCE,
                 relative: bool = True) -> tuple[np.ndarray, list[int]]:
    """
    Order-preserving Gram-Schmidt in the ``product`` inner space, projecting twice per column.

    A column is dropped when its residual norm falls below ``tol`` (times its original norm when
    ``relative``). Column order is kept so nested prefixes stay nested, which rules out pivoted QR.
    Returns the orthonormal columns and the indices of the dropped inputs.
    """
    columns = np.asarray(columns, dtype=float)
    basis = np.zeros_like(columns)
    weighted = np.zeros_like(columns)
    dropped: list[int] = []
    k = 0
    for index in range(columns.shape[1]):
        v = columns[:, index].copy()
        initial = np.sqrt(max(float(v @ (product @ v)), 0.0))
        for _ in range(2):
            v -= basis[:, :k] @ (weighted[:, :k].T @ v)
        xv = product @ v
        norm = np.sqrt(max(float(v @ xv), 0.0))
        limit = tol * initial if relative else tol
        if initial == 0.0 or norm < limit:
            dropped.append(index)
            continue
        basis[:, k] = v / norm
        weighted[:, k] = xv / norm
        k += 1
    return basis[:, :k].copy(), dropped


def extract_basis(snapshots: SnapshotSet, variable: str, eigenpairs: WeightedEigenpairs, n: int,
                  strict: bool = False) -> np.ndarray:
    """
    zeta_n = S g_n / sqrt(lambda_n), re-orthonormalized in X_v.

    ``n`` larger than the retained spectrum is capped with a warning, or raises
    ``BasisTruncationError`` when ``strict``.
    """
    if n < 1:
        raise InvalidParameterError(f"Basis size must be at least 1, got {n}")
    available = len(eigenpairs)
    if n > available:
        if strict or available == 0:
            raise BasisTruncationError(n, available)
        logger.warning(f"Basis for '{variable}' capped at N={available} (requested {n})")
        eigenpairs.diagnostics.append(f"{variable}: N capped at {available}")
        n = available
    raw = snapshots.matrices[variable] @ eigenpairs.vectors[:, :n] / np.sqrt(eigenpairs.values[:n])
    basis, dropped = gram_schmidt(raw, snapshots.products[variable])
    if dropped:
        logger.warning(f"Basis for '{variable}': {len(dropped)} dependent columns dropped")
        eigenpairs.diagnostics.append(f"{variable}: dropped basis columns {dropped}")
    return basis


@dataclass(frozen=True)
class AggregatedBasis:
    """
    Sigma, orthonormal in X_y, built from interleaved state and adjoint columns.

    ``dimensions[k]`` is the number of columns spanned by the first k pairs, so the space for a
    reduced size k is ``matrix[:, :dimensions[k]]``.
    """

    matrix: np.ndarray
    dimensions: tuple[int, ...]
    dropped: tuple[int, ...] = ()

    def leading(self, n: int) -> np.ndarray:
        return self.matrix[:, :self.dimensions[n]]


def aggregate_spaces(basis_y: np.ndarray, basis_p: np.ndarray, product: sp.spmatrix,
                     tol: float = DROP_TOLERANCE) -> AggregatedBasis:
    if basis_y.shape[1] != basis_p.shape[1]:
        raise InvalidParameterError(f"State and adjoint bases differ in size: {basis_y.shape[1]} vs {basis_p.shape[1]}")
    n = basis_y.shape[1]
    interleaved = np.empty((basis_y.shape[0], 2 * n))
    interleaved[:, 0::2] = basis_y
    interleaved[:, 1::2] = basis_p
    matrix, dropped = gram_schmidt(interleaved, product, tol)
    kept = np.ones(2 * n, dtype=bool)
    kept[dropped] = False
    dimensions = (0,) + tuple(int(np.sum(kept[:2 * k])) for k in range(1, n + 1))
    if dropped:
        logger.warning(f"Aggregation dropped {len(dropped)} nearly dependent columns: {dropped}")
    return AggregatedBasis(matrix, dimensions, tuple(dropped))


@dataclass
class OfflineResult:
    snapshots: SnapshotSet
    eigenpairs: dict[str, WeightedEigenpairs]
    bases: dict[str, np.ndarray]
    aggregated: AggregatedBasis

    @property
    def diagnostics(self) -> list[str]:
        return [message for pairs in self.eigenpairs.values() for message in pairs.diagnostics]


def build_bases(snapshots: SnapshotSet, n_max: int, strict: bool = False) -> OfflineResult:
    """Eigen solve and basis extraction per variable, then aggregation of state and adjoint."""
    eigenpairs, bases = {}, {}
    for variable in VARIABLES:
        correlation, weighted = weighted_correlation(snapshots, variable)
        eigenpairs[variable] = weighted_eig(weighted, correlation, snapshots.sample.weights)
        bases[variable] = extract_basis(snapshots, variable, eigenpairs[variable], n_max, strict)
    n = min(basis.shape[1] for basis in bases.values())
    if any(basis.shape[1] != n for basis in bases.values()):
        logger.warning(f"Bases truncated to the common size N={n}")
        bases = {name: basis[:, :n] for name, basis in bases.items()}
    aggregated = aggregate_spaces(bases["y"], bases["p"], snapshots.products["y"])
    return OfflineResult(snapshots, eigenpairs, bases, aggregated)


def run_offline(ocp: OcpDefinition, sample: WeightedSample, n_max: int, jobs: int = 1,
                strict: bool = False):
    """
    Full offline phase: snapshots, weighted eigenproblems, bases, aggregation and projection.

    Returns:
        ReducedModel: projected affine blocks for both online modes.
    """
    if n_max < 1:
        raise InvalidParameterError(f"N_max must be at least 1, got {n_max}")
    snapshots = collect_snapshots(ocp, sample, "stabilized", jobs)
    offline = build_bases(snapshots, n_max, strict)
    model = ReducedModel.from_offline(ocp, offline)
    logger.info(f"Offline phase done for {ocp.problem_id}/{sample.rule}: N={model.n_max}, "
                f"aggregated dimension {offline.aggregated.matrix.shape[1]}")
    return model
