import numpy as np
import pytest
from scipy import linalg
from scipy import sparse as sp

from src.errors import BasisTruncationError, FactorizationError, InvalidParameterError, SnapshotError
from src.quadrature.sampling import WeightedSample
from src.rom import wpod
from src.rom.wpod import (
    SnapshotSet,
    aggregate_spaces,
    build_bases,
    collect_snapshots,
    extract_basis,
    gram_schmidt,
    snapshot_products,
    weighted_correlation,
    weighted_eig,
)


def synthetic_snapshots(matrix: np.ndarray, weights: np.ndarray | None = None, product=None) -> SnapshotSet:
    n_train = matrix.shape[1]
    weights = np.ones(n_train) if weights is None else np.asarray(weights, dtype=float)
    sample = WeightedSample(np.zeros((n_train, 2)), weights, "mc")
    product = sp.identity(matrix.shape[0], format="csr") if product is None else product
    return SnapshotSet({"y": matrix}, sample, {"y": product})


def spd_product(n: int, seed: int = 0) -> sp.csr_matrix:
    rng = np.random.default_rng(seed)
    factor = rng.standard_normal((n, n))
    return sp.csr_matrix(factor @ factor.T / n + np.eye(n))


def leading_left_vectors(matrix: np.ndarray, k: int) -> np.ndarray:
    return np.linalg.svd(matrix, full_matrices=False)[0][:, :k]


class TestWeightedCorrelation:
    def test_scaled_gram_and_row_weights(self):
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((20, 6))
        weights = rng.uniform(0.5, 2.0, 6)
        product = spd_product(20)
        correlation, weighted = weighted_correlation(synthetic_snapshots(matrix, weights, product), "y")
        np.testing.assert_allclose(correlation, matrix.T @ (product @ matrix) / 6, rtol=1e-12)
        np.testing.assert_allclose(correlation, correlation.T)
        np.testing.assert_allclose(weighted, np.diag(weights) @ correlation, rtol=1e-12)

    def test_column_count_checked(self):
        sample = WeightedSample(np.zeros((3, 2)), np.ones(3), "mc")
        with pytest.raises(InvalidParameterError):
            SnapshotSet({"y": np.zeros((5, 4))}, sample, {"y": sp.identity(5)})


class TestWeightedEigenproblem:
    def test_eigen_equation_and_ordering(self):
        rng = np.random.default_rng(1)
        matrix = rng.standard_normal((30, 8))
        weights = rng.uniform(0.1, 3.0, 8)
        correlation, weighted = weighted_correlation(synthetic_snapshots(matrix, weights), "y")
        pairs = weighted_eig(weighted, correlation, weights)
        assert len(pairs) == 8
        assert np.all(np.diff(pairs.values) <= 0.0)
        np.testing.assert_allclose(weighted @ pairs.vectors, pairs.vectors * pairs.values, atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(pairs.vectors, axis=0), 1.0)

    def test_rank_deficient_spectrum_truncated(self):
        rng = np.random.default_rng(2)
        matrix = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 7))
        correlation, weighted = weighted_correlation(synthetic_snapshots(matrix), "y")
        pairs = weighted_eig(weighted, correlation, np.ones(7))
        assert len(pairs) == 3
        assert pairs.spectrum.size == 7

    def test_negative_weights_use_general_solver(self):
        rng = np.random.default_rng(3)
        matrix = rng.standard_normal((15, 5))
        weights = np.array([1.0, 0.5, -0.2, 1.5, 0.8])
        correlation, weighted = weighted_correlation(synthetic_snapshots(matrix, weights), "y")
        pairs = weighted_eig(weighted, correlation, weights)
        assert any("negative weights" in message for message in pairs.diagnostics)
        assert np.all(pairs.values > 0.0)
        np.testing.assert_allclose(weighted @ pairs.vectors, pairs.vectors * pairs.values, atol=1e-9)


class TestBasis:
    def test_uniform_weights_reproduce_standard_pod(self):
        rng = np.random.default_rng(4)
        matrix = rng.standard_normal((50, 12))
        snapshots = synthetic_snapshots(matrix)
        correlation, weighted = weighted_correlation(snapshots, "y")
        basis = extract_basis(snapshots, "y", weighted_eig(weighted, correlation, np.ones(12)), 4)
        angles = linalg.subspace_angles(basis, leading_left_vectors(matrix, 4))
        assert np.max(angles) <= 1e-8

    def test_weights_act_as_column_scaling(self):
        rng = np.random.default_rng(5)
        matrix = rng.standard_normal((40, 10))
        weights = rng.uniform(0.1, 4.0, 10)
        snapshots = synthetic_snapshots(matrix, weights)
        correlation, weighted = weighted_correlation(snapshots, "y")
        basis = extract_basis(snapshots, "y", weighted_eig(weighted, correlation, weights), 3)
        angles = linalg.subspace_angles(basis, leading_left_vectors(matrix * np.sqrt(weights), 3))
        assert np.max(angles) <= 1e-8

    def test_basis_orthonormal_in_product(self):
        rng = np.random.default_rng(6)
        matrix = rng.standard_normal((25, 9))
        product = spd_product(25, seed=6)
        snapshots = synthetic_snapshots(matrix, rng.uniform(0.5, 1.5, 9), product)
        correlation, weighted = weighted_correlation(snapshots, "y")
        pairs = weighted_eig(weighted, correlation, snapshots.sample.weights)
        basis = extract_basis(snapshots, "y", pairs, 5)
        np.testing.assert_allclose(basis.T @ (product @ basis), np.eye(5), atol=1e-10)

    def test_request_beyond_rank_is_capped(self):
        rng = np.random.default_rng(7)
        matrix = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 6))
        snapshots = synthetic_snapshots(matrix)
        correlation, weighted = weighted_correlation(snapshots, "y")
        pairs = weighted_eig(weighted, correlation, np.ones(6))
        basis = extract_basis(snapshots, "y", pairs, 5)
        assert basis.shape == (30, 3)
        assert any("capped" in message for message in pairs.diagnostics)

    def test_strict_request_beyond_rank_raises(self):
        rng = np.random.default_rng(7)
        matrix = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 6))
        snapshots = synthetic_snapshots(matrix)
        correlation, weighted = weighted_correlation(snapshots, "y")
        pairs = weighted_eig(weighted, correlation, np.ones(6))
        with pytest.raises(BasisTruncationError) as info:
            extract_basis(snapshots, "y", pairs, 5, strict=True)
        assert (info.value.requested, info.value.achievable) == (5, 3)

    def test_zero_size_rejected(self):
        snapshots = synthetic_snapshots(np.eye(4))
        correlation, weighted = weighted_correlation(snapshots, "y")
        with pytest.raises(InvalidParameterError):
            extract_basis(snapshots, "y", weighted_eig(weighted, correlation, np.ones(4)), 0)


class TestGramSchmidt:
    def test_orthonormal_and_drops_dependent_columns(self):
        rng = np.random.default_rng(8)
        product = spd_product(12, seed=8)
        a, b = rng.standard_normal((2, 12))
        columns = np.column_stack([a, b, 2.0 * a - b, np.zeros(12), rng.standard_normal(12)])
        basis, dropped = gram_schmidt(columns, product)
        assert dropped == [2, 3]
        np.testing.assert_allclose(basis.T @ (product @ basis), np.eye(3), atol=1e-12)

    def test_column_order_kept(self):
        rng = np.random.default_rng(10)
        product = spd_product(15, seed=10)
        columns = rng.standard_normal((15, 6))
        basis, dropped = gram_schmidt(columns, product)
        assert dropped == []
        for k in range(1, 7):
            coefficients = basis[:, :k].T @ (product @ columns[:, :k])
            np.testing.assert_allclose(basis[:, :k] @ coefficients, columns[:, :k], atol=1e-10)
        assert np.allclose(np.triu(basis.T @ (product @ columns)), basis.T @ (product @ columns), atol=1e-10)

    def test_nearly_parallel_columns_stay_orthonormal(self):
        rng = np.random.default_rng(11)
        product = spd_product(30, seed=11)
        base = rng.standard_normal(30)
        columns = np.column_stack([base + 1e-6 * rng.standard_normal(30) for _ in range(4)])
        basis, dropped = gram_schmidt(columns, product)
        assert dropped == []
        np.testing.assert_allclose(basis.T @ (product @ basis), np.eye(4), atol=1e-10)

    def test_all_dropped_gives_empty_basis(self):
        basis, dropped = gram_schmidt(np.zeros((4, 2)), sp.identity(4))
        assert basis.shape == (4, 0)
        assert dropped == [0, 1]


class TestAggregation:
    def test_independent_pairs_double_the_dimension(self):
        q = np.linalg.qr(np.random.default_rng(9).standard_normal((20, 6)))[0]
        aggregated = aggregate_spaces(q[:, :3], q[:, 3:], sp.identity(20))
        assert aggregated.dimensions == (0, 2, 4, 6)
        assert aggregated.dropped == ()
        assert aggregated.leading(2).shape == (20, 4)

    def test_shared_directions_dropped(self):
        q = np.linalg.qr(np.random.default_rng(10).standard_normal((20, 3)))[0]
        aggregated = aggregate_spaces(q, q, sp.identity(20))
        assert aggregated.dropped == (1, 3, 5)
        assert aggregated.dimensions == (0, 1, 2, 3)

    def test_mismatched_sizes_rejected(self):
        with pytest.raises(InvalidParameterError):
            aggregate_spaces(np.eye(5)[:, :2], np.eye(5)[:, :3], sp.identity(5))


class TestSnapshots:
    @pytest.fixture
    def sample(self):
        nodes = np.array([[1e2, 0.8], [5e3, 1.0], [3e4, 1.3]])
        return WeightedSample(nodes, np.ones(3), "pod")

    def test_products_stack_time_levels(self, square_parabolic):
        products = snapshot_products(square_parabolic)
        size = square_parabolic.n * square_parabolic.n_steps
        assert products["y"].shape == (size, size)
        block = products["u"][:square_parabolic.n, :square_parabolic.n]
        np.testing.assert_allclose(block.toarray(), square_parabolic.dt * square_parabolic.control_product.toarray())

    def test_concurrent_collection_matches_sequential(self, graetz_steady, sample):
        sequential = collect_snapshots(graetz_steady, sample, jobs=1)
        concurrent = collect_snapshots(graetz_steady, sample, jobs=3)
        for name in ("y", "u", "p"):
            assert sequential.matrices[name].shape == (graetz_steady.n, 3)
            np.testing.assert_allclose(concurrent.matrices[name], sequential.matrices[name], rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("jobs", [1, 2])
    def test_failed_solve_names_the_parameter(self, graetz_steady, sample, monkeypatch, jobs):
        def failing(ocp, mu, mode):
            raise FactorizationError("singular")

        monkeypatch.setattr(wpod, "solve_truth", failing)
        with pytest.raises(SnapshotError) as info:
            collect_snapshots(graetz_steady, sample, jobs=jobs)
        assert info.value.mu in {tuple(mu) for mu in sample.nodes}

    def test_empty_sample_rejected(self, graetz_steady):
        empty = WeightedSample(np.zeros((0, 2)), np.zeros(0), "pod")
        with pytest.raises(InvalidParameterError):
            collect_snapshots(graetz_steady, empty)

    def test_bases_share_common_size(self, graetz_steady, sample):
        offline = build_bases(collect_snapshots(graetz_steady, sample), n_max=2)
        assert {basis.shape[1] for basis in offline.bases.values()} == {2}
        control = offline.bases["u"]
        gram = control.T @ (graetz_steady.control_product @ control)
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-10)
        sigma = offline.aggregated.matrix
        np.testing.assert_allclose(sigma.T @ (graetz_steady.state_product @ sigma), np.eye(sigma.shape[1]), atol=1e-10)
