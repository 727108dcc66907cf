import json
from dataclasses import replace

import numpy as np
import pytest

from src.errors import InvalidParameterError, ModelStorageError
from src.ocp.solver import solve_truth
from src.quadrature.rules import build_sample
from src.quadrature.sampling import WeightedSample
from src.rom.online import (
    OnlineQuery,
    TruthCache,
    evaluate_test_set,
    relative_error,
    reports_frame,
    solve_reduced,
    solve_reduced_coefficients,
    speedup_study,
    timed,
)
from src.rom.storage import MANIFEST, load_model, model_directory, read_manifest, save_model
from src.rom.wpod import run_offline

TRAINING_NODES = np.array([[1e2, 0.7], [1e3, 1.0], [5e3, 1.3], [2e4, 0.9], [6e4, 1.1]])


@pytest.fixture(scope="module")
def training():
    return WeightedSample(TRAINING_NODES, np.ones(len(TRAINING_NODES)), "pod")


@pytest.fixture(scope="module")
def full_model(graetz_steady, training):
    return run_offline(graetz_steady, training, n_max=len(training))


@pytest.fixture(scope="module")
def parabolic_model(square_parabolic, square_box):
    return run_offline(square_parabolic, build_sample("mc", square_box, 4, seed=2), n_max=3)


def truth_errors(ocp, truth, reduced):
    return (
        relative_error(truth.y_bar, reduced.y_bar, ocp.state_product),
        relative_error(truth.u, reduced.u, ocp.control_product),
        relative_error(truth.p, reduced.p, ocp.state_product),
    )


class TestReducedModel:
    def test_sizes(self, full_model):
        assert full_model.n_max == 5
        assert full_model.n_train == 5
        ds, du = full_model.sizes(1)
        assert du == 1 and 1 <= ds <= 2
        with pytest.raises(InvalidParameterError):
            full_model.sizes(6)

    def test_smallest_system(self, full_model):
        matrix, rhs = full_model.assemble((1e3, 1.0), 1)
        ds = full_model.sigma_dimensions[1]
        assert matrix.shape == (2 * ds + 1, 2 * ds + 1)
        assert rhs.shape == (2 * ds + 1,)

    @pytest.mark.parametrize("name", ["state_operator", "adjoint_operator", "observation", "control"])
    def test_projected_block_matches_truth_projection(self, full_model, graetz_steady, name):
        mu = (3e3, 1.2)
        n = 3
        ds, du = full_model.sizes(n)
        sigma = full_model.sigma[:, :ds]
        right = full_model.bases["u"][:, :du] if name == "control" else sigma
        truth_block = graetz_steady.assemble(mu).blocks[name]
        expected = sigma.T @ (truth_block @ right)
        np.testing.assert_allclose(full_model.block(name, mu, n), expected,
                                   atol=1e-10 * max(1.0, np.abs(expected).max()))

    def test_projected_rhs_matches_truth_projection(self, full_model, graetz_steady):
        mu = (3e3, 1.2)
        ds, _ = full_model.sizes(4)
        sigma = full_model.sigma[:, :ds]
        rhs = graetz_steady.assemble(mu).blocks["state_rhs"]
        np.testing.assert_allclose(full_model.block("state_rhs", mu, 4), sigma.T @ rhs,
                                   atol=1e-10 * max(1.0, np.abs(rhs).max()))

    def test_plain_mode_drops_stabilization_terms(self, full_model):
        mu = (3e3, 1.2)
        stabilized = full_model.block("state_operator", mu, 2, "stabilized")
        plain = full_model.block("state_operator", mu, 2, "plain")
        assert not np.allclose(stabilized, plain)

    def test_reconstruct_is_linear(self, full_model):
        rng = np.random.default_rng(0)
        ds, du = full_model.sizes(3)
        first, second = rng.standard_normal((2, 2 * ds + du))
        combined = full_model.reconstruct(2.0 * first - second, 3)
        separate = [2.0 * a - b for a, b in zip(full_model.reconstruct(first, 3), full_model.reconstruct(second, 3))]
        for got, want in zip(combined, separate):
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_space_time_reconstruction_shape(self, parabolic_model, square_parabolic):
        solution = solve_reduced(parabolic_model, OnlineQuery((2e3, 1.2), 2))
        assert solution.y.shape == (square_parabolic.n_steps, square_parabolic.n)
        assert solution.u.shape == (square_parabolic.n_steps, square_parabolic.n)


class TestOnline:
    def test_galerkin_reproduction_at_training_parameters(self, full_model, graetz_steady):
        for mu in TRAINING_NODES:
            truth = solve_truth(graetz_steady, mu)
            reduced = solve_reduced(full_model, OnlineQuery(tuple(mu), full_model.n_max))
            for error in truth_errors(graetz_steady, truth, reduced):
                assert error <= 1e-8

    def test_reduced_state_carries_lifting(self, full_model, graetz_steady):
        reduced = solve_reduced(full_model, OnlineQuery((1e3, 1.0), 2))
        dofs = graetz_steady.handler.dofs
        np.testing.assert_allclose(reduced.y[dofs], graetz_steady.handler.lifting[dofs], atol=1e-10)

    def test_query_validation(self, full_model):
        with pytest.raises(InvalidParameterError):
            OnlineQuery((1e3, 1.0), 2, mode="online-only")
        with pytest.raises(InvalidParameterError):
            OnlineQuery((1e3, 1.0), 0)
        with pytest.raises(InvalidParameterError):
            solve_reduced(full_model, OnlineQuery((1e3, 1.0), full_model.n_max + 1))
        with pytest.raises(InvalidParameterError):
            solve_reduced_coefficients(full_model, OnlineQuery((1e3, -1.0), 2))

    def test_offline_only_mode_uses_plain_system(self, full_model):
        query = OnlineQuery((1e3, 1.0), 3, "offline-only")
        assert query.system_mode == "plain"
        coefficients = solve_reduced_coefficients(full_model, query)
        matrix, rhs = full_model.assemble(query.mu, 3, "plain")
        np.testing.assert_allclose(matrix @ coefficients, rhs, atol=1e-8 * max(1.0, np.abs(rhs).max()))


class TestRelativeError:
    def test_identical_fields(self):
        values = np.arange(1.0, 5.0)
        assert relative_error(values, values, np.eye(4)) == 0.0

    def test_euclidean_value(self):
        assert relative_error(np.array([3.0, 4.0]), np.array([3.0, 3.0]), np.eye(2)) == pytest.approx(0.2)

    def test_time_levels_summed_before_dividing(self):
        reference = np.array([[3.0, 4.0], [0.0, 5.0]])
        approximation = np.array([[3.0, 3.0], [0.0, 5.0]])
        assert relative_error(reference, approximation, np.eye(2)) == pytest.approx(1.0 / 10.0)

    def test_zero_reference_returns_absolute_norm(self):
        assert relative_error(np.zeros(2), np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(5.0)


class TestStorage:
    def test_round_trip(self, tmp_path, full_model):
        save_model(full_model, tmp_path)
        loaded = load_model(tmp_path)
        assert (loaded.problem_id, loaded.rule, loaded.n_max) == (full_model.problem_id, "pod", 5)
        assert loaded.sigma_dimensions == full_model.sigma_dimensions
        for got, want in zip(loaded.assemble((7e3, 0.8), 4), full_model.assemble((7e3, 0.8), 4)):
            np.testing.assert_array_equal(got, want)
        np.testing.assert_array_equal(loaded.training_nodes, TRAINING_NODES)

    def test_manifest_contents(self, tmp_path, full_model):
        path = save_model(full_model, tmp_path)
        manifest = json.loads(path.read_text())
        assert manifest["problem"] == "graetz-steady"
        assert manifest["cardinality"] == 5
        assert set(manifest["eigenvalues"]) == {"y", "u", "p"}
        assert "state_operator" in manifest["theta_terms"]
        assert not list(tmp_path.glob("*.tmp"))

    def test_model_directory_layout(self, tmp_path):
        assert model_directory(tmp_path, "square-steady", "halton") == tmp_path / "models" / "square-steady" / "halton"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ModelStorageError, match="run 'offline' first"):
            load_model(tmp_path)

    def test_truncated_array(self, tmp_path, full_model):
        save_model(full_model, tmp_path)
        (tmp_path / "sigma.f64").write_bytes(b"\x00" * 16)
        with pytest.raises(ModelStorageError):
            load_model(tmp_path)

    def test_format_version_checked(self, tmp_path, full_model):
        path = save_model(full_model, tmp_path)
        manifest = json.loads(path.read_text())
        manifest["format_version"] = 99
        (tmp_path / MANIFEST).write_text(json.dumps(manifest))
        with pytest.raises(ModelStorageError):
            read_manifest(tmp_path)


class TestTestSetEvaluation:
    def test_one_report_per_size(self, full_model, graetz_steady, training):
        cache = TruthCache(graetz_steady, repeats=1)
        reports = evaluate_test_set(full_model, graetz_steady, training, [1, 3, 5], cache=cache, repeats=1)
        assert [report.n for report in reports] == [1, 3, 5]
        assert len(cache.entries) == len(training)
        assert reports[-1].e_y <= reports[0].e_y
        assert reports[-1].e_y < 1e-8
        frame = reports_frame(reports)
        assert list(frame.columns[:3]) == ["rule", "mode", "N"]

    def test_speedup_study_columns(self, full_model, graetz_steady, training):
        frame = speedup_study(full_model, graetz_steady, training, [2], repeats=1)
        assert list(frame.columns) == ["rule", "N", "speedup", "truth_time", "online_time"]
        assert (frame["speedup"] > 0.0).all()


def desk_model(config, rule):
    from src.bench.commands import build_ocp

    ocp = build_ocp(config)
    sample = build_sample(rule, config.box, config.n_train, config.seed)
    return ocp, run_offline(ocp, sample, config.n_max, config.jobs)


@pytest.mark.slow
class TestDeskAcceptance:
    """Desk-scale error decay; minutes per case."""

    def test_graetz_offline_online_decay(self):
        from src.bench.commands import testing_sets
        from src.bench.config import preset

        config = preset("graetz-steady", "desk")
        ocp, model = desk_model(config, "mc")
        test = testing_sets(config)["beta"]
        first, last = evaluate_test_set(model, ocp, test, [1, model.n_max], "offline-online", repeats=1)
        for name in ("e_y", "e_u", "e_p"):
            assert getattr(last, name) < 1e-4
            assert getattr(last, name) <= 1e-4 * getattr(first, name)

    @pytest.mark.parametrize("problem", ["graetz-steady", "square-steady"])
    def test_offline_only_never_converges(self, problem):
        from src.bench.commands import build_ocp, testing_sets
        from src.bench.config import preset

        config = preset(problem, "desk")
        ocp = build_ocp(config)
        tests = testing_sets(config)
        caches = {name: TruthCache(ocp, repeats=1) for name in tests}
        for rule in config.rules:
            sample = build_sample(rule, config.box, config.n_train, config.seed)
            model = run_offline(ocp, sample, config.n_max, config.jobs)
            key = "uniform" if rule == "pod" else "beta"
            plain = evaluate_test_set(model, ocp, tests[key], range(1, model.n_max + 1), "offline-only",
                                      caches[key], repeats=1)
            for report in plain:
                assert min(report.e_y, report.e_u, report.e_p) > 1e-2, (rule, report.n)

    def test_square_parabolic_decay(self):
        from src.bench.commands import testing_sets
        from src.bench.config import preset

        config = preset("square-parabolic", "desk")
        ocp, model = desk_model(config, "mc")
        reports = evaluate_test_set(model, ocp, testing_sets(config)["beta"], [model.n_max], repeats=1)
        assert max(reports[0].e_y, reports[0].e_u, reports[0].e_p) < 1e-3

    def test_online_cost_does_not_follow_mesh_size(self):
        from src.bench.commands import testing_sets
        from src.bench.config import preset

        timings = {}
        for mesh_h in (0.032, 0.016):
            config = replace(preset("square-steady", "desk"), mesh_h=mesh_h, n_train=14, n_max=10, n_test=5)
            ocp, model = desk_model(config, "mc")
            n = min(10, model.n_max)
            online, truth = [], []
            for mu in testing_sets(config)["beta"].nodes:
                truth.append(TruthCache(ocp, repeats=3).get(mu)[1])
                query = OnlineQuery(tuple(mu), n)
                online.append(timed(solve_reduced_coefficients, model, query, repeats=21)[1])
            timings[ocp.n] = (float(np.mean(online)), float(np.mean(truth)))
        (coarse, (online_coarse, truth_coarse)), (fine, (online_fine, truth_fine)) = sorted(timings.items())
        assert 3.0 <= fine / coarse <= 5.0
        assert online_fine < 2.0 * online_coarse
        assert truth_fine >= 3.0 * truth_coarse
        assert truth_fine / online_fine > truth_coarse / online_coarse

    def test_weighted_mc_beats_standard_pod_on_graetz(self):
        from src.bench.commands import build_ocp, testing_sets
        from src.bench.config import preset

        config = preset("graetz-steady", "desk")
        ocp = build_ocp(config)
        tests = testing_sets(config)
        caches = {name: TruthCache(ocp, repeats=1) for name in tests}
        weighted, standard = [], []
        for seed in (0, 1, 2):
            for rule, errors, key in (("mc", weighted, "beta"), ("pod", standard, "uniform")):
                model = run_offline(ocp, build_sample(rule, config.box, config.n_train, seed), config.n_max,
                                    config.jobs)
                report, = evaluate_test_set(model, ocp, tests[key], [model.n_max], cache=caches[key], repeats=1)
                errors.append(report.e_y)
        assert np.mean(weighted) <= np.mean(standard), np.divide(standard, weighted)
