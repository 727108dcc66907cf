"""
The four subcommands as library calls: ``offline``, ``online``, ``report`` and ``peclet``.

Each takes a validated ``BenchmarkConfig`` and returns what it produced; printing and exit
codes belong to ``src.main``.
"""

import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.bench.config import BenchmarkConfig, save_config
from src.bench.report import plot_error_decay, write_report_tables
from src.errors import DomainError, ModelStorageError
from src.notifications.webhook_notifier import RunNotifier
from src.ocp.export import export_fields
from src.ocp.problem import OcpDefinition, build_problem
from src.ocp.solver import triple_cost
from src.quadrature.rules import build_sample
from src.quadrature.sampling import WeightedSample, sample_testing_set
from src.rom.online import (
    TIMING_REPEATS,
    OnlineQuery,
    ReducedSolution,
    TruthCache,
    evaluate_test_set,
    relative_error,
    reports_frame,
    solve_reduced,
    speedup_study,
    timed,
)
from src.rom.reduced_model import ReducedModel
from src.rom.storage import load_model, model_directory, save_model
from src.rom.wpod import run_offline

logger = logging.getLogger(__name__)


def build_ocp(config: BenchmarkConfig) -> OcpDefinition:
    return build_problem(config.problem, config.mesh_h, config.box, config.delta, config.alpha,
                         config.n_steps, config.final_time)


def testing_sets(config: BenchmarkConfig) -> dict[str, WeightedSample]:
    """The shared Beta-distributed testing set and the uniform one for the standard POD rule."""
    seed = config.seed + 1
    return {
        "beta": sample_testing_set(config.box, config.n_test, seed),
        "uniform": sample_testing_set(config.box, config.n_test, seed, uniform=True),
    }


def report_directory(config: BenchmarkConfig) -> Path:
    return Path(config.output_dir) / "reports" / config.problem


@contextmanager
def _notifying(notifier: RunNotifier | None, command: str, problem: str):
    try:
        yield
    except Exception as e:
        if notifier is not None:
            notifier.run_failed(command, problem, e)
        raise


def _check_model(model: ReducedModel, config: BenchmarkConfig, ocp: OcpDefinition | None = None) -> None:
    if model.problem_id != config.problem:
        raise ModelStorageError(f"Model for '{model.problem_id}' found where '{config.problem}' was expected")
    if ocp is not None and (model.n != ocp.n or model.n_steps != ocp.n_steps):
        raise ModelStorageError(
            f"Model {model.problem_id}/{model.rule} was built on {model.n} vertices x {model.n_steps} levels, "
            f"the configured mesh has {ocp.n} x {ocp.n_steps}; run 'offline' again"
        )


def load_models(config: BenchmarkConfig, ocp: OcpDefinition | None = None) -> dict[str, ReducedModel]:
    models = {}
    for rule in config.rules:
        model = load_model(model_directory(config.output_dir, config.problem, rule))
        _check_model(model, config, ocp)
        models[rule] = model
    return models


def _save_sample(sample: WeightedSample, path: Path) -> None:
    temporary = path.with_name(path.name + ".tmp")
    sample.to_csv(temporary)
    os.replace(temporary, path)


def cmd_offline(config: BenchmarkConfig, strict: bool = False,
                notifier: RunNotifier | None = None) -> dict[str, Path]:
    """
    Build and store one reduced model per configured rule.

    Args:
        config: Validated benchmark settings.
        strict: Raise instead of capping N_max when too few eigenvalues clear the threshold.
        notifier: Receives a one-line summary on success or failure.

    Returns:
        dict[str, Path]: rule -> written manifest.
    """
    with _notifying(notifier, "offline", config.problem):
        ocp = build_ocp(config)
        save_config(config, Path(config.output_dir) / "models" / config.problem / "config.env")
        manifests = {}
        for rule in config.rules:
            sample = build_sample(rule, config.box, config.n_train, config.seed)
            model = run_offline(ocp, sample, config.n_max, config.jobs, strict)
            directory = model_directory(config.output_dir, config.problem, rule)
            manifests[rule] = save_model(model, directory)
            _save_sample(sample, directory / "training_set.csv")
            logger.info(f"{rule}: {len(sample)} training parameters, N_max={model.n_max}")
    if notifier is not None:
        notifier.run_finished("offline", config.problem, f"{len(manifests)} models ({', '.join(manifests)})")
    return manifests


@dataclass
class OnlineOutcome:
    solution: ReducedSolution
    online_time: float
    errors: dict[str, float] | None = None
    truth_time: float | None = None
    cost: float | None = None
    exported: list[Path] | None = None

    def summary(self) -> dict:
        values = {"mu": list(self.solution.query.mu), "N": self.solution.query.n, "mode": self.solution.query.mode,
                  "online_time": self.online_time}
        if self.errors is not None:
            values.update(self.errors)
            values["truth_time"] = self.truth_time
            values["speedup"] = self.truth_time / max(self.online_time, 1e-12)
        if self.cost is not None:
            values["J"] = self.cost
        return values


def cmd_online(config: BenchmarkConfig, mu, n: int | None = None, mode: str = "offline-online",
               rule: str = "mc", compare: bool = False, export_dir=None) -> OnlineOutcome:
    """
    Solve a stored reduced model at one parameter value.

    With ``compare`` the truth is solved too and the relative errors are reported; with
    ``export_dir`` the reconstructed fields are written as nodal CSV files.
    """
    mu = tuple(float(value) for value in mu)
    if not config.box.contains(mu):
        raise DomainError(f"mu={mu} lies outside the parameter box {list(zip(config.box.lower, config.box.upper))}")
    ocp = build_ocp(config) if compare or export_dir is not None else None
    model = load_model(model_directory(config.output_dir, config.problem, rule))
    _check_model(model, config, ocp)
    query = OnlineQuery(mu, n or model.n_max, mode)
    solution, online_time = timed(solve_reduced, model, query)
    outcome = OnlineOutcome(solution, online_time)
    if compare:
        cache = TruthCache(ocp, TIMING_REPEATS)
        truth, outcome.truth_time = cache.get(mu)
        outcome.errors = {
            "e_y": relative_error(truth.y_bar, solution.y_bar, ocp.state_product),
            "e_u": relative_error(truth.u, solution.u, ocp.control_product),
            "e_p": relative_error(truth.p, solution.p, ocp.state_product),
        }
        outcome.cost = triple_cost(ocp, mu, solution.y, solution.u)
    if export_dir is not None:
        outcome.exported = export_fields(ocp.mesh, {"y": solution.y, "u": solution.u, "p": solution.p}, export_dir)
    logger.info(f"Online {rule}/{mode} at mu={mu}, N={query.n}: {online_time * 1e3:.3f} ms")
    return outcome


def cmd_report(config: BenchmarkConfig, plots: bool = True, notifier: RunNotifier | None = None) -> list[Path]:
    """
    Error decay per mode and Offline-Online speedups for every stored rule.

    Truth solutions of each testing set are computed once and shared by all rules and modes.
    """
    with _notifying(notifier, "report", config.problem):
        ocp = build_ocp(config)
        models = load_models(config, ocp)
        tests = testing_sets(config)
        caches = {name: TruthCache(ocp) for name in tests}
        reports, studies = [], []
        for rule, model in models.items():
            key = "uniform" if rule == "pod" else "beta"
            n_values = range(1, model.n_max + 1)
            for mode in config.modes:
                reports.extend(evaluate_test_set(model, ocp, tests[key], n_values, mode, caches[key]))
            if "offline-online" in config.modes:
                studies.append(speedup_study(model, ocp, tests[key], n_values, caches[key]))
        errors = reports_frame(reports)
        directory = report_directory(config)
        written = write_report_tables(errors, pd.concat(studies, ignore_index=True) if studies else None, directory)
        if plots:
            written += plot_error_decay(errors, directory, config.problem)
        best = errors.loc[errors["mode"] == config.modes[0]].groupby("rule")["e_y"].min()
    if notifier is not None:
        notifier.run_finished("report", config.problem,
                              ", ".join(f"{rule} min e_y={value:.2e}" for rule, value in best.items()))
    return written


def cmd_peclet(config: BenchmarkConfig, mu) -> dict:
    """Local Péclet statistics of the configured mesh at ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if not config.box.contains(mu):
        raise DomainError(f"mu={tuple(mu)} lies outside the parameter box")
    ocp = build_ocp(config)
    summary = ocp.peclet(mu).summary()
    summary.update({"problem": config.problem, "mu": [float(v) for v in mu], "h": float(ocp.mesh.h)})
    logger.info(f"Péclet numbers at mu={tuple(mu)}: min={summary['min']:.3g}, max={summary['max']:.3g}")
    return summary
