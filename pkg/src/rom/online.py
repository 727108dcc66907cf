import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
import pandas as pd
from scipy import linalg

from src.errors import FactorizationError, InvalidParameterError
from src.ocp.kkt import MATRIX_BLOCKS
from src.ocp.problem import OcpDefinition
from src.ocp.solver import OptimalTriple, solve_truth
from src.quadrature.sampling import WeightedSample
from src.rom.reduced_model import ReducedModel

logger = logging.getLogger(__name__)

# Online stabilization mode -> which affine terms the reduced system keeps.
ONLINE_MODES = {"offline-online": "stabilized", "offline-only": "plain"}
TIMING_REPEATS = 3


@dataclass(frozen=True)
class OnlineQuery:
    mu: tuple[float, ...]
    n: int
    mode: str = "offline-online"

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(value) for value in self.mu))
        if self.mode not in ONLINE_MODES:
            raise InvalidParameterError(f"Unknown online mode '{self.mode}', expected one of {list(ONLINE_MODES)}")
        if self.n < 1:
            raise InvalidParameterError(f"Reduced size must be at least 1, got {self.n}")

    @property
    def system_mode(self) -> str:
        return ONLINE_MODES[self.mode]


@dataclass(frozen=True)
class ReducedSolution:
    coefficients: np.ndarray
    y_bar: np.ndarray
    u: np.ndarray
    p: np.ndarray
    lifting: np.ndarray
    query: OnlineQuery

    @property
    def y(self) -> np.ndarray:
        return self.y_bar + self.lifting


def _condition_diagnostics(model: ReducedModel, query: OnlineQuery) -> dict:
    diagnostics = {}
    for name in MATRIX_BLOCKS:
        block = model.block(name, query.mu, query.n, query.system_mode)
        diagnostics[f"cond({name})"] = f"{np.linalg.cond(block):.3e}" if block.size else "empty"
    return diagnostics


def solve_reduced_coefficients(model: ReducedModel, query: OnlineQuery) -> np.ndarray:
    """Theta-recombination and dense LU solve; cost independent of the truth dimension."""
    matrix, rhs = model.assemble(query.mu, query.n, query.system_mode)
    try:
        return linalg.solve(matrix, rhs)
    except (linalg.LinAlgError, ValueError) as e:
        raise FactorizationError(f"Reduced system singular at mu={query.mu}, N={query.n}",
                                 _condition_diagnostics(model, query)) from e


def solve_reduced(model: ReducedModel, query: OnlineQuery) -> ReducedSolution:
    """
    Solve the reduced one-shot system and reconstruct on the truth mesh.

    Args:
        model: Offline result.
        query: Parameter value, reduced size and online stabilization mode.

    Returns:
        ReducedSolution: coefficients plus reconstructed fields; ``y`` includes the lifting.
    """
    if query.n > model.n_max:
        raise InvalidParameterError(f"Query N={query.n} exceeds the model's N_max={model.n_max}")
    coefficients = solve_reduced_coefficients(model, query)
    y_bar, u, p = model.reconstruct(coefficients, query.n)
    return ReducedSolution(coefficients, y_bar, u, p, model.lifting, query)


def relative_error(reference: np.ndarray, approximation: np.ndarray, product) -> float:
    """
    ||x - x_N|| / ||x|| in the norm of ``product``; for (n_steps, n) arrays the per-level norms
    are summed before dividing.
    """
    reference = np.atleast_2d(reference)
    difference = reference - np.atleast_2d(approximation)

    def norms(values):
        return np.sqrt(np.maximum(np.einsum("ti,ti->t", values, (product @ values.T).T), 0.0))

    numerator = float(norms(difference).sum())
    denominator = float(norms(reference).sum())
    return numerator / denominator if denominator > 0.0 else numerator


def timed(function, *args, repeats: int = TIMING_REPEATS):
    """Result of the last call and the median wall-clock time over ``repeats`` calls."""
    durations = []
    result = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        result = function(*args)
        durations.append(time.perf_counter() - start)
    return result, statistics.median(durations)


@dataclass
class TruthCache:
    """Truth solutions and timings of a testing set, shared across rules and modes."""

    ocp: OcpDefinition
    repeats: int = TIMING_REPEATS
    entries: dict[tuple, tuple[OptimalTriple, float]] = field(default_factory=dict)

    def get(self, mu) -> tuple[OptimalTriple, float]:
        key = tuple(float(value) for value in mu)
        if key not in self.entries:
            self.entries[key] = timed(solve_truth, self.ocp, key, "stabilized", repeats=self.repeats)
        return self.entries[key]

    def warm(self, sample: WeightedSample) -> None:
        for mu in sample.nodes:
            self.get(mu)
        logger.info(f"Truth cache holds {len(self.entries)} solutions")


@dataclass(frozen=True)
class ErrorReport:
    rule: str
    mode: str
    n: int
    e_y: float
    e_u: float
    e_p: float
    speedup: float
    truth_time: float
    online_time: float


def evaluate_test_set(model: ReducedModel, ocp: OcpDefinition, test: WeightedSample, n_values: Iterable[int],
                      mode: str = "offline-online", cache: TruthCache | None = None,
                      repeats: int = TIMING_REPEATS) -> list[ErrorReport]:
    """
    Mean relative errors and speedups over a testing set, one report per reduced size.

    Errors compare homogenized states, controls and adjoints with the stabilized truth in the
    H1, L2 and H1 norms.
    """
    cache = cache or TruthCache(ocp, repeats)
    state_product, control_product = ocp.state_product, ocp.control_product
    reports = []
    for n in n_values:
        errors, speedups, truth_times, online_times = [], [], [], []
        for mu in test.nodes:
            truth, truth_time = cache.get(mu)
            query = OnlineQuery(tuple(mu), n, mode)
            _, online_time = timed(solve_reduced_coefficients, model, query, repeats=repeats)
            reduced = solve_reduced(model, query)
            errors.append((
                relative_error(truth.y_bar, reduced.y_bar, state_product),
                relative_error(truth.u, reduced.u, control_product),
                relative_error(truth.p, reduced.p, state_product),
            ))
            truth_times.append(truth_time)
            online_times.append(online_time)
            speedups.append(truth_time / max(online_time, 1e-12))
        e_y, e_u, e_p = np.mean(errors, axis=0)
        reports.append(ErrorReport(model.rule, mode, n, float(e_y), float(e_u), float(e_p),
                                   float(np.mean(speedups)), float(np.mean(truth_times)),
                                   float(np.mean(online_times))))
        logger.debug(f"{model.rule}/{mode} N={n}: e_y={e_y:.3e} e_u={e_u:.3e} e_p={e_p:.3e}")
    return reports


def reports_frame(reports: Iterable[ErrorReport]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(report) for report in reports])
    return frame.rename(columns={"n": "N"})


def speedup_study(model: ReducedModel, ocp: OcpDefinition, test: WeightedSample, n_values: Iterable[int],
                  cache: TruthCache | None = None, repeats: int = TIMING_REPEATS) -> pd.DataFrame:
    """Mean Offline-Online speedup per reduced size (online timing excludes the truth solve)."""
    reports = evaluate_test_set(model, ocp, test, n_values, "offline-online", cache, repeats)
    frame = reports_frame(reports)
    return frame[["rule", "N", "speedup", "truth_time", "online_time"]]
