import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from src.errors import FactorizationError, InvalidParameterError
from src.fem.dirichlet import constrain, zero_entries
from src.ocp.kkt import KktSystem
from src.ocp.problem import OcpDefinition

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class OptimalTriple:
    """
    Truth solution at one parameter value.

    ``y_bar``, ``u`` and ``p`` have shape (n,) for steady problems and (n_steps, n) for
    space-time ones; ``y`` adds the lifting back.
    """

    y_bar: np.ndarray
    u: np.ndarray
    p: np.ndarray
    lifting: np.ndarray
    mu: tuple[float, ...]
    mode: str
    residual: float = 0.0

    @property
    def y(self) -> np.ndarray:
        return self.y_bar + self.lifting

    @property
    def n_steps(self) -> int:
        return 1 if self.u.ndim == 1 else self.u.shape[0]

    def column(self, name: str) -> np.ndarray:
        """Snapshot column of one variable (the whole trajectory for space-time problems)."""
        return np.ravel({"y": self.y_bar, "u": self.u, "p": self.p}[name])


def block_diagnostics(system: KktSystem) -> dict:
    diagnostics = {"size": system.size, "nnz": system.matrix.nnz}
    for name, block in system.blocks.items():
        if sp.issparse(block):
            diagnostics[f"|{name}|"] = f"{spla.norm(block, np.inf):.3e}"
    return diagnostics


def solve_kkt(system: KktSystem) -> tuple[np.ndarray, float]:
    """Sparse LU solve of the one-shot system; returns the solution and its relative residual."""
    try:
        lu = spla.splu(system.matrix)
        solution = lu.solve(system.rhs)
    except RuntimeError as e:
        raise FactorizationError(f"KKT factorization failed: {e}", block_diagnostics(system)) from e
    if not np.all(np.isfinite(solution)):
        raise FactorizationError("KKT solve produced non-finite values", block_diagnostics(system))
    scale = np.linalg.norm(system.rhs)
    residual = np.linalg.norm(system.matrix @ solution - system.rhs)
    residual = residual / scale if scale > 0.0 else residual
    if residual > RESIDUAL_TOLERANCE:
        logger.warning(f"KKT residual {residual:.2e} above {RESIDUAL_TOLERANCE:.0e}")
    return solution, float(residual)


def _split(ocp: OcpDefinition, solution: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    y_bar, u, p = np.split(solution, 3)
    if ocp.is_space_time:
        shape = (ocp.n_steps, ocp.n)
        return y_bar.reshape(shape), u.reshape(shape), p.reshape(shape)
    return y_bar, u, p


def _solve(ocp: OcpDefinition, mu, mode: str) -> OptimalTriple:
    mu = tuple(float(value) for value in mu)
    system = ocp.assemble(mu, mode)
    solution, residual = solve_kkt(system)
    y_bar, u, p = _split(ocp, solution)
    logger.debug(f"Truth solve at mu={mu} ({mode}): size {system.size}, residual {residual:.2e}")
    return OptimalTriple(y_bar, u, p, ocp.handler.lifting, mu, mode, residual)


def solve_steady(ocp: OcpDefinition, mu, mode: str = "stabilized") -> OptimalTriple:
    """
    Solve the steady one-shot system at ``mu``.

    Args:
        ocp: A steady benchmark (its forms, alpha and desired state define the system).
        mu: Parameter value.
        mode: 'stabilized' for the SUPG system, 'plain' for the Galerkin one.
    """
    if ocp.is_space_time:
        raise InvalidParameterError(f"{ocp.problem_id} is time dependent; use solve_space_time")
    return _solve(ocp, mu, mode)


def solve_space_time(ocp: OcpDefinition, mu, mode: str = "stabilized") -> OptimalTriple:
    """Solve the all-at-once backward Euler system; p at the last level has no successor coupling."""
    if not ocp.is_space_time:
        raise InvalidParameterError(f"{ocp.problem_id} is steady; use solve_steady")
    return _solve(ocp, mu, mode)


def solve_truth(ocp: OcpDefinition, mu, mode: str = "stabilized") -> OptimalTriple:
    return _solve(ocp, mu, mode)


def solve_state(ocp: OcpDefinition, mu, control: np.ndarray, mode: str = "stabilized") -> np.ndarray:
    """
    Homogenized state for a fixed control from the state rows of the KKT system.

    For space-time problems this is the all-at-once solve of the block-bidiagonal state operator.
    """
    system = ocp.assemble(mu, mode)
    rhs = system.blocks["state_rhs"] - system.blocks["control"] @ np.ravel(control)
    y_bar = spla.spsolve(system.blocks["state_operator"].tocsc(), rhs)
    return y_bar.reshape(ocp.n_steps, ocp.n) if ocp.is_space_time else y_bar


def march_state(ocp: OcpDefinition, mu, control: np.ndarray, mode: str = "stabilized") -> np.ndarray:
    """
    Sequential backward Euler for the homogenized state with a fixed control:
    (M_s + dt K_s) y_k = M_s y_{k-1} + dt (f_s - K_s R_y - C_s u_k).
    """
    if not ocp.is_space_time:
        raise InvalidParameterError(f"{ocp.problem_id} is steady; use solve_state")
    matrices = ocp.forms.evaluate(mu, mode)
    dofs, lifting, dt = ocp.handler.dofs, ocp.handler.lifting, ocp.dt
    control = np.asarray(control, dtype=float).reshape(ocp.n_steps, ocp.n)
    lu = spla.splu(constrain(matrices.state_mass + dt * matrices.stiffness, dofs).tocsc())
    source = matrices.load - matrices.stiffness @ lifting
    y0 = np.zeros(ocp.n) if ocp.initial_state is None else ocp.initial_state
    previous = zero_entries(y0 - lifting, dofs)
    states = np.empty((ocp.n_steps, ocp.n))
    for k in range(ocp.n_steps):
        rhs = matrices.state_mass @ previous + dt * (source - matrices.control @ control[k])
        previous = lu.solve(zero_entries(rhs, dofs))
        states[k] = previous
    return states


def cost_functional(y: np.ndarray, u: np.ndarray, y_d: np.ndarray, alpha: float,
                    observation_mass: sp.spmatrix, control_mass: sp.spmatrix, dt: float | None = None) -> float:
    """
    J = 1/2 m(y - y_d, y - y_d) + alpha/2 n(u, u) with unstabilized masses.

    ``observation_mass`` is the mass matrix restricted to the observation region. Time-indexed
    arrays of shape (n_steps, n) are integrated with weight ``dt``.
    """
    y = np.atleast_2d(y)
    u = np.atleast_2d(u)
    misfit = y - np.broadcast_to(y_d, y.shape)
    tracking = np.einsum("ti,ti->", misfit, (observation_mass @ misfit.T).T)
    penalty = np.einsum("ti,ti->", u, (control_mass @ u.T).T)
    weight = 1.0 if dt is None else dt
    return float(0.5 * weight * (tracking + alpha * penalty))


def triple_cost(ocp: OcpDefinition, mu, y: np.ndarray, u: np.ndarray) -> float:
    """Cost of a lifted state ``y`` and control ``u`` of ``ocp`` at ``mu``."""
    observation = ocp.forms.observation_mass.evaluate(ocp.thetas, mu, (ocp.n, ocp.n))
    mass = ocp.forms.mass.evaluate(ocp.thetas, mu, (ocp.n, ocp.n))
    return cost_functional(y, u, ocp.desired_state(), ocp.alpha, observation, mass, ocp.dt)
