import logging
from dataclasses import dataclass, field

import numpy as np

from src.errors import InvalidParameterError
from src.fem.benchmarks import THETA_TABLES
from src.fem.coefficients import ThetaTable
from src.fem.forms import MODES
from src.ocp.kkt import BLOCK_SPACES, MATRIX_BLOCKS, VECTOR_BLOCKS, BlockTerm, time_profile
from src.ocp.problem import OcpDefinition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducedTerm:
    theta: str
    scale: float
    matrix: np.ndarray
    stabilization: bool = False


def _shift(values: np.ndarray, coupling: str) -> np.ndarray:
    """Apply the time coupling to per-level blocks stacked along axis 0."""
    if coupling == "diag":
        return values
    shifted = np.zeros_like(values)
    if coupling == "lower":
        shifted[1:] = values[:-1]
    elif coupling == "upper":
        shifted[:-1] = values[1:]
    else:
        raise ValueError(f"Unknown time coupling '{coupling}'")
    return shifted


def project_term(term: BlockTerm, left: np.ndarray, right: np.ndarray | None, n: int, n_steps: int) -> np.ndarray:
    """
    left^T kron(C, A) right for a matrix term, left^T kron(profile, v) for a vector term.

    Space-time bases have n * n_steps rows ordered level by level.
    """
    left_levels = left.reshape(n_steps, n, left.shape[1])
    if right is None:
        profile = time_profile(term.coupling, n_steps)
        return np.einsum("tna,t,n->a", left_levels, profile, np.asarray(term.matrix))
    b = right.shape[1]
    right_flat = right.reshape(n_steps, n, b).transpose(1, 0, 2).reshape(n, n_steps * b)
    applied = np.asarray(term.matrix @ right_flat).reshape(n, n_steps, b).transpose(1, 0, 2)
    return np.einsum("tna,tnb->ab", left_levels, _shift(applied, term.coupling))


@dataclass
class ReducedModel:
    """
    Projected affine KKT blocks on the aggregated state/adjoint space Sigma and the control basis.

    Each reduced size k <= n_max uses the leading ``sigma_dimensions[k]`` columns of Sigma and the
    leading k control columns, so every projected block is stored once at full size and sliced.
    """

    problem_id: str
    family: str
    rule: str
    n_max: int
    n: int
    n_steps: int
    dt: float | None
    alpha: float
    n_train: int
    lifting: np.ndarray
    bases: dict[str, np.ndarray]
    sigma: np.ndarray
    sigma_dimensions: tuple[int, ...]
    eigenvalues: dict[str, np.ndarray]
    blocks: dict[str, list[ReducedTerm]]
    diagnostics: list[str] = field(default_factory=list)
    training_nodes: np.ndarray | None = None
    training_weights: np.ndarray | None = None
    sample_level: int | None = None

    @property
    def thetas(self) -> ThetaTable:
        return THETA_TABLES[self.family]

    @property
    def is_space_time(self) -> bool:
        return self.dt is not None

    @classmethod
    def from_offline(cls, ocp: OcpDefinition, offline, rule: str | None = None) -> "ReducedModel":
        """
        Project every Theta-term of every KKT block.

        Args:
            ocp: The benchmark the snapshots came from.
            offline: Result of the basis construction (bases, aggregated space, eigenpairs).
            rule: Sampling rule tag; taken from the snapshot sample when omitted.
        """
        sigma = offline.aggregated.matrix
        control = offline.bases["u"]
        spaces = {"s": sigma, "u": control}
        terms = ocp.kkt_terms("stabilized")
        blocks = {}
        for name in MATRIX_BLOCKS + VECTOR_BLOCKS:
            rows, cols = BLOCK_SPACES[name]
            blocks[name] = [
                ReducedTerm(term.theta, term.scale,
                            project_term(term, spaces[rows], spaces[cols] if cols else None, ocp.n, ocp.n_steps),
                            term.stabilization)
                for term in terms.blocks[name]
            ]
        diagnostics = list(offline.diagnostics)
        if offline.aggregated.dropped:
            diagnostics.append(f"aggregation dropped columns {list(offline.aggregated.dropped)}")
        return cls(
            problem_id=ocp.problem_id,
            family=ocp.family.name,
            rule=rule or offline.snapshots.sample.rule,
            n_max=control.shape[1],
            n=ocp.n,
            n_steps=ocp.n_steps,
            dt=ocp.dt,
            alpha=ocp.alpha,
            n_train=offline.snapshots.n_train,
            lifting=ocp.handler.lifting.copy(),
            bases=dict(offline.bases),
            sigma=sigma,
            sigma_dimensions=tuple(offline.aggregated.dimensions),
            eigenvalues={name: pairs.values for name, pairs in offline.eigenpairs.items()},
            blocks=blocks,
            diagnostics=diagnostics,
            training_nodes=offline.snapshots.sample.nodes,
            training_weights=offline.snapshots.sample.weights,
            sample_level=offline.snapshots.sample.level,
        )

    def sizes(self, n: int) -> tuple[int, int]:
        """(dimension of the state/adjoint space, dimension of the control space) for size n."""
        if not 1 <= n <= self.n_max:
            raise InvalidParameterError(f"Reduced size must be in [1, {self.n_max}], got {n}")
        return self.sigma_dimensions[n], n

    def block(self, name: str, mu, n: int, mode: str = "stabilized") -> np.ndarray:
        """Theta-recombined projected block for reduced size n."""
        if mode not in MODES:
            raise InvalidParameterError(f"Unknown mode '{mode}', expected one of {MODES}")
        ds, du = self.sizes(n)
        size = {"s": ds, "u": du}
        rows, cols = BLOCK_SPACES[name]
        shape = (size[rows],) if cols is None else (size[rows], size[cols])
        total = np.zeros(shape)
        for term in self.blocks[name]:
            if term.stabilization and mode != "stabilized":
                continue
            sub = term.matrix[:shape[0]] if cols is None else term.matrix[:shape[0], :shape[1]]
            total += self.thetas(term.theta, mu) * term.scale * sub
        return total

    def assemble(self, mu, n: int, mode: str = "stabilized") -> tuple[np.ndarray, np.ndarray]:
        """Dense (2N + N + 2N) one-shot system with unknowns ordered [y, u, p]."""
        self.thetas.validate(np.asarray(mu, dtype=float))
        ds, du = self.sizes(n)
        b = {name: self.block(name, mu, n, mode) for name in MATRIX_BLOCKS + VECTOR_BLOCKS}
        matrix = np.block([
            [b["observation"], np.zeros((ds, du)), b["adjoint_operator"]],
            [np.zeros((du, ds)), self.alpha * b["control_mass"], b["control_adjoint"]],
            [b["state_operator"], b["control"], np.zeros((ds, ds))],
        ])
        rhs = np.concatenate([b["adjoint_rhs"], np.zeros(du), b["state_rhs"]])
        return matrix, rhs

    def reconstruct(self, coefficients: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Homogenized state, control and adjoint on the truth mesh (lifting not added)."""
        ds, du = self.sizes(n)
        c_y, c_u, c_p = np.split(np.asarray(coefficients, dtype=float), [ds, ds + du])
        fields = (self.sigma[:, :ds] @ c_y, self.bases["u"][:, :du] @ c_u, self.sigma[:, :ds] @ c_p)
        if self.is_space_time:
            return tuple(values.reshape(self.n_steps, self.n) for values in fields)
        return fields

    def lift(self, y_bar: np.ndarray) -> np.ndarray:
        return y_bar + self.lifting

    def term_listing(self) -> dict[str, list[str]]:
        return {name: [f"{t.scale:+g}*{t.theta}{'/supg' if t.stabilization else ''}" for t in terms]
                for name, terms in self.blocks.items()}
