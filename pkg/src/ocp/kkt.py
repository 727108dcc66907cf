"""
Affine block layout of the one-shot optimality system

    [ Obs   0      AdjOp ] [y]   [b_adj  ]
    [ 0     a*CM   CT    ] [u] = [0      ]
    [ StOp  C      0     ] [p]   [b_state]

shared by the steady system (one time level) and the backward-Euler space-time system.
Each block is a list of ``BlockTerm``: Theta(mu) * scale * kron(coupling, matrix), where the
coupling is the identity ('diag') or the sub-/super-diagonal shift ('lower'/'upper') over time
levels. Right-hand sides use 'all' (every level) or 'first' (initial level only).
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse as sp

from src.errors import InvalidParameterError
from src.fem.coefficients import ThetaTable
from src.fem.dirichlet import DirichletHandler, constrain, zero_cols, zero_entries, zero_rows
from src.fem.forms import AffineOperator, AssembledForms

logger = logging.getLogger(__name__)

MATRIX_BLOCKS = ("observation", "adjoint_operator", "control_mass", "control_adjoint", "state_operator", "control")
VECTOR_BLOCKS = ("adjoint_rhs", "state_rhs")

# (row space, column space) of each block; 's' = state/adjoint space, 'u' = control space.
BLOCK_SPACES = {
    "observation": ("s", "s"),
    "adjoint_operator": ("s", "s"),
    "control_mass": ("u", "u"),
    "control_adjoint": ("u", "s"),
    "state_operator": ("s", "s"),
    "control": ("s", "u"),
    "adjoint_rhs": ("s", None),
    "state_rhs": ("s", None),
}


@dataclass(frozen=True)
class BlockTerm:
    theta: str
    scale: float
    matrix: object
    coupling: str = "diag"
    stabilization: bool = False


@dataclass
class KktTerms:
    n: int
    n_steps: int
    thetas: ThetaTable
    dt: float | None = None
    blocks: dict[str, list[BlockTerm]] = field(default_factory=dict)

    def __post_init__(self):
        for name in MATRIX_BLOCKS + VECTOR_BLOCKS:
            self.blocks.setdefault(name, [])

    @property
    def is_space_time(self) -> bool:
        return self.dt is not None

    def select(self, mode: str) -> "KktTerms":
        """Drop the SUPG-derived terms for the plain system."""
        if mode == "stabilized":
            return self
        kept = {name: [t for t in terms if not t.stabilization] for name, terms in self.blocks.items()}
        return replace(self, blocks=kept)

    def describe(self) -> dict[str, list[str]]:
        return {name: [f"{t.scale:+g}*{t.theta}[{t.coupling}]{'/supg' if t.stabilization else ''}"
                       for t in terms] for name, terms in self.blocks.items()}


def _extend(target: list, operator: AffineOperator, scale: float, coupling: str = "diag",
            stabilization: bool = False, apply=None) -> None:
    for term in operator.terms:
        block = term.block if apply is None else apply(term.block)
        target.append(BlockTerm(term.theta, scale, block, coupling, stabilization))


def build_kkt_terms(forms: AssembledForms, handler: DirichletHandler, n_steps: int = 1,
                    dt: float | None = None, initial_state: np.ndarray | None = None) -> KktTerms:
    """
    Affine KKT blocks in the homogenized unknown y_bar = y - R_y.

    Args:
        forms: Stabilized forms (plain parts are recovered with ``select('plain')``).
        handler: Dirichlet data providing the lifting R_y.
        n_steps: Number of time levels; 1 with ``dt=None`` gives the steady system.
        dt: Time step of the space-time system.
        initial_state: Nodal initial state y_0 (zero when omitted).
    """
    lifting = handler.lifting
    y_d = forms.desired_state if forms.desired_state is not None else np.zeros(forms.n)
    shifted = y_d - lifting
    terms = KktTerms(n=forms.n, n_steps=n_steps, thetas=forms.thetas, dt=dt)
    b = terms.blocks
    times = 1.0 if dt is None else dt

    _extend(b["observation"], forms.observation_mass, times)
    _extend(b["observation"], forms.observation_supg, -times, stabilization=True)

    _extend(b["adjoint_operator"], forms.stiffness, times, apply=lambda m: m.T.tocsr())
    _extend(b["adjoint_operator"], forms.adjoint_supg, times, stabilization=True)
    _extend(b["state_operator"], forms.stiffness, times)
    _extend(b["state_operator"], forms.stiffness_supg, times, stabilization=True)
    _extend(b["control_mass"], forms.mass, times)
    _extend(b["control_adjoint"], forms.mass, -times)
    _extend(b["control"], forms.mass, -times)
    _extend(b["control"], forms.mass_supg, -times, stabilization=True)

    _extend(b["state_rhs"], forms.load, times, "all")
    _extend(b["state_rhs"], forms.load_supg, times, "all", stabilization=True)
    _extend(b["state_rhs"], forms.stiffness, -times, "all", apply=lambda m: m @ lifting)
    _extend(b["state_rhs"], forms.stiffness_supg, -times, "all", stabilization=True, apply=lambda m: m @ lifting)
    _extend(b["adjoint_rhs"], forms.observation_mass, times, "all", apply=lambda m: m @ shifted)
    _extend(b["adjoint_rhs"], forms.observation_supg, -times, "all", stabilization=True, apply=lambda m: m @ shifted)

    if dt is not None:
        # Backward Euler: state mass m_s on the diagonal and sub-diagonal, adjoint mass m*_s on
        # the diagonal and super-diagonal; no adjoint row couples past the last level.
        _extend(b["state_operator"], forms.mass, 1.0)
        _extend(b["state_operator"], forms.mass_supg, 1.0, stabilization=True)
        _extend(b["state_operator"], forms.mass, -1.0, "lower")
        _extend(b["state_operator"], forms.mass_supg, -1.0, "lower", stabilization=True)
        _extend(b["adjoint_operator"], forms.mass, 1.0)
        _extend(b["adjoint_operator"], forms.mass_supg, -1.0, stabilization=True)
        _extend(b["adjoint_operator"], forms.mass, -1.0, "upper")
        _extend(b["adjoint_operator"], forms.mass_supg, 1.0, "upper", stabilization=True)
        y0 = np.zeros(forms.n) if initial_state is None else np.asarray(initial_state, dtype=float)
        y0_bar = zero_entries(y0 - lifting, handler.dofs)
        if np.any(y0_bar):
            _extend(b["state_rhs"], forms.mass, 1.0, "first", apply=lambda m: m @ y0_bar)
            _extend(b["state_rhs"], forms.mass_supg, 1.0, "first", stabilization=True, apply=lambda m: m @ y0_bar)
    return terms


def coupling_matrix(coupling: str, n_steps: int) -> sp.spmatrix:
    if coupling == "diag":
        return sp.identity(n_steps, format="csr")
    if coupling == "lower":
        return sp.eye(n_steps, k=-1, format="csr")
    if coupling == "upper":
        return sp.eye(n_steps, k=1, format="csr")
    raise ValueError(f"Unknown time coupling '{coupling}'")


def time_profile(coupling: str, n_steps: int) -> np.ndarray:
    if coupling == "all":
        return np.ones(n_steps)
    if coupling == "first":
        profile = np.zeros(n_steps)
        profile[0] = 1.0
        return profile
    raise ValueError(f"Unknown right-hand side profile '{coupling}'")


def evaluate_block(terms: KktTerms, name: str, mu) -> sp.csr_matrix | np.ndarray:
    n_total = terms.n * terms.n_steps
    if name in VECTOR_BLOCKS:
        total = np.zeros(n_total)
        for t in terms.blocks[name]:
            total += terms.thetas(t.theta, mu) * t.scale * np.kron(time_profile(t.coupling, terms.n_steps), t.matrix)
        return total
    total = sp.csr_matrix((n_total, n_total))
    for t in terms.blocks[name]:
        weight = terms.thetas(t.theta, mu) * t.scale
        if terms.n_steps == 1 and t.coupling == "diag":
            total = total + weight * t.matrix
        else:
            total = total + weight * sp.kron(coupling_matrix(t.coupling, terms.n_steps), t.matrix, format="csr")
    return total.tocsr()


def apply_block_constraints(blocks: dict, dofs: np.ndarray) -> dict:
    """Zero constrained state/adjoint rows and columns; unit diagonal on the two operator blocks."""
    out = dict(blocks)
    out["observation"] = constrain(blocks["observation"], dofs, 0.0)
    out["adjoint_operator"] = constrain(blocks["adjoint_operator"], dofs, 1.0)
    out["state_operator"] = constrain(blocks["state_operator"], dofs, 1.0)
    out["control_adjoint"] = zero_cols(blocks["control_adjoint"], dofs)
    out["control"] = zero_rows(blocks["control"], dofs)
    out["adjoint_rhs"] = zero_entries(blocks["adjoint_rhs"], dofs)
    out["state_rhs"] = zero_entries(blocks["state_rhs"], dofs)
    return out


@dataclass(frozen=True)
class KktSystem:
    """Assembled one-shot system. Steady systems have ``n_steps == 1`` and ``dt is None``."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    n: int
    n_steps: int
    alpha: float
    dt: float | None
    blocks: dict

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


# Aliases naming the two system shapes.
SteadyKkt = KktSystem
SpaceTimeKkt = KktSystem


def assemble_kkt(terms: KktTerms, mu, alpha: float, handler: DirichletHandler | None = None) -> KktSystem:
    if alpha <= 0.0:
        raise InvalidParameterError(f"Penalization alpha must be positive, got {alpha}")
    terms.thetas.validate(np.asarray(mu, dtype=float))
    blocks = {name: evaluate_block(terms, name, mu) for name in MATRIX_BLOCKS + VECTOR_BLOCKS}
    if handler is not None and handler.dofs.size:
        blocks = apply_block_constraints(blocks, handler.space_time_dofs(terms.n_steps))
    matrix = sp.bmat([
        [blocks["observation"], None, blocks["adjoint_operator"]],
        [None, alpha * blocks["control_mass"], blocks["control_adjoint"]],
        [blocks["state_operator"], blocks["control"], None],
    ], format="csc")
    rhs = np.concatenate([blocks["adjoint_rhs"], np.zeros(terms.n * terms.n_steps), blocks["state_rhs"]])
    return KktSystem(matrix, rhs, terms.n, terms.n_steps, alpha, terms.dt, blocks)
