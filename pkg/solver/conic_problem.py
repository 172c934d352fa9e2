"""
Conic Problem Model
Canonical form of the convex subproblems: Hermitian PSD block variables,
free real scalars, affine inequalities, concave log objective terms, smooth
"concave ≥ bound" log constraints and one Frobenius-ball constraint.

Hermitian blocks are handled in an orthonormal real basis under the inner
product ⟨A, B⟩ = Re tr(AB): diagonal units E_ii, symmetric pairs
(E_ij + E_ji)/√2 and skew pairs i(E_ij - E_ji)/√2. In that basis every linear
functional ⟨C, X⟩ is a plain dot product of the two coordinate vectors.
"""

import math
from functools import lru_cache
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import DomainError

COEFF_HERMITIAN_TOL = 1e-9


class HermitianBasis:
    """
    Orthonormal real basis of n×n Hermitian matrices.

    Each basis matrix has at most two non-zero entries; they are stored as
    flat positions (p1, p2) and complex values (c1, c2). Diagonal elements
    use p2 = p1 with c2 = 0.
    """

    def __init__(self, n: int):
        self.n = n
        self.dim = n * n
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        # (row1, col1, value1, row2, col2, value2) per basis matrix
        entries = [(i, i, 1.0, i, i, 0.0) for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                entries.append((i, j, inv_sqrt2, j, i, inv_sqrt2))
                entries.append((i, j, 1j * inv_sqrt2, j, i, -1j * inv_sqrt2))
        table = list(zip(*entries))
        self.r1 = np.array(table[0], dtype=int)
        self.s1 = np.array(table[1], dtype=int)
        self.c1 = np.array(table[2], dtype=complex)
        self.r2 = np.array(table[3], dtype=int)
        self.s2 = np.array(table[4], dtype=int)
        self.c2 = np.array(table[5], dtype=complex)
        self.p1 = self.r1 * n + self.s1
        self.p2 = self.r2 * n + self.s2

    def svec(self, mat: np.ndarray) -> np.ndarray:
        """Coordinates of a Hermitian matrix (⟨B_m, A⟩ for every basis matrix B_m)."""
        flat = np.asarray(mat, dtype=complex).ravel()
        return np.real(np.conj(self.c1) * flat[self.p1] + np.conj(self.c2) * flat[self.p2])

    def smat(self, vec: np.ndarray) -> np.ndarray:
        """Hermitian matrix with the given coordinates."""
        flat = np.zeros(self.dim, dtype=complex)
        np.add.at(flat, self.p1, self.c1 * vec)
        np.add.at(flat, self.p2, self.c2 * vec)
        return flat.reshape(self.n, self.n)

    def logdet_hessian(self, inv_mat: np.ndarray) -> np.ndarray:
        """Hessian of -ln det X in basis coordinates, given Y = X^{-1}: H_ab = tr(Y B_a Y B_b)."""
        y = inv_mat

        def applied(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            # (Y B_a Y)[u_b, v_b] for every pair (b, a)
            return (
                self.c1[None, :] * y[u[:, None], self.r1[None, :]] * y[self.s1[None, :], v[:, None]]
                + self.c2[None, :] * y[u[:, None], self.r2[None, :]] * y[self.s2[None, :], v[:, None]]
            )

        hess = np.real(
            np.conj(self.c1)[:, None] * applied(self.r1, self.s1)
            + np.conj(self.c2)[:, None] * applied(self.r2, self.s2)
        )
        return 0.5 * (hess + hess.T)


@lru_cache(maxsize=None)
def hermitian_basis(n: int) -> HermitianBasis:
    return HermitianBasis(n)


def hermitian_part(mat: np.ndarray) -> np.ndarray:
    """(C + C^H)/2, so that Re tr(C X) = ⟨Herm(C), X⟩ for Hermitian X."""
    mat = np.asarray(mat, dtype=complex)
    return 0.5 * (mat + mat.conj().T)


def _is_hermitian(mat: np.ndarray) -> bool:
    scale = max(float(np.max(np.abs(mat))) if mat.size else 0.0, 1e-300)
    return float(np.max(np.abs(mat - mat.conj().T))) <= COEFF_HERMITIAN_TOL * scale


class LinearForm(BaseModel):
    """Σ_b ⟨C_b, X_b⟩ + Σ_j s_j·t_j + constant."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    blocks: Dict[int, np.ndarray] = Field(default_factory=dict)
    scalars: Dict[int, float] = Field(default_factory=dict)
    constant: float = 0.0

    @field_validator('blocks')
    @classmethod
    def _coefficients_hermitian(cls, blocks: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
        cleaned = {}
        for index, mat in blocks.items():
            mat = np.asarray(mat, dtype=complex)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"coefficient of block {index} must be square")
            if not _is_hermitian(mat):
                raise ValueError(f"coefficient of block {index} is not Hermitian")
            cleaned[index] = hermitian_part(mat)
        return cleaned

    def value(self, block_values: Sequence[np.ndarray], scalar_values: Sequence[float] = ()) -> float:
        total = self.constant
        for index, coeff in self.blocks.items():
            total += float(np.real(np.sum(coeff.T * block_values[index])))
        for index, coeff in self.scalars.items():
            total += coeff * float(scalar_values[index])
        return float(total)

    def scaled(self, factor: float) -> "LinearForm":
        return LinearForm(
            blocks={b: factor * m for b, m in self.blocks.items()},
            scalars={j: factor * s for j, s in self.scalars.items()},
            constant=factor * self.constant
        )


def linear_combination(forms: Sequence[LinearForm], weights: Optional[Sequence[float]] = None) -> LinearForm:
    """Weighted sum of linear forms (weights default to 1)."""
    weights = list(weights) if weights is not None else [1.0] * len(forms)
    blocks: Dict[int, np.ndarray] = {}
    scalars: Dict[int, float] = {}
    constant = 0.0
    for form, weight in zip(forms, weights):
        for b, mat in form.blocks.items():
            blocks[b] = blocks.get(b, 0.0) + weight * mat
        for j, coeff in form.scalars.items():
            scalars[j] = scalars.get(j, 0.0) + weight * coeff
        constant += weight * form.constant
    return LinearForm(blocks=blocks, scalars=scalars, constant=constant)


class AffineConstraint(BaseModel):
    """form ≤ bound."""
    model_config = ConfigDict(frozen=True)

    form: LinearForm
    bound: float
    name: str = 'affine'


class LogTerm(BaseModel):
    """Objective term weight·ln(form); form must stay positive."""
    model_config = ConfigDict(frozen=True)

    weight: float = Field(gt=0.0)
    form: LinearForm


class LogConstraint(BaseModel):
    """weight·ln(log_form) + linear_form ≥ bound (a concave ≥ constant constraint)."""
    model_config = ConfigDict(frozen=True)

    weight: float = Field(gt=0.0)
    log_form: LinearForm
    linear_form: LinearForm = Field(default_factory=LinearForm)
    bound: float = 0.0
    name: str = 'log'


class FrobBall(BaseModel):
    """‖center - Σ_b w_b·X_b‖_F² ≤ radius_sq."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    center: np.ndarray
    block_weights: Dict[int, float]
    radius_sq: float = Field(gt=0.0)
    name: str = 'frobenius_ball'

    @field_validator('center')
    @classmethod
    def _center_hermitian(cls, center: np.ndarray) -> np.ndarray:
        center = np.asarray(center, dtype=complex)
        if not _is_hermitian(center):
            raise ValueError("ball center must be Hermitian")
        return hermitian_part(center)


class ConicProblem(BaseModel):
    """
    maximize    objective + Σ w·ln(log term)
    subject to  affine_ineqs, log_ineqs, frob_ball, X_b ⪰ 0

    Block b has size block_sizes[b]; n_scalars free real variables follow the
    blocks. initial_blocks / initial_scalars are an optional start hint.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    block_sizes: List[int]
    n_scalars: int = Field(0, ge=0)
    objective: LinearForm = Field(default_factory=LinearForm)
    log_terms: List[LogTerm] = Field(default_factory=list)
    affine_ineqs: List[AffineConstraint] = Field(default_factory=list)
    log_ineqs: List[LogConstraint] = Field(default_factory=list)
    frob_ball: Optional[FrobBall] = None
    initial_blocks: Optional[List[np.ndarray]] = None
    initial_scalars: Optional[List[float]] = None
    block_names: Optional[List[str]] = None

    @field_validator('block_sizes')
    @classmethod
    def _sizes_positive(cls, sizes: List[int]) -> List[int]:
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError("at least one block of positive size is required")
        return sizes

    @model_validator(mode='after')
    def _references_valid(self) -> "ConicProblem":
        forms = [self.objective] + [t.form for t in self.log_terms]
        forms += [c.form for c in self.affine_ineqs]
        forms += [c.log_form for c in self.log_ineqs] + [c.linear_form for c in self.log_ineqs]
        for form in forms:
            for b, mat in form.blocks.items():
                if not 0 <= b < len(self.block_sizes):
                    raise ValueError(f"form references unknown block {b}")
                if mat.shape[0] != self.block_sizes[b]:
                    raise ValueError(f"coefficient of block {b} has size {mat.shape[0]}, expected {self.block_sizes[b]}")
            for j in form.scalars:
                if not 0 <= j < self.n_scalars:
                    raise ValueError(f"form references unknown scalar {j}")
        if self.frob_ball is not None:
            for b in self.frob_ball.block_weights:
                if not 0 <= b < len(self.block_sizes) or self.block_sizes[b] != self.frob_ball.center.shape[0]:
                    raise ValueError(f"Frobenius ball block {b} does not match the center size")
        if self.initial_blocks is not None and len(self.initial_blocks) != len(self.block_sizes):
            raise ValueError("initial_blocks must give one matrix per block")
        return self


class ConicSolution(BaseModel):
    """Solver output; block_values are Hermitian PSD."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    block_values: List[np.ndarray]
    scalar_values: List[float] = Field(default_factory=list)
    objective: float
    kkt_residual: float
    status: Literal['optimal', 'infeasible', 'max_iter']
    iterations: int = 0
    stages: List[Dict[str, float]] = Field(default_factory=list)
    certificate: Optional[Dict[str, Any]] = None
    binding_constraint: Optional[str] = None


class StartPoint(BaseModel):
    """Strictly feasible point and where it came from ('hint', 'identity' or 'phase1')."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    block_values: List[np.ndarray]
    scalar_values: List[float] = Field(default_factory=list)
    min_slack: float
    source: str


class CompiledProblem:
    """
    Real-coordinate arrays of a ConicProblem.

    z = [svec(X_1), ..., svec(X_B), t_1..t_S]. The problem reads
        maximize  c·z + c0 + Σ lw_j ln(La_j·z + la0_j)
        s.t.      G z ≤ h
                  qw_j ln(Qa_j·z + qa0_j) + Qb_j·z + qb0_j ≥ 0
                  r2 - ‖cvec - S z‖² + ball_lin·z ≥ 0
                  X_b ≻ 0
    """

    def __init__(self, problem: ConicProblem):
        self.problem = problem
        self.bases = [hermitian_basis(n) for n in problem.block_sizes]
        self.offsets = []
        offset = 0
        for basis in self.bases:
            self.offsets.append(offset)
            offset += basis.dim
        self.scalar_offset = offset
        self.n_scalars = problem.n_scalars
        self.n_vars = offset + problem.n_scalars

        self.c, self.c0 = self.form_vector(problem.objective)

        rows = [self.form_vector(t.form) for t in problem.log_terms]
        self.la = np.array([r[0] for r in rows]).reshape(len(rows), self.n_vars)
        self.la0 = np.array([r[1] for r in rows], dtype=float)
        self.lw = np.array([t.weight for t in problem.log_terms], dtype=float)

        rows = [self.form_vector(c.form) for c in problem.affine_ineqs]
        self.g = np.array([r[0] for r in rows]).reshape(len(rows), self.n_vars)
        self.h = np.array([c.bound - r[1] for c, r in zip(problem.affine_ineqs, rows)], dtype=float)
        self.affine_names = [c.name for c in problem.affine_ineqs]

        qa_rows = [self.form_vector(c.log_form) for c in problem.log_ineqs]
        qb_rows = [self.form_vector(c.linear_form) for c in problem.log_ineqs]
        self.qa = np.array([r[0] for r in qa_rows]).reshape(len(qa_rows), self.n_vars)
        self.qa0 = np.array([r[1] for r in qa_rows], dtype=float)
        self.qb = np.array([r[0] for r in qb_rows]).reshape(len(qb_rows), self.n_vars)
        self.qb0 = np.array([r[1] - c.bound for c, r in zip(problem.log_ineqs, qb_rows)], dtype=float)
        self.qw = np.array([c.weight for c in problem.log_ineqs], dtype=float)
        self.log_names = [c.name for c in problem.log_ineqs]

        self.ball = problem.frob_ball is not None
        if self.ball:
            ball = problem.frob_ball
            basis = hermitian_basis(ball.center.shape[0])
            self.ball_center = basis.svec(ball.center)
            self.ball_map = np.zeros((basis.dim, self.n_vars))
            for b, weight in ball.block_weights.items():
                start = self.offsets[b]
                self.ball_map[:, start:start + basis.dim] += weight * np.eye(basis.dim)
            self.ball_gram = self.ball_map.T @ self.ball_map
            self.ball_r2 = float(ball.radius_sq)
            self.ball_lin = np.zeros(self.n_vars)
            self.ball_name = ball.name

    @property
    def n_affine(self) -> int:
        return self.g.shape[0]

    @property
    def n_log_ineqs(self) -> int:
        return self.qa.shape[0]

    @property
    def barrier_parameter(self) -> float:
        """ν: total block dimension plus one per scalar constraint."""
        return float(sum(self.problem.block_sizes) + self.n_affine + self.n_log_ineqs + (1 if self.ball else 0))

    def form_vector(self, form: LinearForm) -> Tuple[np.ndarray, float]:
        vec = np.zeros(self.n_vars)
        for b, mat in form.blocks.items():
            start = self.offsets[b]
            vec[start:start + self.bases[b].dim] += self.bases[b].svec(mat)
        for j, coeff in form.scalars.items():
            vec[self.scalar_offset + j] += coeff
        return vec, float(form.constant)

    def pack(self, block_values: Sequence[np.ndarray], scalar_values: Sequence[float] = ()) -> np.ndarray:
        z = np.zeros(self.n_vars)
        for b, (basis, mat) in enumerate(zip(self.bases, block_values)):
            mat = np.asarray(mat, dtype=complex)
            if mat.shape != (basis.n, basis.n):
                raise DomainError(f"Block {b} has shape {mat.shape}, expected {(basis.n, basis.n)}")
            z[self.offsets[b]:self.offsets[b] + basis.dim] = basis.svec(hermitian_part(mat))
        if self.n_scalars:
            values = np.zeros(self.n_scalars) if len(scalar_values) == 0 else np.asarray(scalar_values, dtype=float)
            z[self.scalar_offset:] = values
        return z

    def unpack(self, z: np.ndarray) -> Tuple[List[np.ndarray], List[float]]:
        blocks = [
            basis.smat(z[offset:offset + basis.dim])
            for basis, offset in zip(self.bases, self.offsets)
        ]
        return blocks, [float(v) for v in z[self.scalar_offset:]]

    def block_coords(self, z: np.ndarray, b: int) -> np.ndarray:
        return z[self.offsets[b]:self.offsets[b] + self.bases[b].dim]

    def objective(self, z: np.ndarray) -> float:
        """True objective; -inf outside the log-term domain."""
        value = float(self.c @ z + self.c0)
        if self.lw.size:
            args = self.la @ z + self.la0
            if np.any(args <= 0):
                return -math.inf
            value += float(self.lw @ np.log(args))
        return value

    def slacks(self, z: np.ndarray) -> Dict[str, np.ndarray]:
        """Constraint slacks (positive when strictly satisfied)."""
        result = {'affine': self.h - self.g @ z}
        if self.n_log_ineqs:
            args = self.qa @ z + self.qa0
            with np.errstate(divide='ignore', invalid='ignore'):
                logs = np.where(args > 0, np.log(np.maximum(args, 1e-300)), -np.inf)
            result['log'] = self.qw * logs + self.qb @ z + self.qb0
        else:
            result['log'] = np.zeros(0)
        if self.ball:
            diff = self.ball_center - self.ball_map @ z
            result['ball'] = np.array([self.ball_r2 - float(diff @ diff) + float(self.ball_lin @ z)])
        else:
            result['ball'] = np.zeros(0)
        return result

    def constraint_names(self) -> List[str]:
        return self.affine_names + self.log_names + ([self.ball_name] if self.ball else [])

    def constraint_scales(self) -> np.ndarray:
        """Normalizers σ_i used to compare slacks of different constraints."""
        scales = [1.0 + abs(v) for v in self.h] + [1.0 + abs(v) for v in self.qb0]
        if self.ball:
            scales.append(self.ball_r2)
        return np.array(scales, dtype=float)

    def stacked_slacks(self, z: np.ndarray) -> np.ndarray:
        parts = self.slacks(z)
        return np.concatenate([parts['affine'], parts['log'], parts['ball']])

    def min_block_eig(self, z: np.ndarray) -> float:
        blocks, _ = self.unpack(z)
        return float(min(np.linalg.eigvalsh(b)[0] for b in blocks))
