"""
Array Channel Model
ULA geometry, steering vectors, line-of-sight channels, transmit covariance
and beampattern evaluation. All powers are in mW.
"""

import math
from typing import List, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from metrics.semantic_metrics import SemanticProfile
from utils.errors import DomainError

HALF_PI = math.pi / 2
ANGLE_TOL = 1e-12
HERMITIAN_TOL = 1e-10


class ArrayGeometry(BaseModel):
    """Uniform linear array: N elements with spacing d/λ."""
    model_config = ConfigDict(frozen=True)

    n_antennas: int = Field(ge=2)
    spacing_ratio: float = Field(0.5, gt=0.0)


class Scenario(BaseModel):
    """Complete experiment description: array, angles, gains, noise, budget and semantic profiles."""
    model_config = ConfigDict(frozen=True)

    geometry: ArrayGeometry
    cu_angles: List[float]
    target_angles: List[float]
    cu_gains: List[float]
    target_gains_alpha: List[float]
    target_gains_beta: List[float]
    sigma2_c: float = Field(gt=0.0)
    sigma2_r: float = Field(gt=0.0)
    power_budget_mw: float = Field(gt=0.0)
    qos_floor: float = Field(1.0, ge=0.0)
    mismatch_budget: float = Field(5.0, gt=0.0)
    comp_coeff: float = Field(10.0, ge=0.0)
    semantic_profiles: List[SemanticProfile]
    seed: int = Field(0, ge=0, lt=2 ** 64)
    cu_channel_model: Literal['los', 'rayleigh'] = 'los'

    @field_validator('cu_angles', 'target_angles')
    @classmethod
    def _angles_in_range(cls, angles: List[float]) -> List[float]:
        if not angles:
            raise ValueError("at least one angle is required")
        for angle in angles:
            if abs(angle) > HALF_PI + ANGLE_TOL:
                raise ValueError(f"angle {angle!r} rad lies outside [-pi/2, pi/2]")
        return angles

    @field_validator('cu_gains', 'target_gains_alpha', 'target_gains_beta')
    @classmethod
    def _gains_positive(cls, gains: List[float]) -> List[float]:
        if any(not g > 0 for g in gains):
            raise ValueError("gains must be positive")
        return gains

    @model_validator(mode='after')
    def _lengths_consistent(self) -> "Scenario":
        k, l = len(self.cu_angles), len(self.target_angles)
        if len(self.cu_gains) != k or len(self.semantic_profiles) != k:
            raise ValueError(f"cu_gains and semantic_profiles need {k} entries (one per CU)")
        if len(self.target_gains_alpha) != l or len(self.target_gains_beta) != l:
            raise ValueError(f"target gains need {l} entries (one per target)")
        for index, profile in enumerate(self.semantic_profiles):
            if not profile.is_feasible:
                raise ValueError(f"semantic profile {index} cannot reach its quality floor")
        return self

    @property
    def n_users(self) -> int:
        return len(self.cu_angles)

    @property
    def n_targets(self) -> int:
        return len(self.target_angles)

    @property
    def n_antennas(self) -> int:
        return self.geometry.n_antennas

    def with_budget(self, power_budget_mw: float) -> "Scenario":
        """Same scenario (identical channel draws) at another power budget."""
        return self.model_copy(update={'power_budget_mw': float(power_budget_mw)})


class BeamformerSet(BaseModel):
    """Communication covariances W_k and sensing covariances R_l (Hermitian PSD, mW)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    w_mats: List[np.ndarray]
    r_mats: List[np.ndarray]

    @field_validator('w_mats', 'r_mats')
    @classmethod
    def _hermitian_psd(cls, mats: List[np.ndarray]) -> List[np.ndarray]:
        cleaned = []
        for mat in mats:
            mat = np.asarray(mat, dtype=complex)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"beamformer matrices must be square (got shape {mat.shape})")
            if not is_hermitian(mat):
                raise ValueError("beamformer matrix is not Hermitian")
            mat = 0.5 * (mat + mat.conj().T)
            trace = float(np.real(np.trace(mat)))
            min_eig = float(np.linalg.eigvalsh(mat)[0])
            if min_eig < -1e-8 * max(trace, 0.0):
                raise ValueError(f"beamformer matrix is not PSD (min eigenvalue {min_eig:.3e})")
            cleaned.append(mat)
        return cleaned

    @model_validator(mode='after')
    def _same_size(self) -> "BeamformerSet":
        sizes = {m.shape[0] for m in self.w_mats + self.r_mats}
        if len(sizes) > 1:
            raise ValueError(f"all beamformer matrices must share one size (got {sorted(sizes)})")
        return self

    @classmethod
    def zeros(cls, n_antennas: int, n_users: int, n_targets: int) -> "BeamformerSet":
        zero = np.zeros((n_antennas, n_antennas), dtype=complex)
        return cls(w_mats=[zero.copy() for _ in range(n_users)], r_mats=[zero.copy() for _ in range(n_targets)])

    @classmethod
    def from_vectors(cls, w_vectors: Sequence[np.ndarray], r_mats: Sequence[np.ndarray]) -> "BeamformerSet":
        """Rank-one W_k = w_k w_k^H from beam vectors."""
        return cls(w_mats=[np.outer(w, np.conj(w)) for w in w_vectors], r_mats=list(r_mats))

    @property
    def n_antennas(self) -> int:
        return (self.w_mats + self.r_mats)[0].shape[0]

    @property
    def n_users(self) -> int:
        return len(self.w_mats)

    @property
    def n_targets(self) -> int:
        return len(self.r_mats)

    def sum_w(self) -> np.ndarray:
        return np.sum(self.w_mats, axis=0) if self.w_mats else np.zeros((self.n_antennas,) * 2, dtype=complex)

    def sum_r(self) -> np.ndarray:
        return np.sum(self.r_mats, axis=0) if self.r_mats else np.zeros((self.n_antennas,) * 2, dtype=complex)

    def total_power(self) -> float:
        """P_c&s = tr(Σ W_k + Σ R_l)."""
        return float(np.real(np.trace(transmit_covariance(self))))

    def scaled(self, factor: float) -> "BeamformerSet":
        return BeamformerSet(w_mats=[factor * m for m in self.w_mats], r_mats=[factor * m for m in self.r_mats])

    def blocks(self) -> List[np.ndarray]:
        """W_1..W_K followed by R_1..R_L (the block order of the conic subproblems)."""
        return list(self.w_mats) + list(self.r_mats)


def is_hermitian(mat: np.ndarray, rel_tol: float = HERMITIAN_TOL) -> bool:
    scale = max(float(np.max(np.abs(mat))) if mat.size else 0.0, 1e-300)
    return float(np.max(np.abs(mat - mat.conj().T))) <= rel_tol * scale


def _check_angle(angle: float) -> None:
    if abs(angle) > HALF_PI + ANGLE_TOL:
        raise DomainError(f"Angle {angle!r} rad lies outside [-pi/2, pi/2]")


def steering_vector(geometry: ArrayGeometry, angle: float) -> np.ndarray:
    """a(θ): element m has phase 2π·m·(d/λ)·sin θ."""
    _check_angle(angle)
    m = np.arange(geometry.n_antennas)
    return np.exp(2j * np.pi * m * geometry.spacing_ratio * math.sin(angle))


def steering_matrix(geometry: ArrayGeometry, angles: Sequence[float]) -> np.ndarray:
    """N×M matrix whose columns are the steering vectors of `angles`."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size and np.max(np.abs(angles)) > HALF_PI + ANGLE_TOL:
        raise DomainError("Steering angles must lie in [-pi/2, pi/2]")
    m = np.arange(geometry.n_antennas)[:, None]
    return np.exp(2j * np.pi * m * geometry.spacing_ratio * np.sin(angles)[None, :])


def angle_grid(step_deg: float = 1.0) -> np.ndarray:
    """Angles from -90° to 90° (inclusive) in radians."""
    count = int(round(180.0 / step_deg)) + 1
    return np.deg2rad(np.linspace(-90.0, 90.0, count))


def draw_path_losses(rng: np.random.Generator, count: int, low: float = 0.001, high: float = 0.01) -> List[float]:
    """Path-loss coefficients drawn uniformly in [low, high]."""
    return [float(g) for g in rng.uniform(low, high, size=count)]


def cu_channel(scenario: Scenario, k: int) -> np.ndarray:
    """
    Channel of communication user k.

    LoS mode: sqrt(g_k)·a(θ_k). Rayleigh mode: i.i.d. CN(0, 1) entries scaled
    by sqrt(g_k), drawn from a stream derived from the scenario seed.
    """
    if not 0 <= k < scenario.n_users:
        raise IndexError(f"CU index {k} out of range (K={scenario.n_users})")
    gain = math.sqrt(scenario.cu_gains[k])
    if scenario.cu_channel_model == 'rayleigh':
        rng = np.random.default_rng([scenario.seed, 1000 + k])
        n = scenario.n_antennas
        draw = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        return gain * draw
    return gain * steering_vector(scenario.geometry, scenario.cu_angles[k])


def target_channel(scenario: Scenario, l: int) -> np.ndarray:
    """h_l = α_l·a(θ_l)."""
    if not 0 <= l < scenario.n_targets:
        raise IndexError(f"Target index {l} out of range (L={scenario.n_targets})")
    return scenario.target_gains_alpha[l] * steering_vector(scenario.geometry, scenario.target_angles[l])


def outer(vec: np.ndarray) -> np.ndarray:
    """v v^H."""
    return np.outer(vec, np.conj(vec))


def quad_form(vec: np.ndarray, mat: np.ndarray) -> float:
    """Real part of v^H M v."""
    return float(np.real(np.conj(vec) @ mat @ vec))


def transmit_covariance(beams: BeamformerSet) -> np.ndarray:
    """R_x = Σ W_k + Σ R_l."""
    return beams.sum_w() + beams.sum_r()


def beampattern(geometry: ArrayGeometry, cov: np.ndarray, angles: Sequence[float]) -> np.ndarray:
    """p(φ) = a^H(φ) R a(φ) for every angle (mW)."""
    cov = np.asarray(cov, dtype=complex)
    if not is_hermitian(cov):
        raise DomainError("Beampattern covariance must be Hermitian")
    steer = steering_matrix(geometry, angles)
    return np.real(np.einsum('nm,nk,km->m', steer.conj(), cov, steer))


def cross_correlation(geometry: ArrayGeometry, cov: np.ndarray, angle_a: float, angle_b: float) -> complex:
    """a^H(θa)·R·a(θb)."""
    a = steering_vector(geometry, angle_a)
    b = steering_vector(geometry, angle_b)
    return complex(np.conj(a) @ cov @ b)


def channel_matrix(scenario: Scenario, which: str = 'cu') -> List[np.ndarray]:
    """All CU channels ('cu') or all target channels ('target')."""
    if which == 'cu':
        return [cu_channel(scenario, k) for k in range(scenario.n_users)]
    if which == 'target':
        return [target_channel(scenario, l) for l in range(scenario.n_targets)]
    raise DomainError(f"Unknown channel family '{which}'")
