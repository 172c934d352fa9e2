"""
MUSIC Sensing Evaluation
Simulates target echoes under a transmit design and locates the targets from
the MUSIC pseudospectrum of the sample covariance.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field
from scipy.signal import find_peaks

from channel.array_channel import (
    ArrayGeometry,
    BeamformerSet,
    Scenario,
    angle_grid,
    steering_matrix,
    transmit_covariance,
)
from utils.errors import DomainError, MusicError
from utils.logging_utils import get_logger
from utils.results_io import write_table

logger = get_logger("MUSIC")

PEAK_THRESHOLD_DB = 10.0
RANK_TOL = 1e-10


class MusicConfig(BaseModel):
    """Snapshot count, search grid and noise seed of a MUSIC evaluation."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    snapshots: int = Field(1000, ge=1)
    grid_step_deg: float = Field(0.5, gt=0.0, le=90.0)
    seed: Optional[int] = Field(None, ge=0)


class MusicResult(BaseModel):
    """Pseudospectrum on the search grid and the detected peaks."""
    model_config = ConfigDict(frozen=True)

    grid_deg: List[float]
    pseudospectrum_db: List[float]
    peak_angles_deg: List[float]
    peak_errors_deg: List[float]

    def max_error_deg(self) -> float:
        return max(self.peak_errors_deg, default=math.inf)


def _echo_operator(scenario: Scenario) -> np.ndarray:
    """G = Σ_l β_l a(θ_l) a^H(θ_l)."""
    steer = steering_matrix(scenario.geometry, scenario.target_angles)
    beta = np.asarray(scenario.target_gains_beta, dtype=float)
    return (steer * beta) @ steer.conj().T


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    eig, vecs = scipy.linalg.eigh(0.5 * (mat + mat.conj().T))
    return vecs * np.sqrt(np.maximum(eig, 0.0))


def simulate_echoes(scenario: Scenario, beams: BeamformerSet, snapshots: int, seed: int) -> np.ndarray:
    """
    Echo snapshots received at the array.

    x(t) stacks one unit-variance circular symbol stream per column of the PSD
    factors of every W_k and R_l, so E[x x^H] = R_x. Each snapshot is
    y(t) = Σ_l β_l a(θ_l) a^H(θ_l) x(t) + n(t) with n(t) ~ CN(0, σ_r² I).

    Args:
        scenario: Scenario (targets, echo gains, noise power)
        beams: Transmit beamformers
        snapshots: Number of snapshots T (≥ N)
        seed: Seed of the symbol and noise draws

    Returns:
        N×T complex echo matrix
    """
    n = scenario.n_antennas
    if snapshots < n:
        raise DomainError(f"MUSIC needs at least N={n} snapshots, got {snapshots}")
    rng = np.random.default_rng(seed)
    factors = np.hstack([_psd_factor(mat) for mat in beams.blocks()])
    symbols = (rng.standard_normal((factors.shape[1], snapshots))
               + 1j * rng.standard_normal((factors.shape[1], snapshots))) / math.sqrt(2.0)
    noise = math.sqrt(scenario.sigma2_r / 2.0) * (
        rng.standard_normal((n, snapshots)) + 1j * rng.standard_normal((n, snapshots))
    )
    return _echo_operator(scenario) @ (factors @ symbols) + noise


def expected_echo_covariance(scenario: Scenario, beams: BeamformerSet) -> np.ndarray:
    """E[y y^H] = G R_x G^H + σ_r² I, cross-target terms included."""
    g = _echo_operator(scenario)
    cov = g @ transmit_covariance(beams) @ g.conj().T
    return cov + scenario.sigma2_r * np.eye(scenario.n_antennas)


def sample_covariance(echoes: np.ndarray) -> np.ndarray:
    echoes = np.asarray(echoes, dtype=complex)
    return echoes @ echoes.conj().T / echoes.shape[1]


def music_spectrum(
    echoes: np.ndarray,
    n_targets: int,
    grid_step_deg: float = 0.5,
    true_angles_deg: Optional[Sequence[float]] = None,
    spacing_ratio: float = 0.5
) -> MusicResult:
    """
    MUSIC pseudospectrum of an echo matrix.

    The noise subspace E_n holds the N - n_targets eigenvectors of the sample
    covariance with the smallest eigenvalues; P(φ) = 1 / ‖E_n^H a(φ)‖². Peaks
    are local maxima above median + 10 dB; the n_targets highest are kept.

    Args:
        echoes: N×T echo matrix
        n_targets: Number of targets (known model order)
        grid_step_deg: Search grid step in degrees
        true_angles_deg: Ground truth used for the per-target errors
        spacing_ratio: d/λ of the array

    Returns:
        MusicResult with peaks sorted ascending

    Raises:
        DomainError: n_targets outside [1, N)
        MusicError: sample covariance rank below n_targets
    """
    echoes = np.asarray(echoes, dtype=complex)
    n = echoes.shape[0]
    if not 1 <= n_targets < n:
        raise DomainError(f"MUSIC needs 1 ≤ n_targets < N (n_targets={n_targets}, N={n})")

    eig, vecs = scipy.linalg.eigh(sample_covariance(echoes))
    top = float(eig[-1])
    rank = int(np.sum(eig > RANK_TOL * top)) if top > 0 else 0
    if rank < n_targets:
        raise MusicError(f"Insufficient excitation: echo covariance rank {rank} < {n_targets} targets")
    noise_space = vecs[:, :n - n_targets]

    geometry = ArrayGeometry(n_antennas=n, spacing_ratio=spacing_ratio)
    grid = angle_grid(grid_step_deg)
    grid_deg = np.rad2deg(grid)
    projection = noise_space.conj().T @ steering_matrix(geometry, grid)
    denominator = np.maximum(np.sum(np.abs(projection) ** 2, axis=0), 1e-300)
    spectrum_db = -10.0 * np.log10(denominator)

    threshold = float(np.median(spectrum_db)) + PEAK_THRESHOLD_DB
    peaks, props = find_peaks(spectrum_db, height=threshold)
    strongest = peaks[np.argsort(props['peak_heights'])[::-1][:n_targets]]
    peak_angles = sorted(float(grid_deg[i]) for i in strongest)

    errors: List[float] = []
    if true_angles_deg is not None:
        errors = [
            min((abs(p - truth) for p in peak_angles), default=math.inf)
            for truth in true_angles_deg
        ]
    logger.debug(f"{len(peaks)} peaks above {threshold:.2f} dB, kept {peak_angles}")

    return MusicResult(
        grid_deg=[float(v) for v in grid_deg],
        pseudospectrum_db=[float(v) for v in spectrum_db],
        peak_angles_deg=peak_angles,
        peak_errors_deg=errors
    )


def evaluate_beams(scenario: Scenario, beams: BeamformerSet, config: Optional[MusicConfig] = None) -> MusicResult:
    """Simulate echoes for a design and run MUSIC against the scenario's targets."""
    config = config or MusicConfig()
    seed = scenario.seed if config.seed is None else config.seed
    snapshots = max(config.snapshots, scenario.n_antennas)
    echoes = simulate_echoes(scenario, beams, snapshots, seed)
    result = music_spectrum(
        echoes,
        scenario.n_targets,
        config.grid_step_deg,
        true_angles_deg=[math.degrees(a) for a in scenario.target_angles],
        spacing_ratio=scenario.geometry.spacing_ratio
    )
    logger.info(f"Detected peaks {['%.2f' % p for p in result.peak_angles_deg]} "
                f"(max error {result.max_error_deg():.3f}°)")
    return result


def spectrum_rows(results: Dict[str, MusicResult]) -> List[Dict[str, float]]:
    """(angle_deg, one spectrum_dB column per named result)."""
    first = next(iter(results.values()))
    return [
        {'angle_deg': angle, **{name: res.pseudospectrum_db[i] for name, res in results.items()}}
        for i, angle in enumerate(first.grid_deg)
    ]


def export_spectrum(results: Dict[str, MusicResult], path: Path) -> Optional[Path]:
    return write_table(spectrum_rows(results), Path(path))
