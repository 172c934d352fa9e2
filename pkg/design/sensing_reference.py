"""
Sensing Reference Design
Sensing-only beampattern design: maximize the minimum gap between the target
beams and every sidelobe angle under a power budget and (banded) zero
cross-correlation between target directions. The result R_d anchors the
mismatch constraint of the joint design.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.array_channel import (
    ArrayGeometry,
    BeamformerSet,
    Scenario,
    angle_grid,
    beampattern,
    cross_correlation,
    outer,
    steering_matrix,
    steering_vector,
    transmit_covariance,
)
from solver.conic_problem import AffineConstraint, ConicProblem, LinearForm, hermitian_part
from solver.conic_solver import solve
from utils.errors import InfeasibleError
from utils.logging_utils import get_logger
from utils.results_io import write_matrix_csv, write_table

logger = get_logger("SENSING REF")

EPIGRAPH = 0
CROSSCORR_FACETS = 8


class SensingConfig(BaseModel):
    """Sidelobe region, grid and cross-correlation tolerance for the reference design."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    sidelobe_margin_deg: float = Field(5.0, gt=0.0)
    grid_step_deg: float = Field(1.0, gt=0.0, le=90.0)
    crosscorr_tol: Optional[float] = Field(None, gt=0.0)
    solver_tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(400, ge=1)

    def tolerance_for(self, power_budget_mw: float) -> float:
        """ε for the cross-correlation band (default 1e-6·P_t)."""
        return self.crosscorr_tol if self.crosscorr_tol is not None else 1e-6 * power_budget_mw


class SensingReference(BaseModel):
    """Reference covariance R_d and the achieved minimum mainlobe-to-sidelobe gap t."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    cov: np.ndarray
    t: float
    status: str
    iterations: int
    sidelobe_deg: List[float]
    max_crosscorr: float


def sidelobe_region(scenario: Scenario, config: SensingConfig) -> np.ndarray:
    """
    Ω: grid angles at least sidelobe_margin_deg away from every target (radians).

    Raises:
        InfeasibleError: targets are not separated by more than the grid step, or Ω is empty
    """
    targets_deg = np.rad2deg(np.asarray(scenario.target_angles, dtype=float))
    if targets_deg.size > 1:
        gaps = np.diff(np.sort(targets_deg))
        if np.min(gaps) <= config.grid_step_deg:
            raise InfeasibleError(
                f"Targets closer than the grid resolution ({np.min(gaps):.3f}° ≤ {config.grid_step_deg}°)",
                stage='sensing_reference',
                binding_constraint='target_separation'
            )
    grid = angle_grid(config.grid_step_deg)
    grid_deg = np.rad2deg(grid)
    distance = np.min(np.abs(grid_deg[:, None] - targets_deg[None, :]), axis=1)
    region = grid[distance >= config.sidelobe_margin_deg - 1e-9]
    if region.size == 0:
        raise InfeasibleError(
            "Sidelobe region is empty: every grid angle lies within the margin of a target",
            stage='sensing_reference',
            binding_constraint='sidelobe_region'
        )
    return region


def _start_covariance(geometry: ArrayGeometry, target_angles: List[float], power_mw: float) -> np.ndarray:
    """Positive definite start with zero cross-correlation between targets and trace P/2."""
    steer = steering_matrix(geometry, target_angles)
    gram_inv = np.linalg.inv(steer.conj().T @ steer)
    dual = steer @ gram_inv
    focused = dual @ dual.conj().T
    start = 0.9 * focused / np.real(np.trace(focused))
    n = geometry.n_antennas
    if len(target_angles) < n:
        orth = np.eye(n) - steer @ gram_inv @ steer.conj().T
        orth = hermitian_part(orth)
        start = start + 0.1 * orth / np.real(np.trace(orth))
    else:
        start = start / 0.9
    return hermitian_part(0.5 * power_mw * start)


def build_reference_problem(scenario: Scenario, config: SensingConfig, power_mw: Optional[float] = None) -> ConicProblem:
    """
    Conic form of the reference design: one N×N block R and the epigraph scalar t.

        maximize t
        s.t. t - (p(θ_l) - p(θ_m)) ≤ 0         for every target l and θ_m ∈ Ω
             Re(e^{-iφ_j} a^H(θ_l) R a(θ_l')) ≤ ε·cos(π/M)   for l < l', j < M
             tr(R) ≤ P_t
    """
    power_mw = scenario.power_budget_mw if power_mw is None else power_mw
    geometry = scenario.geometry
    region = sidelobe_region(scenario, config)
    eps = config.tolerance_for(power_mw)
    n = scenario.n_antennas

    target_outer = [outer(steering_vector(geometry, angle)) for angle in scenario.target_angles]
    side_steer = steering_matrix(geometry, region)
    constraints = []
    for l, a_outer in enumerate(target_outer):
        for m in range(side_steer.shape[1]):
            side_outer = outer(side_steer[:, m])
            constraints.append(AffineConstraint(
                form=LinearForm(blocks={0: side_outer - a_outer}, scalars={EPIGRAPH: 1.0}),
                bound=0.0,
                name=f"sidelobe_gap[l={l},m={m}]"
            ))

    for l in range(scenario.n_targets):
        for lp in range(l + 1, scenario.n_targets):
            a_l = steering_vector(geometry, scenario.target_angles[l])
            a_lp = steering_vector(geometry, scenario.target_angles[lp])
            # a_l^H R a_l' = tr(C R); the M-gon with apothem ε·cos(π/M) sits inside the ε disc
            corr = np.outer(a_lp, np.conj(a_l))
            for j in range(CROSSCORR_FACETS):
                phase = np.exp(-2j * np.pi * j / CROSSCORR_FACETS)
                constraints.append(AffineConstraint(
                    form=LinearForm(blocks={0: hermitian_part(phase * corr)}),
                    bound=eps * math.cos(math.pi / CROSSCORR_FACETS),
                    name=f"crosscorr[{l},{lp}]facet{j}"
                ))

    constraints.append(AffineConstraint(form=LinearForm(blocks={0: np.eye(n)}), bound=power_mw, name='power'))

    return ConicProblem(
        block_sizes=[n],
        n_scalars=1,
        objective=LinearForm(scalars={EPIGRAPH: 1.0}),
        affine_ineqs=constraints,
        initial_blocks=[_start_covariance(geometry, scenario.target_angles, power_mw)],
        block_names=['R_d']
    )


def max_cross_correlation(geometry: ArrayGeometry, cov: np.ndarray, target_angles: List[float]) -> float:
    """Largest |a^H(θ_l) R a(θ_l')| over distinct target pairs."""
    values = [
        abs(cross_correlation(geometry, cov, target_angles[l], target_angles[lp]))
        for l in range(len(target_angles))
        for lp in range(len(target_angles))
        if l != lp
    ]
    return float(max(values, default=0.0))


def design_reference_cov(scenario: Scenario, config: Optional[SensingConfig] = None, trace_path: Optional[Path] = None) -> SensingReference:
    """
    Solve the sensing-only design for R_d.

    Args:
        scenario: Scenario (array, targets, power budget)
        config: Sidelobe/grid/tolerance settings
        trace_path: Optional CSV destination for solver stage rows

    Returns:
        SensingReference with R_d, the achieved t and diagnostics

    Raises:
        InfeasibleError: infeasible geometry or solver infeasibility
    """
    config = config or SensingConfig()
    logger.info(f"Designing reference covariance (N={scenario.n_antennas}, L={scenario.n_targets}, "
                f"P_t={scenario.power_budget_mw:.4g} mW)")
    problem = build_reference_problem(scenario, config)
    solution = solve(problem, tol=config.solver_tol, max_iter=config.max_iter, trace_path=trace_path)
    if solution.status == 'infeasible':
        raise InfeasibleError(
            "Sensing reference design is infeasible",
            stage='sensing_reference',
            binding_constraint=solution.binding_constraint
        )
    cov = hermitian_part(solution.block_values[0])
    region = sidelobe_region(scenario, config)
    crosscorr = max_cross_correlation(scenario.geometry, cov, scenario.target_angles)
    t = float(solution.scalar_values[EPIGRAPH])
    if solution.status != 'optimal':
        logger.warning(f"⚠️ Reference design stopped with status {solution.status} (t={t:.6e})")
    else:
        logger.info(f"✅ Reference design done: t={t:.6e} mW after {solution.iterations} Newton steps")
    return SensingReference(
        cov=cov,
        t=t,
        status=solution.status,
        iterations=solution.iterations,
        sidelobe_deg=[float(v) for v in np.rad2deg(region)],
        max_crosscorr=crosscorr
    )


def mismatch(ref_cov: np.ndarray, beams: BeamformerSet) -> float:
    """‖R_d - (Σ W_k + Σ R_l)‖_F²."""
    diff = np.asarray(ref_cov, dtype=complex) - transmit_covariance(beams)
    return float(np.sum(np.abs(diff) ** 2))


def beampattern_table(geometry: ArrayGeometry, covariances: Dict[str, np.ndarray], step_deg: float = 1.0) -> List[Dict[str, float]]:
    """Rows of (angle_deg, one column per covariance) for plotting."""
    grid = angle_grid(step_deg)
    patterns = {name: beampattern(geometry, cov, grid) for name, cov in covariances.items()}
    return [
        {'angle_deg': float(np.rad2deg(angle)), **{name: float(values[i]) for name, values in patterns.items()}}
        for i, angle in enumerate(grid)
    ]


def export_reference(reference: SensingReference, geometry: ArrayGeometry, out_dir: Path, run_id: str = 'sensing_ref') -> Dict[str, Optional[str]]:
    """Write R_d (real/imag CSV) and its beampattern."""
    out_dir = Path(out_dir)
    matrix_path = write_matrix_csv({'R_d': reference.cov}, out_dir / f"{run_id}_cov.csv")
    pattern_path = write_table(beampattern_table(geometry, {'R_d': reference.cov}), out_dir / f"{run_id}_beampattern.csv")
    return {
        'cov': str(matrix_path) if matrix_path else None,
        'beampattern': str(pattern_path) if pattern_path else None
    }


def target_gain_margin(reference: SensingReference, geometry: ArrayGeometry, target_angles: List[float]) -> float:
    """min_l p(θ_l) - max_{Ω} p(θ_m), recomputed from R_d."""
    peaks = beampattern(geometry, reference.cov, target_angles)
    side = beampattern(geometry, reference.cov, np.deg2rad(reference.sidelobe_deg))
    return float(np.min(peaks) - np.max(side)) if side.size else math.inf
