"""
Gaussian Randomization
Recovers rank-one communication beams from the relaxed (SDR) solution.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict

from channel.array_channel import BeamformerSet, Scenario, cu_channel, quad_form
from design.options import OptimizerOptions
from design.sensing_reference import mismatch
from metrics.secrecy_metrics import cu_sinr, unclamped_objective
from metrics.semantic_metrics import computation_power
from utils.errors import InfeasibleError
from utils.logging_utils import get_logger

logger = get_logger("RANDOMIZATION")


class RandomizationResult(BaseModel):
    """Rank-one beams, objective ratio against the SDR value and the winning candidate type."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    beams: BeamformerSet
    ratio: float
    objective: float
    sdr_objective: float
    source: str
    feasible_draws: int


def principal_component(mat: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Principal eigenvector scaled by sqrt(λ1), plus λ1 and λ2."""
    eig, vecs = scipy.linalg.eigh(mat)
    second = float(eig[-2]) if eig.size > 1 else 0.0
    return math.sqrt(max(float(eig[-1]), 0.0)) * vecs[:, -1], float(eig[-1]), second


def _factor(mat: np.ndarray) -> np.ndarray:
    """F with F F^H = W (PSD square root factor)."""
    eig, vecs = scipy.linalg.eigh(mat)
    return vecs * np.sqrt(np.maximum(eig, 0.0))


def is_feasible(
    beams: BeamformerSet,
    scenario: Scenario,
    ref_cov: np.ndarray,
    rhos: Sequence[float],
    tol: float = 1e-6
) -> bool:
    """
    Feasibility for the beamforming problem with λ at its tight value:
    semantic-rate QoS, total power and mismatch, each within tol.
    """
    for k in range(scenario.n_users):
        rate = math.log2(1.0 + cu_sinr(scenario, beams, k)) / rhos[k]
        if rate < scenario.qos_floor - tol:
            return False
    power = computation_power(scenario.comp_coeff, rhos) + beams.total_power()
    if power > scenario.power_budget_mw + tol:
        return False
    return mismatch(ref_cov, beams) <= scenario.mismatch_budget + tol


def projection_candidate(sdr_beams: BeamformerSet, scenario: Scenario) -> BeamformerSet:
    """
    w_k = W_k h_k / sqrt(h_k^H W_k h_k); the PSD remainder W_k - w_k w_k^H moves
    into the sensing matrices, so Σ W + Σ R, every CU's SINR and the power are
    unchanged while eavesdropper SNRs can only drop.
    """
    vectors = []
    remainder = np.zeros_like(sdr_beams.w_mats[0])
    for k, w_mat in enumerate(sdr_beams.w_mats):
        h = cu_channel(scenario, k)
        seen = quad_form(h, w_mat)
        if seen <= 0:
            vec, _, _ = principal_component(w_mat)
        else:
            vec = (w_mat @ h) / math.sqrt(seen)
        vectors.append(vec)
        rest = w_mat - np.outer(vec, np.conj(vec))
        eig, basis = scipy.linalg.eigh(0.5 * (rest + rest.conj().T))
        remainder = remainder + (basis * np.maximum(eig, 0.0)) @ basis.conj().T
    share = remainder / max(sdr_beams.n_targets, 1)
    return BeamformerSet.from_vectors(vectors, [r + share for r in sdr_beams.r_mats])


def gaussian_randomization(
    sdr_beams: BeamformerSet,
    scenario: Scenario,
    ref_cov: np.ndarray,
    draws: int,
    options: Optional[OptimizerOptions] = None,
    rhos: Optional[Sequence[float]] = None
) -> RandomizationResult:
    """
    Pick rank-one beams from Gaussian draws around the SDR solution.

    Args:
        sdr_beams: Relaxed beamformers
        scenario: Experiment scenario
        ref_cov: Sensing reference covariance
        draws: Number of Gaussian candidate sets
        options: Rank-one tolerance, feasibility tolerance, seed, projection candidate switch
        rhos: Extraction ratios (default all 1)

    Returns:
        RandomizationResult; ratio = randomized / SDR objective clipped to [0, 1]

    Raises:
        InfeasibleError: neither a draw nor the principal eigenvectors are feasible
    """
    options = options or OptimizerOptions()
    rhos = list(rhos) if rhos is not None else [1.0] * scenario.n_users
    tol = options.feasibility_tol
    sdr_objective = unclamped_objective(scenario, sdr_beams, rhos)

    principal = [principal_component(w) for w in sdr_beams.w_mats]
    rank_one = [lam1 <= 0 or lam2 <= options.rank_one_ratio_tol * lam1 for _, lam1, lam2 in principal]
    principal_beams = BeamformerSet.from_vectors([vec for vec, _, _ in principal], sdr_beams.r_mats)

    candidates: List[Tuple[str, BeamformerSet]] = []
    if all(rank_one):
        candidates.append(('principal', principal_beams))
    else:
        rng = np.random.default_rng([options.seed, 7])
        factors = [_factor(w) for w in sdr_beams.w_mats]
        traces = [float(np.real(np.trace(w))) for w in sdr_beams.w_mats]
        n = sdr_beams.n_antennas
        for _ in range(draws):
            vectors = []
            for k, factor in enumerate(factors):
                xi = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
                if rank_one[k]:
                    vectors.append(principal[k][0])
                    continue
                vec = factor @ xi
                norm_sq = float(np.real(np.vdot(vec, vec)))
                vectors.append(vec * math.sqrt(traces[k] / norm_sq) if norm_sq > 0 else principal[k][0])
            candidates.append(('gaussian', BeamformerSet.from_vectors(vectors, sdr_beams.r_mats)))
    if options.projection_candidate:
        candidates.append(('projection', projection_candidate(sdr_beams, scenario)))

    best: Optional[Tuple[str, BeamformerSet]] = None
    best_value = -math.inf
    feasible = 0
    for source, beams in candidates:
        if not is_feasible(beams, scenario, ref_cov, rhos, tol):
            continue
        feasible += 1
        value = unclamped_objective(scenario, beams, rhos)
        if value > best_value:
            best, best_value = (source, beams), value

    if best is None:
        logger.warning("⚠️ No feasible randomized candidate, falling back to principal eigenvectors")
        if not is_feasible(principal_beams, scenario, ref_cov, rhos, tol):
            raise InfeasibleError(
                "Gaussian randomization found no feasible rank-one beams",
                stage='randomization',
                binding_constraint='qos',
                details={'draws': draws}
            )
        best, best_value = ('principal_fallback', principal_beams), unclamped_objective(scenario, principal_beams, rhos)

    if sdr_objective > 0:
        ratio = float(np.clip(best_value / sdr_objective, 0.0, 1.0))
    else:
        ratio = 1.0 if best_value >= sdr_objective - 1e-12 else 0.0
    logger.debug(f"{feasible}/{len(candidates)} feasible candidates, best={best[0]} ratio={ratio:.4f}")
    return RandomizationResult(
        beams=best[1],
        ratio=ratio,
        objective=best_value,
        sdr_objective=sdr_objective,
        source=best[0],
        feasible_draws=feasible
    )
