"""
Secrecy Metrics
SINR of the communication users, eavesdropper SNR at every target and the
worst-case semantic secrecy rate.
"""

import math
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from channel.array_channel import BeamformerSet, Scenario, cu_channel, quad_form, target_channel
from metrics.semantic_metrics import semantic_rate


class RateReport(BaseModel):
    """Per-user SINR, eavesdropper SNR grid (K×L), semantic rates and clamped SSR."""
    model_config = ConfigDict(frozen=True)

    per_user_sinr: List[float]
    eav_snr: List[List[float]]
    semantic_rates: List[float]
    eav_rates: List[List[float]]
    ssr: List[float]

    @model_validator(mode='after')
    def _finite_non_negative(self) -> "RateReport":
        values = self.per_user_sinr + self.semantic_rates + self.ssr
        values += [v for row in self.eav_snr + self.eav_rates for v in row]
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValueError("rate report entries must be finite and non-negative")
        k = len(self.per_user_sinr)
        if len(self.eav_snr) != k or len(self.eav_rates) != k:
            raise ValueError("eavesdropper grids must have one row per user")
        return self

    @property
    def sum_ssr(self) -> float:
        return float(sum(self.ssr))

    def max_eav_snr(self, k: int) -> float:
        return max(self.eav_snr[k]) if self.eav_snr[k] else 0.0


def cu_sinr(scenario: Scenario, beams: BeamformerSet, k: int) -> float:
    """γ_k: desired power over inter-user interference, sensing interference and noise."""
    h = cu_channel(scenario, k)
    desired = quad_form(h, beams.w_mats[k])
    total_w = quad_form(h, beams.sum_w())
    sensing = quad_form(h, beams.sum_r())
    denominator = (total_w - desired) + sensing + scenario.sigma2_c
    return max(desired, 0.0) / max(denominator, scenario.sigma2_c)


def eav_snr(scenario: Scenario, beams: BeamformerSet, k: int, l: int) -> float:
    """Γ_{l|k}: leakage of W_k toward target l over the sum of all sensing matrices plus noise."""
    h = target_channel(scenario, l)
    leaked = quad_form(h, beams.w_mats[k])
    sensing = quad_form(h, beams.sum_r())
    return max(leaked, 0.0) / max(sensing + scenario.sigma2_r, scenario.sigma2_r)


def _rate_gap(sinr: float, worst_eav: float) -> float:
    return math.log2(1.0 + sinr) - math.log2(1.0 + worst_eav)


def worst_case_ssr(scenario: Scenario, beams: BeamformerSet, rhos: Sequence[float]) -> RateReport:
    """
    Evaluate every rate of the secrecy model at an operating point.

    Args:
        scenario: Experiment scenario
        beams: Beamformer set
        rhos: Extraction ratio per user

    Returns:
        RateReport with SSR_k = max(0, S_k - max_l S_{l|k})
    """
    sinrs, snr_grid, rates, eav_grid, ssr = [], [], [], [], []
    for k in range(scenario.n_users):
        sinr = cu_sinr(scenario, beams, k)
        row = [eav_snr(scenario, beams, k, l) for l in range(scenario.n_targets)]
        rate = semantic_rate(rhos[k], sinr)
        eav_rates = [semantic_rate(rhos[k], g) for g in row]
        sinrs.append(sinr)
        snr_grid.append(row)
        rates.append(rate)
        eav_grid.append(eav_rates)
        ssr.append(max(0.0, rate - max(eav_rates, default=0.0)))
    return RateReport(per_user_sinr=sinrs, eav_snr=snr_grid, semantic_rates=rates, eav_rates=eav_grid, ssr=ssr)


def unclamped_objective(scenario: Scenario, beams: BeamformerSet, rhos: Sequence[float]) -> float:
    """Σ_k (1/ρ_k)(log2(1+γ_k) - log2(1+max_l Γ_{l|k})), the objective the optimizer ascends."""
    total = 0.0
    for k in range(scenario.n_users):
        worst = max((eav_snr(scenario, beams, k, l) for l in range(scenario.n_targets)), default=0.0)
        total += _rate_gap(cu_sinr(scenario, beams, k), worst) / rhos[k]
    return float(total)


def sum_ssr(report: RateReport) -> float:
    return report.sum_ssr


def report_rows(report: RateReport, rhos: Sequence[float]) -> List[dict]:
    """Flatten a report into one row per user for CSV output."""
    return [
        {
            'user': k + 1,
            'rho': float(rhos[k]),
            'sinr': report.per_user_sinr[k],
            'max_eav_snr': report.max_eav_snr(k),
            'semantic_rate': report.semantic_rates[k],
            'ssr': report.ssr[k]
        }
        for k in range(len(report.ssr))
    ]


def eav_snr_matrix(scenario: Scenario, beams: BeamformerSet) -> np.ndarray:
    """K×L array of Γ_{l|k}."""
    return np.array([
        [eav_snr(scenario, beams, k, l) for l in range(scenario.n_targets)]
        for k in range(scenario.n_users)
    ]).reshape(scenario.n_users, scenario.n_targets)
