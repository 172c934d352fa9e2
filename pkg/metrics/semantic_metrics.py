"""
Semantic Metrics
BLEU model of the semantic extractor, extraction-ratio lower bound, semantic
rate and the computation/transmit power ledger.

All logarithms inside the BLEU expression are natural logarithms, so the
lower bound on the extraction ratio inverts the BLEU model exactly.
"""

import math
from typing import List, Sequence

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import DomainError

DEFAULT_N_GRAMS = 4
DEFAULT_PRECISIONS = (0.8, 0.9)


class SemanticProfile(BaseModel):
    """Per-user BLEU parameters and the shared quality floor Q."""
    model_config = ConfigDict(frozen=True)

    n_grams: int = Field(DEFAULT_N_GRAMS, ge=1)
    weights: List[float]
    precisions: List[float]
    quality_floor: float = Field(0.5, gt=0.0, le=1.0)

    @field_validator('weights')
    @classmethod
    def _weights_valid(cls, weights: List[float]) -> List[float]:
        if any(w < 0 for w in weights):
            raise ValueError("n-gram weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError(f"n-gram weights must sum to 1 (got {sum(weights)!r})")
        return weights

    @field_validator('precisions')
    @classmethod
    def _precisions_valid(cls, precisions: List[float]) -> List[float]:
        if any(not (0.0 < p <= 1.0) for p in precisions):
            raise ValueError("n-gram precisions must lie in (0, 1]")
        return precisions

    @model_validator(mode='after')
    def _lengths_match(self) -> "SemanticProfile":
        if len(self.weights) != self.n_grams or len(self.precisions) != self.n_grams:
            raise ValueError(f"expected {self.n_grams} weights and precisions")
        return self

    @property
    def log_precision(self) -> float:
        """Σ_g w_g·ln p_g."""
        return float(sum(w * math.log(p) for w, p in zip(self.weights, self.precisions)))

    @property
    def is_feasible(self) -> bool:
        """ln Q ≤ Σ w ln p, i.e. the quality floor is reachable at rho = 1."""
        return math.log(self.quality_floor) <= self.log_precision + 1e-15


class PowerLedger(BaseModel):
    """Computation power, communication-and-sensing power and the budget (mW)."""
    model_config = ConfigDict(frozen=True)

    comp_mw: float = Field(ge=0.0)
    cands_mw: float = Field(ge=0.0)
    budget_mw: float

    @property
    def total_mw(self) -> float:
        return self.comp_mw + self.cands_mw


def default_profiles(n_users: int, quality_floor: float = 0.5) -> List[SemanticProfile]:
    """
    Default profiles: 4-grams with equal weights; user precisions cycle 0.8, 0.9.

    User 1 therefore has the larger extraction-ratio lower bound (it is the
    less capable decoder).
    """
    weight = 1.0 / DEFAULT_N_GRAMS
    return [
        SemanticProfile(
            n_grams=DEFAULT_N_GRAMS,
            weights=[weight] * DEFAULT_N_GRAMS,
            precisions=[DEFAULT_PRECISIONS[k % len(DEFAULT_PRECISIONS)]] * DEFAULT_N_GRAMS,
            quality_floor=quality_floor
        )
        for k in range(n_users)
    ]


def brevity_penalty(rho: float) -> float:
    """BP factor: e^{1 - 1/rho} when the extracted message is not longer than the original."""
    _check_rho(rho)
    if rho > 1.0:
        return 1.0
    return math.exp(1.0 - 1.0 / rho)


def bleu(profile: SemanticProfile, rho: float) -> float:
    """BLEU score of a user at extraction ratio rho."""
    return brevity_penalty(rho) * math.exp(profile.log_precision)


def rho_lower_bound(profile: SemanticProfile) -> float:
    """
    Smallest extraction ratio meeting the quality floor.

    Args:
        profile: User BLEU profile

    Returns:
        1 / (1 - ln Q + Σ w ln p), in (0, 1]

    Raises:
        DomainError: ln Q exceeds Σ w ln p (floor unreachable even without compression)
    """
    log_q = math.log(profile.quality_floor)
    if not profile.is_feasible:
        raise DomainError(
            f"Quality floor Q={profile.quality_floor} is unreachable: ln Q = {log_q:.6f} exceeds "
            f"Σ w·ln p = {profile.log_precision:.6f}; lower Q or raise the n-gram precisions"
        )
    denominator = 1.0 - log_q + profile.log_precision
    return min(1.0, 1.0 / denominator)


def semantic_rate(rho: float, sinr: float) -> float:
    """Semantic rate (1/rho)·log2(1 + sinr) in bits/s/Hz."""
    _check_rho(rho)
    if not sinr >= 0.0:
        raise DomainError(f"SINR must be non-negative (got {sinr!r})")
    return math.log2(1.0 + sinr) / rho


def computation_power(coeff_f: float, rhos: Sequence[float]) -> float:
    """Computation power Σ_k F·ln(1/rho_k) in mW."""
    for rho in rhos:
        _check_rho(rho)
    return float(sum(coeff_f * math.log(1.0 / rho) for rho in rhos))


def ledger_for(rhos: Sequence[float], cands_mw: float, coeff_f: float, budget_mw: float) -> PowerLedger:
    """Build the power ledger of an operating point."""
    return PowerLedger(
        comp_mw=max(computation_power(coeff_f, rhos), 0.0),
        cands_mw=max(cands_mw, 0.0),
        budget_mw=budget_mw
    )


def power_check(ledger: PowerLedger) -> bool:
    """True iff computation plus radiated power fits the budget."""
    return ledger.comp_mw + ledger.cands_mw <= ledger.budget_mw + 1e-9


def _check_rho(rho: float) -> None:
    if not rho > 0.0:
        raise DomainError(f"Extraction ratio must be positive (got {rho!r})")
