"""
Optimizer Options
Tolerances and budgets of the alternating optimization and the randomization step.
"""

from pydantic import BaseModel, ConfigDict, Field


class OptimizerOptions(BaseModel):
    """Inner/outer stopping rules, solver settings and randomization settings."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    tol_beams: float = Field(1e-3, gt=0.0, description="relative Frobenius change of W and R ending the inner loop")
    tol_lambda: float = Field(1e-4, gt=0.0, description="change of C_k = 1 + lambda_k required, with outer_tol, to end the outer loop")
    outer_tol: float = Field(1e-4, gt=0.0, description="relative objective change ending the outer loop")
    max_outer: int = Field(50, ge=1)
    max_inner: int = Field(20, ge=1)
    randomization_draws: int = Field(100, ge=0)
    rank_one_ratio_tol: float = Field(1e-4, gt=0.0)
    projection_candidate: bool = True
    feasibility_tol: float = Field(1e-6, gt=0.0)
    ascent_tol: float = Field(1e-6, gt=0.0)
    solver_tol: float = Field(1e-7, gt=0.0)
    solver_max_iter: int = Field(400, ge=1)
    seed: int = Field(0, ge=0)
