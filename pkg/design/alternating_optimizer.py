"""
Alternating Optimizer
Joint beamforming, eavesdropper-SNR bound and extraction-ratio design.

Each outer iteration runs three steps on the unclamped secrecy objective
Σ_k (1/ρ_k)(log2 A_k - log2 B_k - log2(1 + λ_k)):
    1. beamforming: SDR + first-order surrogate of log2 B_k, re-linearized until W and R settle
    2. λ_k = max_l Γ_{l|k} (closed form)
    3. ρ_k by the dual method on the computation-power budget
and finishes with Gaussian randomization to rank-one communication beams.
"""

import itertools
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from channel.array_channel import BeamformerSet, Scenario, cu_channel, outer, quad_form, target_channel
from design.options import OptimizerOptions
from design.randomization import RandomizationResult, gaussian_randomization
from design.sensing_reference import mismatch
from metrics.secrecy_metrics import RateReport, eav_snr, unclamped_objective, worst_case_ssr
from metrics.semantic_metrics import computation_power, rho_lower_bound
from solver.conic_problem import (
    AffineConstraint,
    ConicProblem,
    FrobBall,
    LinearForm,
    LogConstraint,
    LogTerm,
    hermitian_part,
    linear_combination,
)
from solver.conic_solver import solve
from utils.errors import InfeasibleError, IsscError
from utils.logging_utils import get_logger

logger = get_logger("ALTERNATING OPT")

LN2 = math.log(2.0)
VERTEX_ENUMERATION_LIMIT = 12
BISECTION_STEPS = 200
HINT_RIDGE = 1e-9


class OptimizerState(BaseModel):
    """Iterate of the alternating optimization."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rhos: List[float]
    lambdas: List[float]
    beams: BeamformerSet
    b_points: List[float]
    c_points: List[float]
    objective_history: List[float] = Field(default_factory=list)
    outer_iter: int = 0
    benchmark: bool = False
    converged: bool = False
    ascent_ok: bool = True
    inner_iterations: List[int] = Field(default_factory=list)
    trace: List[Dict[str, Any]] = Field(default_factory=list)
    sdr_beams: Optional[BeamformerSet] = None
    randomization_ratio: Optional[float] = None


def rate_terms(scenario: Scenario, beams: BeamformerSet) -> Tuple[List[float], List[float]]:
    """A_k (all beams + noise) and B_k (all but W_k + noise) seen by every CU."""
    total = beams.sum_w() + beams.sum_r()
    a_terms, b_terms = [], []
    for k in range(scenario.n_users):
        h = cu_channel(scenario, k)
        a = quad_form(h, total) + scenario.sigma2_c
        b = a - quad_form(h, beams.w_mats[k])
        if a <= 0 or b <= 0:
            raise IsscError(f"Non-positive rate term for CU {k}: A={a!r}, B={b!r}")
        a_terms.append(a)
        b_terms.append(b)
    return a_terms, b_terms


def tight_lambdas(scenario: Scenario, beams: BeamformerSet) -> List[float]:
    return [
        max((eav_snr(scenario, beams, k, l) for l in range(scenario.n_targets)), default=0.0)
        for k in range(scenario.n_users)
    ]


def surrogate_objective(state: OptimizerState, scenario: Scenario) -> float:
    """Surrogate with log2 B_k and log2 C_k linearized at (b_points, c_points)."""
    a_terms, b_terms = rate_terms(scenario, state.beams)
    total = 0.0
    for k in range(scenario.n_users):
        b_i, c_i = state.b_points[k], state.c_points[k]
        c = 1.0 + state.lambdas[k]
        value = (
            math.log2(a_terms[k])
            - math.log2(b_i) - (b_terms[k] - b_i) / (b_i * LN2)
            - math.log2(c_i) - (c - c_i) / (c_i * LN2)
        )
        total += value / state.rhos[k]
    return float(total)


def true_objective(state: OptimizerState, scenario: Scenario) -> float:
    """Σ_k (1/ρ_k)(log2 A_k - log2 B_k - log2(1 + λ_k)) at the state's λ."""
    a_terms, b_terms = rate_terms(scenario, state.beams)
    return float(sum(
        (math.log2(a_terms[k]) - math.log2(b_terms[k]) - math.log2(1.0 + state.lambdas[k])) / state.rhos[k]
        for k in range(scenario.n_users)
    ))


def _relative_change(new: Sequence[np.ndarray], old: Sequence[np.ndarray]) -> float:
    if not new:
        return 0.0
    diff = math.sqrt(sum(float(np.sum(np.abs(n - o) ** 2)) for n, o in zip(new, old)))
    scale = math.sqrt(sum(float(np.sum(np.abs(o) ** 2)) for o in old))
    return diff / max(scale, 1e-300)


def initial_state(scenario: Scenario, ref_cov: np.ndarray, benchmark: bool = False) -> OptimizerState:
    """
    Feasible start at ρ = 1.

    W_k = η·R_d H_k R_d / (h_k^H R_d h_k) takes the part of R_d seen by CU k,
    η keeps Σ W_k strictly below R_d and the sensing matrices share the
    remainder, so Σ W + Σ R = R_d (zero mismatch) and the power equals tr(R_d).
    """
    ref_cov = hermitian_part(ref_cov)
    n = scenario.n_antennas
    projections = []
    for k in range(scenario.n_users):
        h = cu_channel(scenario, k)
        seen = ref_cov @ h
        weight = quad_form(h, ref_cov)
        projections.append(outer(seen) / weight if weight > 0 else np.zeros((n, n), dtype=complex))
    total = np.sum(projections, axis=0)
    ridge = 1e-12 * max(float(np.real(np.trace(ref_cov))), 1e-300) * np.eye(n)
    lam_max = float(scipy.linalg.eigvalsh(total, ref_cov + ridge)[-1])
    eta = min(1.0, 0.95 / lam_max) if lam_max > 0 else 1.0

    w_mats = [eta * p for p in projections]
    remainder = hermitian_part(ref_cov - eta * total)
    eig, vecs = scipy.linalg.eigh(remainder)
    remainder = (vecs * np.maximum(eig, 0.0)) @ vecs.conj().T
    r_mats = [hermitian_part(remainder / scenario.n_targets) for _ in range(scenario.n_targets)]
    beams = BeamformerSet(w_mats=w_mats, r_mats=r_mats)

    rhos = [1.0] * scenario.n_users
    lambdas = tight_lambdas(scenario, beams)
    _, b_terms = rate_terms(scenario, beams)
    state = OptimizerState(
        rhos=rhos,
        lambdas=lambdas,
        beams=beams,
        b_points=b_terms,
        c_points=[1.0 + lam for lam in lambdas],
        benchmark=benchmark
    )
    logger.debug(f"initial state: eta={eta:.4f}, objective={true_objective(state, scenario):.6e}")
    return state


def _user_forms(scenario: Scenario, k: int) -> Tuple[LinearForm, LinearForm]:
    """A_k and B_k as linear forms over the blocks [W_1..W_K, R_1..R_L]."""
    h_outer = outer(cu_channel(scenario, k))
    n_blocks = scenario.n_users + scenario.n_targets
    a_form = LinearForm(blocks={b: h_outer for b in range(n_blocks)}, constant=scenario.sigma2_c)
    b_form = LinearForm(blocks={b: h_outer for b in range(n_blocks) if b != k}, constant=scenario.sigma2_c)
    return a_form, b_form


def build_beamforming_problem(state: OptimizerState, scenario: Scenario, ref_cov: np.ndarray) -> ConicProblem:
    """
    Conic form of the beamforming step at fixed ρ and λ, linearized at b_points.

    Raises:
        InfeasibleError: computation power alone exhausts the budget
    """
    k_users, l_targets, n = scenario.n_users, scenario.n_targets, scenario.n_antennas
    n_blocks = k_users + l_targets
    p_comp = computation_power(scenario.comp_coeff, state.rhos)
    radiated_budget = scenario.power_budget_mw - p_comp
    if radiated_budget <= 0:
        raise InfeasibleError(
            f"Computation power {p_comp:.4g} mW exhausts the budget {scenario.power_budget_mw:.4g} mW",
            stage='step1_beamforming',
            binding_constraint='power'
        )

    log_terms, qos, objective_parts, objective_weights = [], [], [], []
    constant = 0.0
    for k in range(k_users):
        a_form, b_form = _user_forms(scenario, k)
        inv_rho = 1.0 / state.rhos[k]
        b_i = state.b_points[k]
        log_terms.append(LogTerm(weight=inv_rho / LN2, form=a_form))
        objective_parts.append(b_form)
        objective_weights.append(-inv_rho / (b_i * LN2))
        constant += inv_rho * (-math.log2(b_i) + 1.0 / LN2 - math.log2(state.c_points[k]))
        linearized = b_form.scaled(-1.0 / (b_i * LN2))
        qos.append(LogConstraint(
            weight=1.0 / LN2,
            log_form=a_form,
            linear_form=LinearForm(
                blocks=linearized.blocks,
                constant=linearized.constant - math.log2(b_i) + 1.0 / LN2
            ),
            bound=state.rhos[k] * scenario.qos_floor,
            name=f"qos[{k}]"
        ))
    linear = linear_combination(objective_parts, objective_weights)
    objective = LinearForm(blocks=linear.blocks, constant=linear.constant + constant)

    affine = []
    for k in range(k_users):
        lam = state.lambdas[k]
        for l in range(l_targets):
            g_outer = outer(target_channel(scenario, l))
            blocks = {k: g_outer}
            for lp in range(l_targets):
                blocks[k_users + lp] = -lam * g_outer
            affine.append(AffineConstraint(
                form=LinearForm(blocks=blocks),
                bound=lam * scenario.sigma2_r,
                name=f"eavesdropper[{k},{l}]"
            ))
    affine.append(AffineConstraint(
        form=LinearForm(blocks={b: np.eye(n) for b in range(n_blocks)}),
        bound=radiated_budget,
        name='power'
    ))

    ridge = HINT_RIDGE * scenario.power_budget_mw / n * np.eye(n)
    return ConicProblem(
        block_sizes=[n] * n_blocks,
        objective=objective,
        log_terms=log_terms,
        affine_ineqs=affine,
        log_ineqs=qos,
        frob_ball=FrobBall(
            center=ref_cov,
            block_weights={b: 1.0 for b in range(n_blocks)},
            radius_sq=scenario.mismatch_budget,
            name='mismatch'
        ),
        initial_blocks=[m + ridge for m in state.beams.blocks()],
        block_names=[f"W_{k + 1}" for k in range(k_users)] + [f"R_{l + 1}" for l in range(l_targets)]
    )


def _beams_from_blocks(blocks: Sequence[np.ndarray], n_users: int) -> BeamformerSet:
    cleaned = []
    for block in blocks:
        eig, vecs = scipy.linalg.eigh(hermitian_part(block))
        cleaned.append((vecs * np.maximum(eig, 0.0)) @ vecs.conj().T)
    return BeamformerSet(w_mats=cleaned[:n_users], r_mats=cleaned[n_users:])


def step1_beamforming(
    state: OptimizerState,
    scenario: Scenario,
    ref_cov: np.ndarray,
    options: Optional[OptimizerOptions] = None
) -> BeamformerSet:
    """
    Solve the SDR beamforming subproblem and re-linearize until W and R settle.

    Returns:
        BeamformerSet whose surrogate value is not below the starting one

    Raises:
        InfeasibleError: the subproblem has no strictly feasible point
    """
    beams, _ = _beamforming_loop(state, scenario, hermitian_part(ref_cov), options or OptimizerOptions())
    return beams


def _beamforming_loop(
    state: OptimizerState,
    scenario: Scenario,
    ref_cov: np.ndarray,
    options: OptimizerOptions
) -> Tuple[BeamformerSet, int]:
    current = state
    inner = 0
    for inner in range(1, options.max_inner + 1):
        problem = build_beamforming_problem(current, scenario, ref_cov)
        try:
            solution = solve(problem, tol=options.solver_tol, max_iter=options.solver_max_iter)
        except InfeasibleError as e:
            raise InfeasibleError(
                f"Beamforming subproblem infeasible: {e}",
                stage='step1_beamforming',
                binding_constraint=e.binding_constraint,
                details=e.details
            ) from e
        candidate = _beams_from_blocks(solution.block_values, scenario.n_users)
        before = surrogate_objective(current, scenario)
        after = surrogate_objective(current.model_copy(update={'beams': candidate}), scenario)
        if after < before:
            logger.debug(f"inner {inner}: surrogate did not improve ({after:.9e} < {before:.9e}), keeping beams")
            break
        w_change = _relative_change(candidate.w_mats, current.beams.w_mats)
        r_change = _relative_change(candidate.r_mats, current.beams.r_mats)
        _, b_terms = rate_terms(scenario, candidate)
        current = current.model_copy(update={'beams': candidate, 'b_points': b_terms})
        logger.debug(
            f"inner {inner}: surrogate {before:.9e} -> {after:.9e}, dW={w_change:.2e}, dR={r_change:.2e}, "
            f"status={solution.status}"
        )
        if w_change <= options.tol_beams and r_change <= options.tol_beams:
            break
    return current.beams, inner


def step2_lambda(state: OptimizerState, scenario: Scenario) -> List[float]:
    """λ_k = max_l Γ_{l|k}: the objective decreases in λ_k, so the smallest feasible value is optimal."""
    return tight_lambdas(scenario, state.beams)


def _step3_inputs(state: OptimizerState, scenario: Scenario) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    a_terms, b_terms = rate_terms(scenario, state.beams)
    gaps = np.array([
        math.log2(a_terms[k]) - math.log2(b_terms[k]) - math.log2(1.0 + state.lambdas[k])
        for k in range(scenario.n_users)
    ])
    lower = np.array([rho_lower_bound(p) for p in scenario.semantic_profiles])
    upper = np.ones(scenario.n_users)
    if scenario.qos_floor > 0:
        rates = np.array([math.log2(a_terms[k]) - math.log2(b_terms[k]) for k in range(scenario.n_users)])
        upper = np.minimum(upper, rates / scenario.qos_floor)
    for k in range(scenario.n_users):
        if upper[k] < lower[k] - 1e-12:
            raise InfeasibleError(
                f"Extraction-ratio box of CU {k} is empty: QoS bound {upper[k]:.6f} < BLEU bound {lower[k]:.6f}",
                stage='step3_rho',
                binding_constraint=f"qos[{k}]",
                details={'user': k}
            )
    upper = np.maximum(upper, lower)
    budget = scenario.power_budget_mw - state.beams.total_power()
    return gaps, lower, upper, budget


def _step3_value(gaps: np.ndarray, rhos: np.ndarray) -> float:
    return float(np.sum(gaps / rhos))


def _dual_bisection(gaps, lower, upper, extra, coeff_f) -> np.ndarray:
    """Endpoint selection by bisection on the power multiplier, then fractional primal recovery."""
    rhos = upper.copy()
    active = (gaps > 0) & (upper > lower)
    if not np.any(active):
        return rhos
    caps = np.where(active, coeff_f * np.log(upper / lower), 0.0)
    if coeff_f <= 0 or float(np.sum(caps)) <= extra + 1e-12:
        rhos[active] = lower[active]
        return rhos

    # user k sits at its lower limit while μ ≤ r_k
    ratios = np.where(active, gaps * (1.0 / lower - 1.0 / upper) / np.where(caps > 0, caps, 1.0), -np.inf)
    lo_mu, hi_mu = 0.0, float(np.max(ratios))
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo_mu + hi_mu)
        if float(np.sum(caps[ratios > mid])) <= extra:
            hi_mu = mid
        else:
            lo_mu = mid
    at_lower = ratios > hi_mu
    rhos[at_lower] = lower[at_lower]
    remaining = extra - float(np.sum(caps[at_lower]))
    candidates = [k for k in np.argsort(-ratios) if active[k] and not at_lower[k]]
    if candidates and remaining > 0:
        k = candidates[0]
        rhos[k] = max(lower[k], upper[k] * math.exp(-remaining / coeff_f))
    return rhos


def _vertex_enumeration(gaps, lower, upper, extra, coeff_f) -> Optional[np.ndarray]:
    """Exact maximizer over the vertices of box ∩ budget in u = ln(1/ρ); None when too many users."""
    active = [k for k in range(len(gaps)) if gaps[k] > 0 and upper[k] > lower[k]]
    if len(active) > VERTEX_ENUMERATION_LIMIT or coeff_f <= 0:
        return None
    caps = {k: coeff_f * math.log(upper[k] / lower[k]) for k in active}
    best, best_value = None, -math.inf
    for size in range(len(active) + 1):
        for subset in itertools.combinations(active, size):
            used = sum(caps[k] for k in subset)
            if used > extra + 1e-12:
                continue
            base = upper.copy()
            base[list(subset)] = lower[list(subset)]
            options = [base]
            for k in active:
                if k in subset:
                    continue
                fractional = base.copy()
                fractional[k] = max(lower[k], upper[k] * math.exp(-(extra - used) / coeff_f))
                options.append(fractional)
            for rhos in options:
                value = _step3_value(gaps, rhos)
                if value > best_value:
                    best, best_value = rhos, value
    return best


def step3_rho(state: OptimizerState, scenario: Scenario) -> List[float]:
    """
    Extraction ratios for fixed beams and λ.

    Per user the term s_k/ρ + μF ln ρ is convex in ρ, so for a fixed power
    multiplier μ the maximizer is an endpoint of [ρ_min, min(1, log2(1+γ_k)/ς)].
    Bisection on μ selects the endpoints, the leftover budget goes to one
    fractional user, and for up to 12 active users the vertices of the
    feasible set in u = ln(1/ρ) are enumerated exactly.

    Raises:
        InfeasibleError: empty extraction-ratio box, or insufficient power even at the upper limits
    """
    gaps, lower, upper, budget = _step3_inputs(state, scenario)
    coeff_f = scenario.comp_coeff
    floor_power = computation_power(coeff_f, upper)
    if floor_power > budget + 1e-9:
        raise InfeasibleError(
            f"Computation power {floor_power:.4g} mW at the largest ratios exceeds the remaining budget {budget:.4g} mW",
            stage='step3_rho',
            binding_constraint='power',
            details={'remaining_budget_mw': budget}
        )
    extra = max(budget - floor_power, 0.0)
    rhos = _dual_bisection(gaps, lower, upper, extra, coeff_f)
    exact = _vertex_enumeration(gaps, lower, upper, extra, coeff_f)
    if exact is not None and _step3_value(gaps, exact) > _step3_value(gaps, rhos):
        rhos = exact
    return [float(np.clip(rhos[k], lower[k], upper[k])) for k in range(scenario.n_users)]


def _trace_row(state: OptimizerState, scenario: Scenario, ref_cov: np.ndarray, objective: float, inner: int) -> Dict[str, Any]:
    """Iteration record: objective, power split, mismatch and per-user SSR/ρ/λ."""
    report = worst_case_ssr(scenario, state.beams, state.rhos)
    row = {
        'iteration': state.outer_iter,
        'objective': objective,
        'p_comp_mw': computation_power(scenario.comp_coeff, state.rhos),
        'p_cs_mw': state.beams.total_power(),
        'mismatch': mismatch(ref_cov, state.beams),
        'inner_iterations': inner
    }
    for k in range(scenario.n_users):
        row[f"ssr_{k + 1}"] = report.ssr[k]
        row[f"rho_{k + 1}"] = state.rhos[k]
        row[f"lambda_{k + 1}"] = state.lambdas[k]
    return row


def _check_start(scenario: Scenario, ref_cov: np.ndarray) -> None:
    """The ρ = 1 point must be admissible before iterating."""
    for k, profile in enumerate(scenario.semantic_profiles):
        rho_lower_bound(profile)
    ref_power = float(np.real(np.trace(ref_cov)))
    if ref_power > scenario.power_budget_mw * (1 + 1e-6) + 1e-9:
        raise InfeasibleError(
            f"Reference covariance power {ref_power:.4g} mW exceeds the budget {scenario.power_budget_mw:.4g} mW",
            stage='initialization',
            binding_constraint='power'
        )


def run(
    scenario: Scenario,
    ref_cov: np.ndarray,
    options: Optional[OptimizerOptions] = None,
    benchmark: bool = False
) -> Tuple[OptimizerState, RateReport]:
    """
    Run the alternating optimization followed by Gaussian randomization.

    Args:
        scenario: Experiment scenario
        ref_cov: Sensing reference covariance R_d
        options: Tolerances and budgets
        benchmark: Pin ρ_k = 1 and skip the extraction-ratio step

    Returns:
        (final state with rank-one W_k, rate report of the final beams)

    Raises:
        InfeasibleError: a step has no feasible point (context carries the outer iteration)
    """
    options = options or OptimizerOptions()
    ref_cov = hermitian_part(ref_cov)
    _check_start(scenario, ref_cov)
    mode = 'benchmark' if benchmark else 'semantic'
    state = initial_state(scenario, ref_cov, benchmark)
    history = [true_objective(state, scenario)]
    trace = []
    inner_counts = []
    converged = False
    ascent_ok = True
    logger.info(f"Starting {mode} run: K={scenario.n_users}, L={scenario.n_targets}, "
                f"P_t={scenario.power_budget_mw:.4g} mW, objective={history[0]:.6e}")

    for iteration in range(1, options.max_outer + 1):
        try:
            beams, inner = _beamforming_loop(state, scenario, ref_cov, options)
            state = state.model_copy(update={'beams': beams})
            lambdas = step2_lambda(state, scenario)
            c_change = max(
                (abs(1.0 + lam - c) / max(1.0, c) for lam, c in zip(lambdas, state.c_points)),
                default=0.0
            )
            state = state.model_copy(update={'lambdas': lambdas, 'c_points': [1.0 + v for v in lambdas]})
            if not benchmark:
                rhos = step3_rho(state, scenario)
                state = state.model_copy(update={'rhos': rhos})
        except InfeasibleError as e:
            raise e.with_context(outer_iteration=iteration, mode=mode)

        _, b_terms = rate_terms(scenario, state.beams)
        state = state.model_copy(update={'b_points': b_terms, 'outer_iter': iteration})
        objective = true_objective(state, scenario)
        previous = history[-1]
        if objective < previous - options.ascent_tol:
            ascent_ok = False
            logger.warning(f"⚠️ Objective decreased at iteration {iteration}: {previous:.9e} -> {objective:.9e}")
        history.append(objective)

        trace.append(_trace_row(state, scenario, ref_cov, objective, inner))
        inner_counts.append(inner)
        logger.debug(f"iteration {iteration}: objective={objective:.9e} rhos={[round(r, 6) for r in state.rhos]}")

        settled = abs(objective - previous) <= options.outer_tol * max(1.0, abs(previous))
        if settled and c_change <= options.tol_lambda:
            converged = True
            break

    if converged:
        logger.info(f"✅ {mode} run converged after {state.outer_iter} iterations, objective={history[-1]:.6e}")
    else:
        logger.warning(f"⚠️ {mode} run hit max_outer={options.max_outer}, objective={history[-1]:.6e}")

    try:
        result: RandomizationResult = gaussian_randomization(
            state.beams, scenario, ref_cov, options.randomization_draws, options, rhos=state.rhos
        )
    except InfeasibleError as e:
        raise e.with_context(outer_iteration=state.outer_iter, mode=mode)

    final_lambdas = tight_lambdas(scenario, result.beams)
    final = state.model_copy(update={
        'beams': result.beams,
        'sdr_beams': state.beams,
        'randomization_ratio': result.ratio,
        'lambdas': final_lambdas,
        'c_points': [1.0 + v for v in final_lambdas],
        'objective_history': history,
        'converged': converged,
        'ascent_ok': ascent_ok,
        'inner_iterations': inner_counts,
        'trace': trace
    })
    report = worst_case_ssr(scenario, result.beams, final.rhos)
    logger.info(f"✅ Randomization ({result.source}): ratio={result.ratio:.4f}, sum SSR={report.sum_ssr:.6f}")
    return final, report


def final_objective(state: OptimizerState, scenario: Scenario) -> float:
    """Unclamped objective of the state's beams with λ at its tight value."""
    return unclamped_objective(scenario, state.beams, state.rhos)
