"""
Conic Solver
Primal log-barrier interior-point method for ConicProblem instances.

The barrier function is -Σ ln det X_b - Σ ln(slack) over affine, log and ball
constraints. Each stage minimizes -f + μ·barrier by damped Newton steps in the
real coordinates of the Hermitian blocks; μ starts at 1 and is divided by 10
per stage until the duality-gap bound μ·ν falls below the tolerance.
"""

import copy
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from solver.conic_problem import CompiledProblem, ConicProblem, ConicSolution, StartPoint
from utils.errors import InfeasibleError
from utils.logging_utils import get_logger
from utils.results_io import write_table

logger = get_logger("CONIC SOLVER")

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200
MU_START = 1.0
MU_FACTOR = 10.0
ARMIJO = 0.25
MAX_BACKTRACK = 60
CENTERING_TOL = 1e-5
STAGE_NEWTON_CAP = 60
PHASE1_MARGIN = 1e-3
IDENTITY_LADDER = (1.0, 0.5, 0.1, 1e-2, 1e-3, 1e-4)
CERTIFY_DIRECTIONS = 64
CERTIFY_SEED = 64
CERTIFY_STEPS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


class _Barrier:
    """Value, gradient and Hessian of -f(z) + μ·barrier(z)."""

    def __init__(self, compiled: CompiledProblem):
        self.cp = compiled

    def merit(self, z: np.ndarray, mu: float) -> Optional[float]:
        cp = self.cp
        f = cp.objective(z)
        if not math.isfinite(f):
            return None
        slack = cp.stacked_slacks(z)
        if slack.size and (not np.all(np.isfinite(slack)) or np.min(slack) <= 0):
            return None
        logdet = 0.0
        for b, basis in enumerate(cp.bases):
            eig = scipy.linalg.eigvalsh(basis.smat(cp.block_coords(z, b)))
            if eig[0] <= 0:
                return None
            logdet += float(np.sum(np.log(eig)))
        return -f - mu * (logdet + float(np.sum(np.log(slack))))

    def derivatives(self, z: np.ndarray, mu: float) -> Tuple[np.ndarray, np.ndarray]:
        cp = self.cp
        grad = -cp.c.copy()
        hess = np.zeros((cp.n_vars, cp.n_vars))

        if cp.lw.size:
            args = cp.la @ z + cp.la0
            grad -= cp.la.T @ (cp.lw / args)
            hess += (cp.la.T * (cp.lw / args ** 2)) @ cp.la

        for b, basis in enumerate(cp.bases):
            start, stop = cp.offsets[b], cp.offsets[b] + basis.dim
            eig, vecs = scipy.linalg.eigh(basis.smat(z[start:stop]))
            inv = (vecs / eig) @ vecs.conj().T
            grad[start:stop] -= mu * basis.svec(inv)
            hess[start:stop, start:stop] += mu * basis.logdet_hessian(inv)

        if cp.n_affine:
            inv_slack = 1.0 / (cp.h - cp.g @ z)
            grad += mu * (cp.g.T @ inv_slack)
            hess += mu * (cp.g.T * inv_slack ** 2) @ cp.g

        if cp.n_log_ineqs:
            args = cp.qa @ z + cp.qa0
            values = cp.qw * np.log(args) + cp.qb @ z + cp.qb0
            dg = cp.qa * (cp.qw / args)[:, None] + cp.qb
            grad -= mu * (dg.T @ (1.0 / values))
            hess += mu * (dg.T * (1.0 / values ** 2)) @ dg
            hess += mu * (cp.qa.T * (cp.qw / (args ** 2 * values))) @ cp.qa

        if cp.ball:
            diff = cp.ball_center - cp.ball_map @ z
            value = cp.ball_r2 - float(diff @ diff) + float(cp.ball_lin @ z)
            db = 2.0 * (cp.ball_map.T @ diff) + cp.ball_lin
            grad -= mu * db / value
            hess += mu * (np.outer(db, db) / value ** 2 + 2.0 * cp.ball_gram / value)

        return grad, 0.5 * (hess + hess.T)


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Solve H·dz = -g with Jacobi scaling; eigen fallback when H is numerically singular."""
    diag = np.diag(hess)
    scale = np.where(diag > 1e-300, 1.0 / np.sqrt(np.maximum(diag, 1e-300)), 1.0)
    scaled_hess = hess * scale[:, None] * scale[None, :]
    scaled_grad = grad * scale
    try:
        factor = scipy.linalg.cho_factor(scaled_hess, lower=True, check_finite=False)
        step = -scipy.linalg.cho_solve(factor, scaled_grad, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        eig, vecs = scipy.linalg.eigh(scaled_hess)
        floor = max(float(np.max(np.abs(eig))), 1.0) * 1e-12
        step = -vecs @ ((vecs.T @ scaled_grad) / np.maximum(eig, floor))
    return step * scale


def _center(barrier: _Barrier, z: np.ndarray, mu: float, budget: int) -> Tuple[np.ndarray, int]:
    """Damped Newton centering for one barrier stage; returns the iterate and steps used."""
    used = 0
    current = barrier.merit(z, mu)
    while used < min(budget, STAGE_NEWTON_CAP):
        grad, hess = barrier.derivatives(z, mu)
        step = _newton_direction(grad, hess)
        decrement = -float(grad @ step)
        if decrement <= max(CENTERING_TOL * mu, 1e-14 * (1.0 + abs(current))):
            break
        used += 1
        t = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACK):
            candidate = z + t * step
            value = barrier.merit(candidate, mu)
            if value is not None and value <= current - ARMIJO * t * decrement:
                z, current, accepted = candidate, value, True
                break
            t *= 0.5
        logger.debug(f"mu={mu:.1e} newton step {used}: decrement={decrement:.3e} t={t:.2e}")
        if not accepted:
            break
    return z, used


def _max_violation(compiled: CompiledProblem, z: np.ndarray) -> float:
    slack = compiled.stacked_slacks(z)
    scaled = -slack / compiled.constraint_scales() if slack.size else np.zeros(1)
    eig_violation = -compiled.min_block_eig(z)
    return float(max(0.0, float(np.max(scaled)), eig_violation))


def _strictly_feasible(compiled: CompiledProblem, z: np.ndarray) -> bool:
    if not math.isfinite(compiled.objective(z)):
        return False
    slack = compiled.stacked_slacks(z)
    if slack.size and (not np.all(np.isfinite(slack)) or np.min(slack) <= 0):
        return False
    return compiled.min_block_eig(z) > 0


def _min_normalized_slack(compiled: CompiledProblem, z: np.ndarray) -> Tuple[float, Optional[str]]:
    slack = compiled.stacked_slacks(z)
    if not slack.size:
        return math.inf, None
    normalized = slack / compiled.constraint_scales()
    index = int(np.argmin(normalized))
    return float(normalized[index]), compiled.constraint_names()[index]


def _barrier_path(
    compiled: CompiledProblem,
    z: np.ndarray,
    tol: float,
    max_iter: int,
    stop_when: Optional[Callable[[np.ndarray], bool]] = None
) -> Tuple[np.ndarray, str, List[Dict[str, float]], int, float]:
    """Run barrier stages from a strictly feasible z."""
    barrier = _Barrier(compiled)
    nu = compiled.barrier_parameter
    mu = MU_START
    used = 0
    stages = []
    status = 'max_iter'
    while True:
        z, steps = _center(barrier, z, mu, max_iter - used)
        used += steps
        objective = compiled.objective(z)
        merit = barrier.merit(z, mu)
        stages.append({
            'stage': len(stages),
            'mu': mu,
            'objective': objective,
            'merit': -merit if merit is not None else math.nan,
            'min_eig': compiled.min_block_eig(z),
            'max_violation': _max_violation(compiled, z),
            'newton_steps': steps
        })
        logger.debug(f"stage {len(stages) - 1}: mu={mu:.1e} objective={objective:.9e} steps={steps}")
        if stop_when is not None and stop_when(z):
            status = 'optimal'
            break
        if mu * nu <= 0.5 * tol * (1.0 + abs(objective)):
            status = 'optimal'
            break
        if used >= max_iter:
            break
        mu /= MU_FACTOR
    return z, status, stages, used, mu


def _fill_scalars(compiled: CompiledProblem, z: np.ndarray) -> np.ndarray:
    """Place each free scalar strictly inside the interval its affine rows allow."""
    z = z.copy()
    for j in range(compiled.n_scalars):
        col_index = compiled.scalar_offset + j
        column = compiled.g[:, col_index] if compiled.n_affine else np.zeros(0)
        rows = np.nonzero(column)[0]
        z[col_index] = 0.0
        if rows.size == 0:
            continue
        rhs = compiled.h[rows] - compiled.g[rows] @ z
        ratios = rhs / column[rows]
        upper = ratios[column[rows] > 0]
        lower = ratios[column[rows] < 0]
        hi = float(np.min(upper)) if upper.size else math.inf
        lo = float(np.max(lower)) if lower.size else -math.inf
        if math.isfinite(hi) and math.isfinite(lo):
            z[col_index] = 0.5 * (lo + hi)
        elif math.isfinite(hi):
            z[col_index] = hi - 1e-2 * (1.0 + abs(hi))
        elif math.isfinite(lo):
            z[col_index] = lo + 1e-2 * (1.0 + abs(lo))
    return z


def _identity_candidates(compiled: CompiledProblem) -> List[np.ndarray]:
    """Scaled identity blocks: midpoint of the interval allowed by scalar-free affine rows, then a ladder."""
    identity = compiled.pack([np.eye(basis.n) for basis in compiled.bases])
    lo, hi = 0.0, math.inf
    if compiled.n_affine:
        scalar_free = ~np.any(compiled.g[:, compiled.scalar_offset:] != 0, axis=1)
        alphas = compiled.g[scalar_free] @ identity
        bounds = compiled.h[scalar_free]
        for alpha, bound in zip(alphas, bounds):
            if alpha > 0:
                hi = min(hi, bound / alpha)
            elif alpha < 0:
                lo = max(lo, bound / alpha)
    if math.isfinite(hi) and hi > lo:
        tau = 0.5 * (lo + hi)
    elif lo > 0:
        tau = 2.0 * lo
    else:
        tau = 1.0
    return [_fill_scalars(compiled, tau * factor * identity) for factor in IDENTITY_LADDER]


def _hint_candidate(compiled: CompiledProblem) -> Optional[np.ndarray]:
    problem = compiled.problem
    if problem.initial_blocks is None:
        return None
    z = compiled.pack(problem.initial_blocks, problem.initial_scalars or ())
    if problem.initial_scalars is None:
        z = _fill_scalars(compiled, z)
    return z


def _phase_one(compiled: CompiledProblem) -> CompiledProblem:
    """
    Phase-1 problem: add a scalar s, relax every constraint i by s·σ_i and
    maximize -s subject to s ≥ -1.
    """
    sigma = compiled.constraint_scales()
    n_aff, n_log = compiled.n_affine, compiled.n_log_ineqs
    phase = copy.copy(compiled)
    phase.n_vars = compiled.n_vars + 1
    phase.n_scalars = compiled.n_scalars + 1

    def widen(mat: np.ndarray, column: Optional[np.ndarray] = None) -> np.ndarray:
        extra = np.zeros((mat.shape[0], 1)) if column is None else column.reshape(-1, 1)
        return np.hstack([mat, extra])

    phase.c = np.zeros(phase.n_vars)
    phase.c[-1] = -1.0
    phase.c0 = 0.0
    phase.la = np.zeros((0, phase.n_vars))
    phase.la0 = np.zeros(0)
    phase.lw = np.zeros(0)

    floor_row = np.zeros((1, phase.n_vars))
    floor_row[0, -1] = -1.0
    phase.g = np.vstack([widen(compiled.g, -sigma[:n_aff]), floor_row])
    phase.h = np.concatenate([compiled.h, [1.0]])
    phase.affine_names = compiled.affine_names + ['phase1_floor']

    phase.qa = widen(compiled.qa)
    phase.qb = widen(compiled.qb, sigma[n_aff:n_aff + n_log])

    if compiled.ball:
        phase.ball_map = widen(compiled.ball_map)
        phase.ball_gram = phase.ball_map.T @ phase.ball_map
        phase.ball_lin = np.concatenate([compiled.ball_lin, [sigma[-1]]])
    return phase


def _run_phase_one(compiled: CompiledProblem, z0: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    if compiled.n_log_ineqs and np.any(compiled.qa @ z0 + compiled.qa0 <= 0):
        raise InfeasibleError(
            "Log-constraint argument is not positive at the phase-1 start",
            stage='conic_start',
            binding_constraint=compiled.log_names[int(np.argmin(compiled.qa @ z0 + compiled.qa0))]
        )
    phase = _phase_one(compiled)
    sigma = compiled.constraint_scales()
    slack = compiled.stacked_slacks(z0)
    worst = float(np.max(-slack / sigma)) if slack.size else 0.0
    start = np.concatenate([z0, [max(worst, 0.0) + 1.0]])

    def reached(z: np.ndarray) -> bool:
        return z[-1] <= -PHASE1_MARGIN and _strictly_feasible(compiled, z[:-1])

    z, status, stages, used, _ = _barrier_path(phase, start, tol, max_iter, stop_when=reached)
    logger.debug(f"phase 1 finished ({status}) after {used} Newton steps, s={z[-1]:.3e}")
    candidate = z[:-1]
    if _strictly_feasible(compiled, candidate):
        return candidate
    min_slack, name = _min_normalized_slack(compiled, candidate)
    raise InfeasibleError(
        f"No strictly feasible point: phase-1 optimum s={z[-1]:.3e} ≥ 0, tightest constraint '{name}' "
        f"(normalized slack {min_slack:.3e})",
        stage='conic_start',
        binding_constraint=name,
        details={'phase1_value': float(z[-1])}
    )


def _start_vector(compiled: CompiledProblem, tol: float, max_iter: int) -> Tuple[np.ndarray, str]:
    hint = _hint_candidate(compiled)
    if hint is not None and _strictly_feasible(compiled, hint):
        return hint, 'hint'
    candidates = _identity_candidates(compiled)
    for z in candidates:
        if _strictly_feasible(compiled, z):
            return z, 'identity'
    pool = ([hint] if hint is not None and compiled.min_block_eig(hint) > 0 else []) + candidates
    best = min(pool, key=lambda z: _max_violation(compiled, z))
    logger.debug("no direct start found, running phase 1")
    return _run_phase_one(compiled, best, tol, max_iter), 'phase1'


def strict_feasible_start(problem: ConicProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> StartPoint:
    """
    Find a strictly feasible point of a conic problem.

    Tries the problem's hint, then identity blocks scaled into the interval
    allowed by the affine rows (a ladder of smaller scalings follows), then a
    phase-1 solve.

    Raises:
        InfeasibleError: phase 1 cannot make every constraint strictly slack
    """
    compiled = CompiledProblem(problem)
    z, source = _start_vector(compiled, tol, max_iter)
    blocks, scalars = compiled.unpack(z)
    min_slack, _ = _min_normalized_slack(compiled, z)
    return StartPoint(block_values=blocks, scalar_values=scalars, min_slack=min_slack, source=source)


def _objective_gradient(compiled: CompiledProblem, z: np.ndarray) -> np.ndarray:
    grad = compiled.c.copy()
    if compiled.lw.size:
        grad += compiled.la.T @ (compiled.lw / (compiled.la @ z + compiled.la0))
    return grad


def _certify_vector(compiled: CompiledProblem, z: np.ndarray, tol: float, n_directions: int) -> Dict[str, Any]:
    objective = compiled.objective(z)
    threshold = tol * (1.0 + abs(objective))
    rng = np.random.default_rng(CERTIFY_SEED)
    directions = rng.standard_normal((n_directions, compiled.n_vars))
    gradient = _objective_gradient(compiled, z)
    if np.linalg.norm(gradient) > 0:
        directions[0] = gradient
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radius = max(1.0, float(np.linalg.norm(z)))

    max_gain = -math.inf
    probes = 0
    for direction in directions:
        for sign in (1.0, -1.0):
            for step in CERTIFY_STEPS:
                candidate = z + sign * step * radius * direction
                if not _strictly_feasible(compiled, candidate):
                    continue
                probes += 1
                max_gain = max(max_gain, compiled.objective(candidate) - objective)
    max_violation = _max_violation(compiled, z)
    passed = (max_gain <= threshold) and max_violation <= 1e-6
    return {
        'passed': bool(passed),
        'max_gain': float(max_gain) if probes else 0.0,
        'threshold': float(threshold),
        'feasible_probes': probes,
        'max_violation': max_violation
    }


def certify(problem: ConicProblem, solution: ConicSolution, tol: float = DEFAULT_TOL, n_directions: int = CERTIFY_DIRECTIONS) -> Dict[str, Any]:
    """
    First-order perturbation oracle.

    Probes n_directions deterministic directions (and their negatives) on a
    ladder of step sizes; every strictly feasible probe must not improve the
    objective by more than tol·(1 + |objective|).

    Returns:
        Dictionary with passed, max_gain, threshold, feasible_probes, max_violation
    """
    compiled = CompiledProblem(problem)
    z = compiled.pack(solution.block_values, solution.scalar_values)
    return _certify_vector(compiled, z, tol, n_directions)


def solve(
    problem: ConicProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    certify_result: bool = True,
    raise_on_infeasible: bool = True,
    trace_path: Optional[Path] = None
) -> ConicSolution:
    """
    Solve a conic problem with the barrier method.

    Args:
        problem: Problem in canonical form
        tol: Relative duality-gap tolerance
        max_iter: Total Newton-step budget (phase 1 has its own budget of the same size)
        certify_result: Run the perturbation oracle on optimal results
        raise_on_infeasible: Raise InfeasibleError instead of returning status 'infeasible'
        trace_path: Optional CSV destination for the per-stage rows

    Returns:
        ConicSolution; status 'max_iter' carries the last centered iterate
    """
    compiled = CompiledProblem(problem)
    try:
        z, source = _start_vector(compiled, tol, max_iter)
    except InfeasibleError as e:
        if raise_on_infeasible:
            raise
        logger.warning(f"⚠️ {e}")
        return ConicSolution(
            block_values=[np.zeros((n, n), dtype=complex) for n in problem.block_sizes],
            scalar_values=[0.0] * problem.n_scalars,
            objective=math.nan,
            kkt_residual=math.nan,
            status='infeasible',
            binding_constraint=e.binding_constraint
        )

    z, status, stages, used, mu = _barrier_path(compiled, z, tol, max_iter)
    objective = compiled.objective(z)
    nu = compiled.barrier_parameter

    certificate = None
    if status == 'optimal' and certify_result:
        certificate = _certify_vector(compiled, z, tol, CERTIFY_DIRECTIONS)
        if not certificate['passed']:
            logger.warning(
                f"⚠️ Certification failed (gain {certificate['max_gain']:.3e} > {certificate['threshold']:.3e}), "
                f"reporting max_iter"
            )
            status = 'max_iter'

    if trace_path is not None:
        write_table(stages, trace_path)

    blocks, scalars = compiled.unpack(z)
    logger.debug(
        f"{status} after {used} Newton steps ({len(stages)} stages, start={source}): objective={objective:.9e}"
    )
    return ConicSolution(
        block_values=blocks,
        scalar_values=scalars,
        objective=objective,
        kkt_residual=mu * nu / (1.0 + abs(objective)),
        status=status,
        iterations=used,
        stages=stages,
        certificate=certificate
    )
