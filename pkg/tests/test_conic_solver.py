import math

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest
from pydantic import ValidationError

from solver.conic_problem import (
    AffineConstraint,
    CompiledProblem,
    ConicProblem,
    FrobBall,
    LinearForm,
    LogConstraint,
    LogTerm,
    hermitian_basis,
    linear_combination,
)
from solver.conic_solver import certify, solve, strict_feasible_start
from utils.errors import InfeasibleError

from tests.conftest import random_psd


def trace_form(n: int, sign: float = 1.0, block: int = 0) -> LinearForm:
    return LinearForm(blocks={block: sign * np.eye(n)})


def matched_log_problem(h: np.ndarray, power: float) -> ConicProblem:
    """maximize ln(h^H X h + 1) s.t. tr X ≤ P."""
    n = h.size
    return ConicProblem(
        block_sizes=[n],
        log_terms=[LogTerm(weight=1.0, form=LinearForm(blocks={0: np.outer(h, np.conj(h))}, constant=1.0))],
        affine_ineqs=[AffineConstraint(form=trace_form(n), bound=power, name='power')]
    )


class TestHermitianBasis:

    def test_round_trip(self, rng):
        basis = hermitian_basis(4)
        mat = random_psd(rng, 4)
        npt.assert_allclose(basis.smat(basis.svec(mat)), mat, atol=1e-14)

    def test_inner_product_is_dot(self, rng):
        basis = hermitian_basis(3)
        a, b = random_psd(rng, 3), random_psd(rng, 3)
        assert basis.svec(a) @ basis.svec(b) == pytest.approx(np.real(np.trace(a @ b)))

    def test_logdet_hessian_matches_quadratic_form(self, rng):
        basis = hermitian_basis(3)
        x = random_psd(rng, 3) + 0.1 * np.eye(3)
        inv = np.linalg.inv(x)
        d = random_psd(rng, 3) - random_psd(rng, 3)
        v = basis.svec(d)
        expected = np.real(np.trace(inv @ d @ inv @ d))
        assert v @ basis.logdet_hessian(inv) @ v == pytest.approx(expected, rel=1e-10)


class TestProblemModel:

    def test_unknown_block_rejected(self):
        with pytest.raises(ValidationError):
            ConicProblem(block_sizes=[2], objective=LinearForm(blocks={1: np.eye(2)}))

    def test_non_hermitian_coefficient_rejected(self):
        with pytest.raises(ValidationError):
            LinearForm(blocks={0: np.array([[0.0, 1.0], [0.0, 0.0]])})

    def test_linear_combination(self):
        combined = linear_combination([trace_form(2), LinearForm(constant=3.0)], [2.0, -1.0])
        assert combined.value([np.eye(2)]) == pytest.approx(4.0 - 3.0)

    def test_pack_unpack(self, rng):
        problem = ConicProblem(block_sizes=[2, 3], n_scalars=1)
        compiled = CompiledProblem(problem)
        blocks = [random_psd(rng, 2), random_psd(rng, 3)]
        unpacked, scalars = compiled.unpack(compiled.pack(blocks, [1.5]))
        npt.assert_allclose(unpacked[1], blocks[1], atol=1e-14)
        assert scalars == [1.5]


class TestStrictFeasibleStart:

    def test_power_only(self):
        problem = ConicProblem(
            block_sizes=[2, 2],
            affine_ineqs=[AffineConstraint(form=LinearForm(blocks={0: np.eye(2), 1: np.eye(2)}), bound=4.0)]
        )
        start = strict_feasible_start(problem)
        total = sum(np.real(np.trace(b)) for b in start.block_values)
        assert total == pytest.approx(2.0)
        assert start.min_slack > 0
        assert start.source == 'identity'

    def test_contradictory_bounds(self):
        problem = ConicProblem(
            block_sizes=[2],
            affine_ineqs=[
                AffineConstraint(form=trace_form(2), bound=1.0, name='upper'),
                AffineConstraint(form=trace_form(2, -1.0), bound=-2.0, name='lower')
            ]
        )
        with pytest.raises(InfeasibleError) as excinfo:
            strict_feasible_start(problem)
        assert excinfo.value.binding_constraint in {'upper', 'lower'}
        assert excinfo.value.report['success'] is False

    def test_phase_one_recovers_from_bad_hint(self):
        problem = ConicProblem(
            block_sizes=[2],
            affine_ineqs=[
                AffineConstraint(form=trace_form(2), bound=1.0),
                AffineConstraint(form=LinearForm(blocks={0: np.diag([-1.0, 0.0])}), bound=-0.9)
            ],
            initial_blocks=[np.eye(2)]
        )
        start = strict_feasible_start(problem)
        x = start.block_values[0]
        assert np.real(np.trace(x)) < 1.0 and np.real(x[0, 0]) > 0.9


class TestSolve:

    def test_trace_lower_bound_active(self):
        problem = ConicProblem(
            block_sizes=[2],
            objective=trace_form(2, -1.0),
            affine_ineqs=[AffineConstraint(form=trace_form(2, -1.0), bound=-1.0)]
        )
        solution = solve(problem)
        assert solution.status == 'optimal'
        assert solution.objective == pytest.approx(-1.0, abs=1e-5)
        assert np.real(np.trace(solution.block_values[0])) == pytest.approx(1.0, abs=1e-5)

    def test_matched_log_solution(self):
        h = np.array([1.0, 1j])
        solution = solve(matched_log_problem(h, 2.0))
        assert solution.status == 'optimal'
        assert solution.objective == pytest.approx(math.log(2.0 * 2.0 + 1.0), abs=1e-5)
        expected = 2.0 * np.outer(h, np.conj(h)) / 2.0
        npt.assert_allclose(solution.block_values[0], expected, atol=1e-3)

    def test_optimal_solution_is_certified(self):
        solution = solve(matched_log_problem(np.array([0.5, 1.0 - 1j, 0.2j]), 3.0))
        assert solution.status == 'optimal'
        assert solution.certificate['passed']
        assert solution.certificate['feasible_probes'] > 0
        assert solution.kkt_residual <= 1e-6

    def test_certify_rejects_interior_point(self):
        problem = matched_log_problem(np.array([1.0, 0.0]), 1.0)
        solution = solve(problem)
        poor = solution.model_copy(update={'block_values': [0.1 * np.eye(2)]})
        assert not certify(problem, poor)['passed']

    def test_free_scalar_epigraph(self):
        problem = ConicProblem(
            block_sizes=[2],
            n_scalars=1,
            objective=LinearForm(scalars={0: 1.0}),
            affine_ineqs=[
                AffineConstraint(form=LinearForm(blocks={0: -np.eye(2)}, scalars={0: 1.0}), bound=0.0),
                AffineConstraint(form=trace_form(2), bound=2.0)
            ]
        )
        solution = solve(problem)
        assert solution.scalar_values[0] == pytest.approx(2.0, abs=1e-5)

    def test_frobenius_ball(self):
        problem = ConicProblem(
            block_sizes=[2],
            objective=trace_form(2),
            frob_ball=FrobBall(center=np.eye(2), block_weights={0: 1.0}, radius_sq=1.0)
        )
        solution = solve(problem)
        assert solution.objective == pytest.approx(2.0 + math.sqrt(2.0), abs=1e-5)

    def test_log_constraint(self):
        problem = ConicProblem(
            block_sizes=[2],
            objective=trace_form(2, -1.0),
            log_ineqs=[LogConstraint(weight=1.0, log_form=trace_form(2), bound=math.log(2.0))]
        )
        solution = solve(problem)
        assert solution.objective == pytest.approx(-2.0, abs=1e-5)

    def test_infeasible_status_without_raise(self):
        problem = ConicProblem(
            block_sizes=[2],
            affine_ineqs=[
                AffineConstraint(form=trace_form(2), bound=1.0),
                AffineConstraint(form=trace_form(2, -1.0), bound=-2.0)
            ]
        )
        solution = solve(problem, raise_on_infeasible=False)
        assert solution.status == 'infeasible'
        with pytest.raises(InfeasibleError):
            solve(problem)

    def test_block_permutation(self):
        c0, c1 = np.diag([1.0, 2.0]), np.diag([3.0, 0.5])

        def build(order):
            coeffs = [c0, c1] if order == 0 else [c1, c0]
            return ConicProblem(
                block_sizes=[2, 2],
                log_terms=[LogTerm(weight=1.0, form=LinearForm(blocks={0: coeffs[0], 1: coeffs[1]}, constant=1.0))],
                affine_ineqs=[AffineConstraint(form=LinearForm(blocks={0: np.eye(2), 1: np.eye(2)}), bound=1.0)]
            )

        first, second = solve(build(0)), solve(build(1))
        assert first.objective == pytest.approx(second.objective, abs=1e-7)
        npt.assert_allclose(first.block_values[0], second.block_values[1], atol=1e-4)

    def test_stage_trace_written(self, tmp_path):
        path = tmp_path / "stages.csv"
        solution = solve(matched_log_problem(np.array([1.0, 1.0]), 1.0), trace_path=path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ['stage', 'mu', 'objective', 'merit', 'min_eig', 'max_violation', 'newton_steps']
        assert len(frame) == len(solution.stages)
        objectives = frame['objective'].to_numpy()
        assert np.all(np.diff(objectives) >= -1e-6 * (1.0 + np.abs(objectives[1:])))
        assert objectives[-1] == pytest.approx(solution.objective)

    def test_stage_merit_includes_barrier(self):
        solution = solve(matched_log_problem(np.array([1.0, 1.0]), 1.0))
        first = solution.stages[0]
        assert math.isfinite(first['merit'])
        assert first['merit'] != pytest.approx(first['objective'], abs=1e-9)
        gaps = [abs(s['merit'] - s['objective']) for s in solution.stages]
        assert gaps[-1] < gaps[0]
