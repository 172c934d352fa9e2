import numpy as np
import numpy.testing as npt
import pytest

from channel.array_channel import BeamformerSet, outer, transmit_covariance
from design.alternating_optimizer import initial_state, run
from design.options import OptimizerOptions
from design.randomization import gaussian_randomization, is_feasible, principal_component, projection_candidate
from metrics.secrecy_metrics import cu_sinr, eav_snr
from utils.errors import InfeasibleError

from tests.conftest import random_psd


@pytest.fixture
def rank_one_start(small_scenario):
    ref = 12.5 * np.eye(4)
    return small_scenario, ref, initial_state(small_scenario, ref).beams


@pytest.fixture
def full_rank_beams(rng):
    return BeamformerSet(w_mats=[random_psd(rng, 4, scale=5.0)], r_mats=[random_psd(rng, 4, scale=0.05)])


def test_principal_component_of_rank_one():
    vec = np.array([1.0, 2j, -1.0])
    scaled, first, second = principal_component(outer(vec))
    npt.assert_allclose(outer(scaled), outer(vec), atol=1e-12)
    assert first == pytest.approx(6.0)
    assert abs(second) < 1e-12


class TestGaussianRandomization:

    def test_rank_one_passes_through(self, rank_one_start):
        scenario, ref, beams = rank_one_start
        result = gaussian_randomization(beams, scenario, ref, draws=10)
        assert result.source in {'principal', 'projection'}
        assert result.ratio == pytest.approx(1.0, rel=1e-9)
        npt.assert_allclose(transmit_covariance(result.beams), transmit_covariance(beams), atol=1e-9)

    def test_full_rank_result_is_feasible(self, small_scenario, full_rank_beams):
        ref = transmit_covariance(full_rank_beams)
        result = gaussian_randomization(full_rank_beams, small_scenario, ref, draws=50)
        assert is_feasible(result.beams, small_scenario, ref, [1.0])
        assert 0.0 <= result.ratio <= 1.0
        assert np.linalg.matrix_rank(result.beams.w_mats[0], tol=1e-9) == 1

    def test_seeded_draws_repeat(self, small_scenario, full_rank_beams):
        ref = transmit_covariance(full_rank_beams)
        options = OptimizerOptions(projection_candidate=False, seed=11)
        first = gaussian_randomization(full_rank_beams, small_scenario, ref, 20, options)
        second = gaussian_randomization(full_rank_beams, small_scenario, ref, 20, options)
        npt.assert_array_equal(first.beams.w_mats[0], second.beams.w_mats[0])

    def test_no_feasible_candidate(self, small_scenario, full_rank_beams):
        demanding = small_scenario.model_copy(update={'qos_floor': 60.0})
        ref = transmit_covariance(full_rank_beams)
        with pytest.raises(InfeasibleError) as excinfo:
            gaussian_randomization(full_rank_beams, demanding, ref, 5, OptimizerOptions(projection_candidate=False))
        assert excinfo.value.stage == 'randomization'

    @pytest.mark.slow
    def test_desk_ratio(self, desk_scenario, desk_reference):
        state, _ = run(desk_scenario, desk_reference.cov)
        assert state.randomization_ratio >= 0.7


class TestProjectionCandidate:

    def test_keeps_covariance_and_sinr(self, small_scenario, full_rank_beams):
        candidate = projection_candidate(full_rank_beams, small_scenario)
        npt.assert_allclose(transmit_covariance(candidate), transmit_covariance(full_rank_beams), atol=1e-10)
        assert cu_sinr(small_scenario, candidate, 0) == pytest.approx(cu_sinr(small_scenario, full_rank_beams, 0), rel=1e-8)
        assert eav_snr(small_scenario, candidate, 0, 0) <= eav_snr(small_scenario, full_rank_beams, 0, 0) * (1 + 1e-9)

    def test_power_violation_detected(self, small_scenario, full_rank_beams):
        ref = transmit_covariance(full_rank_beams)
        assert is_feasible(full_rank_beams, small_scenario, ref, [1.0])
        assert not is_feasible(full_rank_beams.scaled(20.0), small_scenario, ref, [1.0])
