import math

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from api.config_loader import ExperimentConfig, build_scenario
from channel.array_channel import BeamformerSet, steering_vector
from design.sensing_reference import design_reference_cov
from sensing.music_eval import (
    MusicConfig,
    evaluate_beams,
    expected_echo_covariance,
    export_spectrum,
    music_spectrum,
    sample_covariance,
    simulate_echoes,
)
from utils.errors import DomainError, MusicError

from tests.conftest import make_scenario


def isotropic(n: int, power: float = 1.0) -> BeamformerSet:
    return BeamformerSet(w_mats=[np.zeros((n, n))], r_mats=[power / n * np.eye(n)])


class TestSimulation:

    def test_sample_covariance_converges(self):
        scenario = make_scenario(target_deg=(25.0,), beta=[0.05], sigma2=1e-4)
        beams = isotropic(4, 4.0)
        echoes = simulate_echoes(scenario, beams, 10_000, seed=1)
        expected = expected_echo_covariance(scenario, beams)
        error = np.linalg.norm(sample_covariance(echoes) - expected) / np.linalg.norm(expected)
        assert error <= 0.05

    def test_noiseless_echoes_span_target(self):
        scenario = make_scenario(n_antennas=6, target_deg=(-20.0,), beta=[0.01], sigma2=1e-18)
        echoes = simulate_echoes(scenario, isotropic(6), 200, seed=0)
        _, vecs = np.linalg.eigh(sample_covariance(echoes))
        a = steering_vector(scenario.geometry, math.radians(-20.0))
        assert abs(np.vdot(a, vecs[:, -1])) ** 2 / 6 == pytest.approx(1.0, abs=1e-6)

    def test_seeded(self, small_scenario):
        beams = isotropic(4)
        npt.assert_array_equal(simulate_echoes(small_scenario, beams, 20, 3), simulate_echoes(small_scenario, beams, 20, 3))

    def test_too_few_snapshots(self, small_scenario):
        with pytest.raises(DomainError):
            simulate_echoes(small_scenario, isotropic(4), 3, seed=0)


class TestMusicSpectrum:

    def test_single_broadside_target(self):
        scenario = make_scenario(n_antennas=8, target_deg=(0.0,))
        result = evaluate_beams(scenario, isotropic(8, 10.0), MusicConfig(seed=0))
        assert len(result.peak_angles_deg) == 1
        assert result.max_error_deg() <= 0.5
        assert len(result.grid_deg) == len(result.pseudospectrum_db) == 361

    def test_two_targets_resolved(self):
        scenario = make_scenario(n_antennas=8, target_deg=(-30.0, 30.0))
        result = evaluate_beams(scenario, isotropic(8, 10.0), MusicConfig(seed=4))
        assert len(result.peak_angles_deg) == 2
        assert result.max_error_deg() <= 1.0

    def test_scale_invariant(self):
        scenario = make_scenario(n_antennas=8, target_deg=(10.0,))
        echoes = simulate_echoes(scenario, isotropic(8, 10.0), 500, seed=2)
        base = music_spectrum(echoes, 1)
        scaled = music_spectrum(3.0 * echoes, 1)
        assert base.peak_angles_deg == scaled.peak_angles_deg
        npt.assert_allclose(base.pseudospectrum_db, scaled.pseudospectrum_db, atol=1e-6)

    def test_zero_echoes(self):
        with pytest.raises(MusicError):
            music_spectrum(np.zeros((4, 10)), 1)

    @pytest.mark.parametrize("n_targets", [0, 4])
    def test_model_order_range(self, n_targets):
        with pytest.raises(DomainError):
            music_spectrum(np.ones((4, 10)), n_targets)


def test_export_spectrum(tmp_path):
    scenario = make_scenario(n_antennas=8, target_deg=(0.0,))
    result = evaluate_beams(scenario, isotropic(8, 10.0), MusicConfig(seed=0, grid_step_deg=1.0))
    path = export_spectrum({'R_d': result, 'semantic': result}, tmp_path / "spectrum.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['angle_deg', 'R_d', 'semantic']
    assert len(frame) == 181


@pytest.mark.slow
def test_reference_design_locates_default_targets():
    config = ExperimentConfig()
    scenario = build_scenario(config, seed=0)
    reference = design_reference_cov(scenario)
    beams = BeamformerSet(w_mats=[], r_mats=[reference.cov])
    result = evaluate_beams(scenario, beams, MusicConfig(seed=0))
    assert len(result.peak_angles_deg) == 3
    assert result.max_error_deg() <= 1.0
