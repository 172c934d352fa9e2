import json
import math
from pathlib import Path

import pytest

from api.config_loader import ExperimentConfig, apply_overrides, build_scenario, dbm_to_mw, load_config
from utils.errors import ConfigError


def write_config(tmp_path, content) -> Path:
    path = tmp_path / "config.json"
    path.write_text(content if isinstance(content, str) else json.dumps(content), encoding='utf-8')
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv('ISSC_SEED', raising=False)
    monkeypatch.delenv('ISSC_OUTPUT_DIR', raising=False)


class TestLoadConfig:

    def test_defaults_without_file(self):
        config = load_config()
        assert config.n_antennas == 18
        assert config.target_angles_deg == [-35.0, 5.0, 45.0]
        assert config.cu_angles_deg == [-30.0, 20.0]
        assert config.power_budget_dbm == 20.0

    def test_empty_file_gives_defaults(self, tmp_path):
        assert load_config(write_config(tmp_path, "")) == ExperimentConfig()

    def test_nested_sections(self, tmp_path):
        config = load_config(write_config(tmp_path, {'n_antennas': 8, 'optimizer': {'max_outer': 7}}))
        assert config.n_antennas == 8
        assert config.optimizer.max_outer == 7
        assert config.sensing.sidelobe_margin_deg == 5.0

    def test_out_of_range_angle_names_field(self, tmp_path):
        with pytest.raises(ConfigError, match="target_angles_deg"):
            load_config(write_config(tmp_path, {'target_angles_deg': [100.0]}))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="antenas"):
            load_config(write_config(tmp_path, {'antenas': 8}))

    def test_nested_error_path(self, tmp_path):
        with pytest.raises(ConfigError, match=r"optimizer\.max_outer"):
            load_config(write_config(tmp_path, {'optimizer': {'max_outer': 0}}))

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
    def test_malformed_content(self, tmp_path, content):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, content))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_profile_count_must_match_users(self, tmp_path):
        profile = {'n_grams': 1, 'weights': [1.0], 'precisions': [0.9]}
        with pytest.raises(ConfigError, match="semantic_profiles"):
            load_config(write_config(tmp_path, {'semantic_profiles': [profile]}))


class TestConfigModel:

    def test_unit_conversion(self):
        assert dbm_to_mw(-60.0) == pytest.approx(1e-6)
        assert dbm_to_mw(20.0) == pytest.approx(100.0)

    def test_sweep_points_inclusive(self):
        assert ExperimentConfig().sweep_points() == [5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0]

    def test_default_profiles_follow_users(self):
        config = ExperimentConfig(cu_angles_deg=[-30.0, 0.0, 20.0])
        assert len(config.profiles()) == 3


class TestOverrides:

    def test_environment_over_file(self, monkeypatch):
        monkeypatch.setenv('ISSC_SEED', '9')
        monkeypatch.setenv('ISSC_OUTPUT_DIR', '/tmp/issc-out')
        config = apply_overrides(ExperimentConfig(seed=1))
        assert config.seed == 9
        assert config.output_dir == Path('/tmp/issc-out')

    def test_arguments_over_environment(self, monkeypatch):
        monkeypatch.setenv('ISSC_SEED', '9')
        config = apply_overrides(ExperimentConfig(), mode='sweep', seed=3, workers=2, emit_trace=True)
        assert (config.mode, config.seed, config.workers, config.emit_trace) == ('sweep', 3, 2, True)

    def test_invalid_override(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), mode='bogus')


class TestBuildScenario:

    def test_seeded_draws_repeat(self):
        config = ExperimentConfig()
        first, second = build_scenario(config, seed=5), build_scenario(config, seed=5)
        assert first.cu_gains == second.cu_gains
        assert first.target_gains_beta == second.target_gains_beta
        assert first.cu_gains != build_scenario(config, seed=6).cu_gains

    def test_units_and_ranges(self):
        scenario = build_scenario(ExperimentConfig(), seed=0)
        assert scenario.power_budget_mw == pytest.approx(100.0)
        assert scenario.sigma2_c == scenario.sigma2_r == pytest.approx(1e-6)
        assert scenario.target_angles[0] == pytest.approx(math.radians(-35.0))
        for gain in scenario.cu_gains + scenario.target_gains_alpha + scenario.target_gains_beta:
            assert 0.001 <= gain <= 0.01

    def test_budget_override_keeps_channels(self):
        config = ExperimentConfig()
        base = build_scenario(config, seed=0)
        other = build_scenario(config, seed=0, budget_dbm=10.0)
        assert other.power_budget_mw == pytest.approx(10.0)
        assert other.cu_gains == base.cu_gains

    def test_separate_sensing_noise(self):
        scenario = build_scenario(ExperimentConfig(sensing_noise_dbm=-70.0))
        assert scenario.sigma2_r == pytest.approx(1e-7)
        assert scenario.sigma2_c == pytest.approx(1e-6)
