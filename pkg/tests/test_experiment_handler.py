import json

import numpy as np
import pandas as pd
import pytest

from api import experiment_handler
from api.config_loader import ExperimentConfig, build_scenario
from api.experiment_handler import (
    run_benchmark_comparison,
    run_music,
    run_sensing_reference,
    run_single,
    run_sweep,
)
from channel.array_channel import BeamformerSet
from main import EXIT_CONFIG, EXIT_FAILURE, EXIT_INFEASIBLE, EXIT_OK, build_parser, main
from metrics.secrecy_metrics import worst_case_ssr
from utils.errors import OutputError
from utils.results_io import read_matrix_csv

SMALL = {
    'n_antennas': 4,
    'target_angles_deg': [-40.0],
    'cu_angles_deg': [20.0],
    'sweep_dbm': [15.0, 20.0, 5.0],
    'optimizer': {'max_outer': 2, 'randomization_draws': 5},
    'music': {'snapshots': 200}
}


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ('ISSC_SEED', 'ISSC_OUTPUT_DIR', 'ISSC_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def small_config(tmp_path) -> ExperimentConfig:
    return ExperimentConfig(**SMALL, output_dir=tmp_path)


def write_config(tmp_path, data) -> str:
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def test_sensing_reference_outputs(small_config):
    result = run_sensing_reference(small_config)
    assert result['success'] and result['t'] > 0
    assert set(result['paths']) == {'cov', 'beampattern', 'summary'}
    assert 'R_d' in read_matrix_csv(result['paths']['cov'])


class TestSingleRun:

    def test_rates_recomputed_from_matrices(self, small_config):
        result = run_single(small_config)
        matrices = read_matrix_csv(result['paths']['matrices'])
        beams = BeamformerSet(w_mats=[matrices['W_1']], r_mats=[matrices['R_1']])
        report = worst_case_ssr(build_scenario(small_config), beams, [result['rho_1']])
        assert report.sum_ssr == pytest.approx(result['sum_ssr'], rel=1e-6, abs=1e-9)
        assert result['power_ok']

    def test_benchmark_keeps_full_ratio(self, small_config):
        result = run_single(small_config, benchmark=True)
        assert result['mode'] == 'benchmark'
        assert result['rho_1'] == 1.0
        assert result['paths']['summary'].endswith('run_benchmark_summary.json')

    def test_trace_only_on_request(self, small_config):
        assert 'trace' not in run_single(small_config)['paths']
        traced = run_single(small_config.model_copy(update={'emit_trace': True}))
        assert traced['paths']['trace'].endswith('run_semantic_trace.csv')


class TestSweep:

    def test_rows_per_budget_and_mode(self, small_config):
        result = run_sweep(small_config)
        rows = result['rows']
        assert len(rows) == 4
        assert list(rows['mode']) == ['semantic', 'benchmark'] * 2
        assert list(rows['budget_dbm']) == [15.0, 15.0, 20.0, 20.0]
        assert 'ssr_1' in rows.columns and 'binding_constraint' in rows.columns

    def test_repeatable_across_workers(self, small_config, tmp_path):
        first = run_sweep(small_config, out_dir=tmp_path / "a")
        second = run_sweep(small_config.model_copy(update={'workers': 2}), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
        assert first['feasible_rows'] == second['feasible_rows']

    def test_failed_reference_recorded_in_row(self, tmp_path):
        config = ExperimentConfig(**{**SMALL, 'target_angles_deg': [10.0, 10.5]}, output_dir=tmp_path)
        result = run_sweep(config, budgets_dbm=[20.0])
        rows = result['rows']
        assert not rows['success'].any()
        assert set(rows['binding_constraint']) == {'target_separation'}

    def test_numerical_failure_keeps_other_points(self, small_config, tmp_path, monkeypatch):
        original = experiment_handler._run_mode

        def failing_at_20_dbm(scenario, reference, options, mode):
            if scenario.power_budget_mw == pytest.approx(100.0):
                raise np.linalg.LinAlgError("singular matrix")
            return original(scenario, reference, options, mode)

        monkeypatch.setattr(experiment_handler, '_run_mode', failing_at_20_dbm)
        result = run_sweep(small_config, out_dir=tmp_path, budgets_dbm=[15.0, 20.0])
        rows = result['rows']
        assert list(rows['success']) == [True, True, False, False]
        failed = rows[~rows['success'].astype(bool)]
        assert set(failed['stage']) == {'alternating_optimization'}
        assert all(error.startswith('LinAlgError') for error in failed['error'])
        assert len(pd.read_csv(tmp_path / "sweep.csv")) == 4

    def test_unexpected_reference_failure_recorded(self, small_config, tmp_path, monkeypatch):
        original = experiment_handler.design_reference_cov

        def failing_at_15_dbm(scenario, config=None, trace_path=None):
            if scenario.power_budget_mw < 50.0:
                raise ValueError("array must not contain infs or NaNs")
            return original(scenario, config, trace_path)

        monkeypatch.setattr(experiment_handler, 'design_reference_cov', failing_at_15_dbm)
        rows = run_sweep(small_config, out_dir=tmp_path, budgets_dbm=[15.0, 20.0])['rows']
        assert list(rows['success']) == [False, False, True, True]
        assert set(rows['stage'].iloc[:2]) == {'sensing_reference'}


class TestUnwritableOutput:

    @pytest.fixture
    def blocked_dir(self, tmp_path):
        (tmp_path / "taken").write_text("not a directory", encoding='utf-8')
        return tmp_path / "taken" / "out"

    def test_sweep_raises(self, small_config, blocked_dir):
        with pytest.raises(OutputError, match="sweep"):
            run_sweep(small_config, out_dir=blocked_dir, budgets_dbm=[20.0])

    def test_single_run_raises(self, small_config, blocked_dir):
        with pytest.raises(OutputError):
            run_single(small_config, out_dir=blocked_dir)

    def test_sensing_reference_raises(self, small_config, blocked_dir):
        with pytest.raises(OutputError):
            run_sensing_reference(small_config, out_dir=blocked_dir)

    def test_command_line_exit_code(self, tmp_path, blocked_dir):
        code = main(['sensing-ref', '--config', write_config(tmp_path, SMALL), '--out', str(blocked_dir)])
        assert code == EXIT_FAILURE


def test_benchmark_comparison(small_config):
    result = run_benchmark_comparison(small_config)
    assert [row['mode'] for row in result['rows']] == ['semantic', 'benchmark']
    assert result['sum_ssr_gain'] == pytest.approx(result['rows'][0]['sum_ssr'] - result['rows'][1]['sum_ssr'])


def test_music_mode(small_config):
    result = run_music(small_config)
    assert set(result['results']) == {'reference', 'semantic', 'benchmark'}
    assert len(result['peaks_deg']['reference']) == 1
    assert result['results']['reference'].max_error_deg() <= 2.0


class TestCommandLine:

    def test_usage_names_entry_script(self):
        assert build_parser().format_usage().startswith("usage: python main.py ")

    def test_run_succeeds(self, tmp_path):
        code = main(['run', '--config', write_config(tmp_path, SMALL), '--out', str(tmp_path / "out")])
        assert code == EXIT_OK
        assert (tmp_path / "out" / "run_semantic_summary.json").exists()

    def test_invalid_config(self, tmp_path):
        assert main(['run', '--config', write_config(tmp_path, {'n_antennas': 1})]) == EXIT_CONFIG

    def test_reserved_benchmark(self, tmp_path):
        assert main(['run', '--benchmark2', '--out', str(tmp_path)]) == EXIT_CONFIG

    def test_infeasible_geometry(self, tmp_path):
        config = write_config(tmp_path, {**SMALL, 'target_angles_deg': [10.0, 10.5]})
        assert main(['sensing-ref', '--config', config, '--out', str(tmp_path)]) == EXIT_INFEASIBLE


def test_sweep_rows_follow_budget_order(small_config, tmp_path):
    forward = run_sweep(small_config, out_dir=tmp_path / "f", budgets_dbm=[15.0, 20.0])['rows']
    backward = run_sweep(small_config, out_dir=tmp_path / "b", budgets_dbm=[20.0, 15.0])['rows']
    reordered = backward.iloc[[2, 3, 0, 1]].reset_index(drop=True)
    assert reordered.equals(forward)


@pytest.mark.slow
def test_desk_sweep_semantic_not_below_benchmark(desk_config, tmp_path):
    rows = run_sweep(desk_config, out_dir=tmp_path)['rows']
    for _, point in rows.groupby('budget_dbm'):
        by_mode = point.set_index('mode')
        if by_mode['success'].all():
            assert by_mode.loc['semantic', 'sum_ssr'] >= by_mode.loc['benchmark', 'sum_ssr'] - 1e-6


@pytest.mark.slow
def test_music_reference_deployment(tmp_path):
    result = run_music(ExperimentConfig(output_dir=tmp_path))
    for name in ('semantic', 'benchmark'):
        assert len(result['peaks_deg'][name]) == 3
        assert max(result['peak_errors_deg'][name]) <= 1.0
