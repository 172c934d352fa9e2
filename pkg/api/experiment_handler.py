"""
Experiment Handler
Coordinates reference design, alternating optimization, MUSIC evaluation and
result emission for the command-line modes.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy

from api.config_loader import ExperimentConfig, build_scenario
from channel.array_channel import BeamformerSet, Scenario, transmit_covariance
from design.alternating_optimizer import OptimizerState, run as run_alternating
from design.options import OptimizerOptions
from design.sensing_reference import (
    SensingReference,
    beampattern_table,
    design_reference_cov,
    export_reference,
    mismatch,
    target_gain_margin,
)
from metrics.secrecy_metrics import RateReport, report_rows
from metrics.semantic_metrics import ledger_for, power_check
from sensing.music_eval import MusicResult, evaluate_beams, export_spectrum
from utils.errors import IsscError, OutputError
from utils.logging_utils import get_logger
from utils.results_io import write_json, write_run_artifacts, write_table

logger = get_logger("EXPERIMENT")
sweep_logger = get_logger("SWEEP")

MODES = {'semantic': False, 'benchmark': True}
PEAK_AGREEMENT_DEG = 1.0


def package_versions() -> Dict[str, str]:
    return {
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'pydantic': pydantic.VERSION
    }


def _options_for(config: ExperimentConfig, seed: int) -> OptimizerOptions:
    return config.optimizer.model_copy(update={'seed': seed})


def _prepare(config: ExperimentConfig, seed: int, budget_dbm: Optional[float] = None) -> Tuple[Scenario, SensingReference]:
    scenario = build_scenario(config, seed, budget_dbm)
    reference = design_reference_cov(scenario, config.sensing)
    return scenario, reference


def _run_mode(
    scenario: Scenario,
    reference: SensingReference,
    options: OptimizerOptions,
    mode: str
) -> Tuple[OptimizerState, RateReport]:
    return run_alternating(scenario, reference.cov, options, benchmark=MODES[mode])


def _require_written(paths: Dict[str, Optional[Any]]) -> Dict[str, str]:
    """Paths as strings; a None entry means the write failed."""
    missing = sorted(name for name, path in paths.items() if path is None)
    if missing:
        raise OutputError(f"Could not write {', '.join(missing)}; check that the output directory is writable")
    return {name: str(path) for name, path in paths.items()}


def _beam_matrices(beams: BeamformerSet, prefix: str = '') -> Dict[str, np.ndarray]:
    matrices = {f"{prefix}W_{k + 1}": w for k, w in enumerate(beams.w_mats)}
    matrices.update({f"{prefix}R_{l + 1}": r for l, r in enumerate(beams.r_mats)})
    return matrices


def _mode_summary(scenario: Scenario, reference: SensingReference, state: OptimizerState, report: RateReport) -> Dict[str, Any]:
    """Scalar outcome of one optimizer run (also the sweep row payload)."""
    ledger = ledger_for(state.rhos, state.beams.total_power(), scenario.comp_coeff, scenario.power_budget_mw)
    summary = {
        'sum_ssr': report.sum_ssr,
        'objective': state.objective_history[-1] if state.objective_history else math.nan,
        'outer_iterations': state.outer_iter,
        'inner_iterations': int(sum(state.inner_iterations)),
        'converged': state.converged,
        'ascent_ok': state.ascent_ok,
        'randomization_ratio': state.randomization_ratio,
        'comm_power_mw': float(sum(np.real(np.trace(w)) for w in state.beams.w_mats)),
        'sensing_power_mw': float(sum(np.real(np.trace(r)) for r in state.beams.r_mats)),
        'comp_power_mw': ledger.comp_mw,
        'power_ok': power_check(ledger),
        'mismatch': mismatch(reference.cov, state.beams)
    }
    for k in range(scenario.n_users):
        summary[f"ssr_{k + 1}"] = report.ssr[k]
        summary[f"rho_{k + 1}"] = state.rhos[k]
    return summary


def run_sensing_reference(config: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    Design the sensing reference covariance and export it with its beampattern.

    Returns:
        Dict with success status, achieved t, diagnostics and written paths
    """
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir or config.output_dir)
    scenario = build_scenario(config, seed)
    trace_path = out_dir / 'sensing_ref_solver_trace.csv' if config.emit_trace else None
    reference = design_reference_cov(scenario, config.sensing, trace_path=trace_path)
    paths = export_reference(reference, scenario.geometry, out_dir)
    summary = {
        'mode': 'sensing-ref',
        'seed': seed,
        'power_budget_dbm': config.power_budget_dbm,
        't': reference.t,
        'status': reference.status,
        'iterations': reference.iterations,
        'max_crosscorr': reference.max_crosscorr,
        'gain_margin': target_gain_margin(reference, scenario.geometry, scenario.target_angles),
        'versions': package_versions()
    }
    paths['summary'] = write_json(summary, out_dir / 'sensing_ref_summary.json')
    if trace_path is not None:
        paths['solver_trace'] = trace_path if trace_path.exists() else None
    paths = _require_written(paths)
    return {
        'success': True,
        **summary,
        'paths': paths,
        'message': 'Sensing reference designed successfully'
    }


def run_single(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    benchmark: bool = False,
    out_dir: Optional[Path] = None
) -> Dict[str, Any]:
    """
    One alternating-optimization run at the configured budget.

    Args:
        config: Experiment config
        seed: Channel and randomization seed (defaults to config.seed)
        benchmark: Pin ρ = 1 (no semantic extraction)
        out_dir: Output directory (defaults to config.output_dir)

    Returns:
        Dict with success status, per-user rates, power split and written paths

    Raises:
        InfeasibleError: the reference design or a step of the run is infeasible
    """
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir or config.output_dir)
    mode = 'benchmark' if benchmark else 'semantic'
    scenario, reference = _prepare(config, seed)
    state, report = _run_mode(scenario, reference, _options_for(config, seed), mode)

    run_id = f"run_{mode}"
    summary = {
        'mode': mode,
        'seed': seed,
        'power_budget_dbm': config.power_budget_dbm,
        'reference_t': reference.t,
        **_mode_summary(scenario, reference, state, report),
        'objective_history': state.objective_history,
        'versions': package_versions()
    }
    matrices = {'R_d': reference.cov, **_beam_matrices(state.beams)}
    paths = _require_written(write_run_artifacts(
        out_dir,
        run_id,
        summary=summary,
        trace=state.trace if config.emit_trace else None,
        matrices=matrices,
        tables={'rates': report_rows(report, state.rhos)}
    ))
    logger.info(f"✅ {mode} run finished: sum SSR={report.sum_ssr:.6f} bits/s/Hz")
    return {
        'success': True,
        **summary,
        'paths': paths,
        'message': f'{mode.capitalize()} run completed successfully'
    }


def _sweep_columns(n_users: int) -> List[str]:
    columns = ['budget_dbm', 'mode', 'success', 'sum_ssr']
    columns += [f"ssr_{k + 1}" for k in range(n_users)]
    columns += [f"rho_{k + 1}" for k in range(n_users)]
    columns += [
        'comm_power_mw', 'sensing_power_mw', 'comp_power_mw', 'power_ok', 'mismatch',
        'outer_iterations', 'inner_iterations', 'converged', 'ascent_ok', 'randomization_ratio',
        'reference_t', 'stage', 'binding_constraint', 'error'
    ]
    return columns


def _sweep_point(config: ExperimentConfig, seed: int, budget_dbm: float) -> Tuple[List[Dict[str, Any]], Dict[str, np.ndarray]]:
    """Rows (one per mode) and beam matrices of one budget point; failures are recorded in-row."""
    rows = []
    matrices: Dict[str, np.ndarray] = {}
    try:
        scenario, reference = _prepare(config, seed, budget_dbm)
    except Exception as e:
        sweep_logger.warning(f"⚠️ {budget_dbm:g} dBm: reference design failed: {e}")
        failure = _failure_report(e, 'sensing_reference')
        return [
            {'budget_dbm': budget_dbm, 'mode': mode, 'success': False, **_failure_fields(failure)}
            for mode in MODES
        ], matrices

    matrices['R_d'] = reference.cov
    options = _options_for(config, seed)
    for mode in MODES:
        row: Dict[str, Any] = {'budget_dbm': budget_dbm, 'mode': mode, 'reference_t': reference.t}
        try:
            state, report = _run_mode(scenario, reference, options, mode)
            row.update({'success': True, **_mode_summary(scenario, reference, state, report)})
            matrices.update(_beam_matrices(state.beams, prefix=f"{mode}_"))
            sweep_logger.info(f"✅ {budget_dbm:g} dBm {mode}: sum SSR={report.sum_ssr:.6f}")
        except Exception as e:
            row.update({'success': False, **_failure_fields(_failure_report(e, 'alternating_optimization'))})
            sweep_logger.warning(f"⚠️ {budget_dbm:g} dBm {mode}: {e}")
        rows.append(row)
    return rows, matrices


def _failure_report(error: Exception, stage: str) -> Dict[str, Any]:
    """Structured report of a failed point; errors outside IsscError carry their type name."""
    if isinstance(error, IsscError):
        return getattr(error, 'report', {'stage': stage, 'error': str(error)})
    sweep_logger.error(f"❌ {type(error).__name__} during {stage}: {error}")
    return {'stage': stage, 'error': f"{type(error).__name__}: {error}"}


def _failure_fields(report: Dict[str, Any]) -> Dict[str, Any]:
    return {
        'stage': report.get('stage'),
        'binding_constraint': report.get('binding_constraint'),
        'error': report.get('error')
    }


def run_sweep(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out_dir: Optional[Path] = None,
    budgets_dbm: Optional[List[float]] = None
) -> Dict[str, Any]:
    """
    Power-budget sweep of the semantic design against the ρ = 1 benchmark.

    Every point draws the same channels (same seed). Points run on up to
    `config.workers` threads; files are written once all points finish.

    Returns:
        Dict with the sweep rows (a DataFrame), feasibility counts and paths
    """
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir or config.output_dir)
    budgets = list(budgets_dbm) if budgets_dbm is not None else config.sweep_points()
    sweep_logger.info(f"Sweeping {len(budgets)} budget points {budgets[0]:g}..{budgets[-1]:g} dBm "
                      f"on {config.workers} worker(s)")

    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        outcomes = list(executor.map(lambda b: _sweep_point(config, seed, b), budgets))

    rows = [row for point_rows, _ in outcomes for row in point_rows]
    table = pd.DataFrame(rows).reindex(columns=_sweep_columns(config.n_users))
    paths: Dict[str, Any] = {'sweep': write_table(table, out_dir / 'sweep.csv')}
    for budget, (_, matrices) in zip(budgets, outcomes):
        if matrices:
            paths[f"matrices_{budget:g}"] = write_run_artifacts(
                out_dir / 'sweep_points', f"budget_{budget:g}dBm", matrices=matrices
            ).get('matrices')

    feasible = int(table['success'].fillna(False).astype(bool).sum())
    summary = {
        'mode': 'sweep',
        'seed': seed,
        'budgets_dbm': budgets,
        'feasible_rows': feasible,
        'total_rows': len(rows),
        'versions': package_versions()
    }
    paths['summary'] = write_json(summary, out_dir / 'sweep_summary.json')
    paths = _require_written(paths)
    sweep_logger.info(f"✅ Sweep finished: {feasible}/{len(rows)} feasible rows")
    return {
        'success': True,
        **summary,
        'rows': table,
        'paths': paths,
        'message': 'Sweep completed successfully'
    }


def run_benchmark_comparison(config: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    Semantic and benchmark runs on the same channels and reference at the configured budget.

    Returns:
        Dict with one comparison row per mode, the sum-SSR gain and paths
    """
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir or config.output_dir)
    scenario, reference = _prepare(config, seed)
    options = _options_for(config, seed)

    rows = []
    matrices = {'R_d': reference.cov}
    for mode in MODES:
        state, report = _run_mode(scenario, reference, options, mode)
        rows.append({'mode': mode, **_mode_summary(scenario, reference, state, report)})
        matrices.update(_beam_matrices(state.beams, prefix=f"{mode}_"))

    gain = rows[0]['sum_ssr'] - rows[1]['sum_ssr']
    if gain < -1e-6:
        logger.warning(f"⚠️ Semantic design trails the benchmark by {-gain:.3e} bits/s/Hz")
    summary = {
        'mode': 'bench',
        'seed': seed,
        'power_budget_dbm': config.power_budget_dbm,
        'sum_ssr_gain': gain,
        'versions': package_versions()
    }
    paths = _require_written(
        write_run_artifacts(out_dir, 'bench', summary=summary, matrices=matrices, tables={'comparison': rows})
    )
    return {
        'success': True,
        **summary,
        'rows': rows,
        'paths': paths,
        'message': 'Benchmark comparison completed successfully'
    }


def run_music(config: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[Path] = None) -> Dict[str, Any]:
    """
    MUSIC detection with the reference, semantic and benchmark transmit designs.

    Returns:
        Dict with detected peaks and errors per design, peak agreement and paths
    """
    seed = config.seed if seed is None else seed
    out_dir = Path(out_dir or config.output_dir)
    scenario, reference = _prepare(config, seed)
    options = _options_for(config, seed)
    music = config.music if config.music.seed is not None else config.music.model_copy(update={'seed': seed})

    designs: Dict[str, BeamformerSet] = {'reference': BeamformerSet(w_mats=[], r_mats=[reference.cov])}
    for mode in MODES:
        state, _ = _run_mode(scenario, reference, options, mode)
        designs[mode] = state.beams

    results: Dict[str, MusicResult] = {name: evaluate_beams(scenario, beams, music) for name, beams in designs.items()}
    semantic_peaks = results['semantic'].peak_angles_deg
    benchmark_peaks = results['benchmark'].peak_angles_deg
    agree = len(semantic_peaks) == len(benchmark_peaks) and all(
        abs(a - b) <= PEAK_AGREEMENT_DEG for a, b in zip(semantic_peaks, benchmark_peaks)
    )
    if not agree:
        logger.warning(f"⚠️ Peak sets differ: semantic {semantic_peaks} vs benchmark {benchmark_peaks}")

    summary = {
        'mode': 'music',
        'seed': seed,
        'snapshots': music.snapshots,
        'grid_step_deg': music.grid_step_deg,
        'peaks_deg': {name: res.peak_angles_deg for name, res in results.items()},
        'peak_errors_deg': {name: res.peak_errors_deg for name, res in results.items()},
        'peaks_agree': agree,
        'versions': package_versions()
    }
    paths = _require_written({
        'spectrum': export_spectrum(results, out_dir / 'music_spectrum.csv'),
        'beampattern': write_table(
            beampattern_table(scenario.geometry, {name: transmit_covariance(beams) for name, beams in designs.items()}),
            out_dir / 'music_beampattern.csv'
        ),
        'summary': write_json(summary, out_dir / 'music_summary.json')
    })
    return {
        'success': True,
        **summary,
        'results': results,
        'paths': paths,
        'message': 'MUSIC evaluation completed successfully'
    }
