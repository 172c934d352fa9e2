from dotenv import load_dotenv
import os

try:
    result = load_dotenv()
    if result:
        print("✅ .env file loaded successfully")
        issc_vars = {
            'ISSC_OUTPUT_DIR': 'SET' if os.getenv('ISSC_OUTPUT_DIR') else 'NOT SET',
            'ISSC_SEED': 'SET' if os.getenv('ISSC_SEED') else 'NOT SET',
            'ISSC_LOG_LEVEL': 'SET' if os.getenv('ISSC_LOG_LEVEL') else 'NOT SET'
        }
        print(f"📋 ISSC environment variables status: {issc_vars}")
    else:
        print("⚠️ .env file not found or empty")
except Exception as e:
    print(f"⚠️ Warning: Could not load .env file: {e}")
    print("⚠️ Continuing without .env file - environment variables will be used directly")

import argparse
import sys
from typing import Any, Callable, Dict, List, Optional

from api.config_loader import ExperimentConfig, apply_overrides, load_config
from api.experiment_handler import (
    run_benchmark_comparison,
    run_music,
    run_sensing_reference,
    run_single,
    run_sweep,
)
from utils.errors import ConfigError, InfeasibleError, IsscError
from utils.logging_utils import configure_logging, get_logger

logger = get_logger("CLI")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python main.py",
        description="Secure integrated sensing and semantic communication beamforming experiments"
    )
    parser.add_argument("mode", choices=["run", "sweep", "sensing-ref", "music", "bench"])
    parser.add_argument("--config", help="JSON experiment file (defaults to the reference deployment)")
    parser.add_argument("--seed", type=int, help="Channel and randomization seed (overrides ISSC_SEED)")
    parser.add_argument("--out", help="Output directory (overrides ISSC_OUTPUT_DIR)")
    parser.add_argument("--emit-trace", action="store_true", default=None, help="Write per-iteration traces")
    parser.add_argument("--benchmark", action="store_true", help="run mode: pin rho = 1 (no semantic extraction)")
    parser.add_argument("--benchmark2", action="store_true", help="Reserved: SINR-threshold benchmark")
    parser.add_argument("--workers", type=int, help="Sweep worker threads")
    parser.add_argument("--log-level", help="Logging level (overrides ISSC_LOG_LEVEL)")
    return parser


def _dispatch(args: argparse.Namespace, config: ExperimentConfig) -> Dict[str, Any]:
    handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
        'run': lambda: run_single(config, benchmark=args.benchmark),
        'sweep': lambda: run_sweep(config),
        'sensing-ref': lambda: run_sensing_reference(config),
        'music': lambda: run_music(config),
        'bench': lambda: run_benchmark_comparison(config)
    }
    return handlers[config.mode]()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.benchmark2:
            raise ConfigError("Benchmark 2 (SINR-threshold design) is not implemented; see DESIGN.md")
        config = apply_overrides(
            load_config(args.config),
            mode=args.mode,
            seed=args.seed,
            output_dir=args.out,
            emit_trace=args.emit_trace,
            workers=args.workers
        )
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG

    try:
        result = _dispatch(args, config)
    except InfeasibleError as e:
        logger.error(f"❌ Infeasible at stage '{e.stage}' (binding: {e.binding_constraint}): {e}")
        return EXIT_INFEASIBLE
    except IsscError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURE

    logger.info(f"✅ {result['message']}")
    for name, path in sorted(result.get('paths', {}).items()):
        if path:
            logger.info(f"   {name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
