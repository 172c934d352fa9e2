"""
Experiment Configuration
Loads the JSON experiment file, fills defaults and builds scenarios from it.
"""

import json
import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from channel.array_channel import ArrayGeometry, Scenario, draw_path_losses
from design.options import OptimizerOptions
from design.sensing_reference import SensingConfig
from metrics.semantic_metrics import SemanticProfile, default_profiles
from sensing.music_eval import MusicConfig
from utils.errors import ConfigError
from utils.logging_utils import get_logger

logger = get_logger("CONFIG")

Mode = Literal['run', 'sweep', 'sensing-ref', 'music', 'bench']


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


class ExperimentConfig(BaseModel):
    """
    Experiment description in user units (degrees, dBm).

    Defaults reproduce the reference deployment: 18-element half-wavelength
    ULA, targets at -35°, 5°, 45°, users at -30°, 20°, -60 dBm noise.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    mode: Mode = 'run'
    n_antennas: int = Field(18, ge=2)
    spacing_ratio: float = Field(0.5, gt=0.0)
    target_angles_deg: List[float] = Field(default_factory=lambda: [-35.0, 5.0, 45.0])
    cu_angles_deg: List[float] = Field(default_factory=lambda: [-30.0, 20.0])
    path_loss_range: Tuple[float, float] = (0.001, 0.01)
    noise_dbm: float = -60.0
    sensing_noise_dbm: Optional[float] = None
    power_budget_dbm: float = 20.0
    qos_floor: float = Field(1.0, ge=0.0)
    mismatch_budget: float = Field(5.0, gt=0.0)
    comp_coeff: float = Field(10.0, ge=0.0)
    quality_floor: float = Field(0.5, gt=0.0, le=1.0)
    semantic_profiles: Optional[List[SemanticProfile]] = None
    cu_channel_model: Literal['los', 'rayleigh'] = 'los'
    sweep_dbm: Tuple[float, float, float] = (5.0, 25.0, 2.5)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: Path = Path('results')
    emit_trace: bool = False
    workers: int = Field(1, ge=1)
    sensing: SensingConfig = Field(default_factory=SensingConfig)
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    music: MusicConfig = Field(default_factory=MusicConfig)

    @field_validator('target_angles_deg', 'cu_angles_deg')
    @classmethod
    def _angles_in_range(cls, angles: List[float]) -> List[float]:
        if not angles:
            raise ValueError("at least one angle is required")
        for angle in angles:
            if not math.isfinite(angle) or abs(angle) > 90.0:
                raise ValueError(f"angle {angle!r}° lies outside [-90°, 90°]")
        return angles

    @field_validator('path_loss_range')
    @classmethod
    def _positive_range(cls, bounds: Tuple[float, float]) -> Tuple[float, float]:
        low, high = bounds
        if not 0.0 < low <= high:
            raise ValueError(f"path-loss range must satisfy 0 < low <= high (got {bounds})")
        return bounds

    @field_validator('sweep_dbm')
    @classmethod
    def _valid_sweep(cls, sweep: Tuple[float, float, float]) -> Tuple[float, float, float]:
        start, stop, step = sweep
        if step <= 0 or stop < start:
            raise ValueError(f"sweep must satisfy start <= stop and step > 0 (got {sweep})")
        return sweep

    @model_validator(mode='after')
    def _profiles_match_users(self) -> "ExperimentConfig":
        if self.semantic_profiles is not None and len(self.semantic_profiles) != len(self.cu_angles_deg):
            raise ValueError(
                f"semantic_profiles has {len(self.semantic_profiles)} entries for {len(self.cu_angles_deg)} users"
            )
        return self

    @property
    def n_users(self) -> int:
        return len(self.cu_angles_deg)

    @property
    def n_targets(self) -> int:
        return len(self.target_angles_deg)

    def sweep_points(self) -> List[float]:
        """Budget points start, start+step, ... up to stop (inclusive)."""
        start, stop, step = self.sweep_dbm
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [float(round(start + i * step, 10)) for i in range(count)]

    def profiles(self) -> List[SemanticProfile]:
        if self.semantic_profiles is not None:
            return list(self.semantic_profiles)
        return default_profiles(self.n_users, self.quality_floor)


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item['loc']) or '<root>'
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping; errors name every failing field path."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {_format_validation_error(e)}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path: JSON file; None or an empty file gives the default scenario

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: unreadable file, malformed JSON or failed validation
    """
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    if not text.strip():
        logger.info(f"Config {path} is empty, using defaults")
        return parse_config({})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path} (line {e.lineno}, column {e.colno}): {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    config = parse_config(data)
    logger.info(f"✅ Loaded config {path} (N={config.n_antennas}, K={config.n_users}, L={config.n_targets})")
    return config


def apply_overrides(
    config: ExperimentConfig,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    output_dir: Optional[Union[str, Path]] = None,
    emit_trace: Optional[bool] = None,
    workers: Optional[int] = None
) -> ExperimentConfig:
    """
    Layer environment and command-line values over the file config.

    Precedence: explicit argument, then ISSC_SEED / ISSC_OUTPUT_DIR, then the file.
    """
    update = config.model_dump()
    env_seed = os.getenv('ISSC_SEED')
    env_out = os.getenv('ISSC_OUTPUT_DIR')
    if env_seed:
        update['seed'] = env_seed
    if env_out:
        update['output_dir'] = env_out
    for key, value in (('mode', mode), ('seed', seed), ('output_dir', output_dir),
                       ('emit_trace', emit_trace), ('workers', workers)):
        if value is not None:
            update[key] = value
    return parse_config(update)


def build_scenario(config: ExperimentConfig, seed: Optional[int] = None, budget_dbm: Optional[float] = None) -> Scenario:
    """
    Convert a config into a Scenario (dBm → mW and degrees → radians, once).

    Path losses are drawn from default_rng(seed) in the order CU gains,
    target α, target β, so every budget point of a sweep sees identical channels.
    """
    seed = config.seed if seed is None else seed
    budget_dbm = config.power_budget_dbm if budget_dbm is None else budget_dbm
    rng = np.random.default_rng(seed)
    low, high = config.path_loss_range
    cu_gains = draw_path_losses(rng, config.n_users, low, high)
    alpha = draw_path_losses(rng, config.n_targets, low, high)
    beta = draw_path_losses(rng, config.n_targets, low, high)
    sensing_noise_dbm = config.noise_dbm if config.sensing_noise_dbm is None else config.sensing_noise_dbm
    return Scenario(
        geometry=ArrayGeometry(n_antennas=config.n_antennas, spacing_ratio=config.spacing_ratio),
        cu_angles=[math.radians(a) for a in config.cu_angles_deg],
        target_angles=[math.radians(a) for a in config.target_angles_deg],
        cu_gains=cu_gains,
        target_gains_alpha=alpha,
        target_gains_beta=beta,
        sigma2_c=dbm_to_mw(config.noise_dbm),
        sigma2_r=dbm_to_mw(sensing_noise_dbm),
        power_budget_mw=dbm_to_mw(budget_dbm),
        qos_floor=config.qos_floor,
        mismatch_budget=config.mismatch_budget,
        comp_coeff=config.comp_coeff,
        semantic_profiles=config.profiles(),
        seed=seed,
        cu_channel_model=config.cu_channel_model
    )
