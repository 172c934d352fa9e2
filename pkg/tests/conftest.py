import math

import numpy as np
import pytest

from api.config_loader import ExperimentConfig, build_scenario
from channel.array_channel import ArrayGeometry, BeamformerSet, Scenario
from design.sensing_reference import design_reference_cov
from metrics.semantic_metrics import default_profiles


def make_scenario(
    n_antennas: int = 4,
    cu_deg=(20.0,),
    target_deg=(-30.0,),
    cu_gains=None,
    alpha=None,
    beta=None,
    power_mw: float = 100.0,
    sigma2: float = 1e-6,
    **kwargs
) -> Scenario:
    k, l = len(cu_deg), len(target_deg)
    return Scenario(
        geometry=ArrayGeometry(n_antennas=n_antennas),
        cu_angles=[math.radians(a) for a in cu_deg],
        target_angles=[math.radians(a) for a in target_deg],
        cu_gains=list(cu_gains or [0.005] * k),
        target_gains_alpha=list(alpha or [0.003] * l),
        target_gains_beta=list(beta or [0.005] * l),
        sigma2_c=sigma2,
        sigma2_r=sigma2,
        power_budget_mw=power_mw,
        semantic_profiles=kwargs.pop('semantic_profiles', default_profiles(k)),
        **kwargs
    )


def random_psd(rng: np.random.Generator, n: int, rank: int = None, scale: float = 1.0) -> np.ndarray:
    rank = rank or n
    f = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    mat = f @ f.conj().T
    return scale * mat / np.real(np.trace(mat))


@pytest.fixture
def small_scenario() -> Scenario:
    """N=4, one CU at 20°, one target at -30°, 20 dBm."""
    return make_scenario()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def desk_config() -> ExperimentConfig:
    """Reference angles and noise on an 8-element array at 20 dBm."""
    return ExperimentConfig(n_antennas=8)


@pytest.fixture(scope="session")
def desk_scenario(desk_config) -> Scenario:
    return build_scenario(desk_config, seed=0)


@pytest.fixture(scope="session")
def desk_reference(desk_scenario):
    return design_reference_cov(desk_scenario)


@pytest.fixture
def zero_beams(small_scenario) -> BeamformerSet:
    return BeamformerSet.zeros(small_scenario.n_antennas, small_scenario.n_users, small_scenario.n_targets)
