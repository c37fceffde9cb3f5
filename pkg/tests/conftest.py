import numpy as np
import pytest

from platelet_abc import ModelParams, SimulationConfig


@pytest.fixture
def params():
    return ModelParams(p_ag=15.0, p_ad=70.0, p_t=2.5e-3, p_f=0.4, a_t=7.0)


@pytest.fixture
def fast_config():
    """Small, quick configuration for unit tests (~200 steps, 16x16 grid)."""
    return SimulationConfig(
        diffusion=2e-3, layer_height=0.5, n_z=16, boundary_layer=0.005,
        obs_times=(0.0, 0.5, 1.0, 1.5, 2.0),
        init_nap=200_000.0, init_ap=20_000.0, init_albumin=2e6,
        substrate_shape=(32, 32), rho_max=60.0, seed=42,
    )


@pytest.fixture
def desk_config():
    """The desk-scale recovery configuration (64x64 grid, 16 s protocol)."""
    return SimulationConfig(
        diffusion=2e-3, layer_height=1.0, n_z=32, boundary_layer=0.005,
        obs_times=(0.0, 4.0, 8.0, 12.0, 16.0),
        init_nap=200_000.0, init_ap=5_000.0, init_albumin=6e6,
        substrate_shape=(64, 64), rho_max=60.0, seed=7,
    )


def rng_of(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))
