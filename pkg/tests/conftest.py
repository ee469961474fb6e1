import numpy as np
import pytest

from admmbeam.beamforming import NetworkConfig
from admmbeam.conic import build_template, stuff


def unit_config(power=4.0, field_mode="real"):
    return NetworkConfig(1, 1, (1,), power, 1.0, None, field_mode)


def random_instance(rng, L_max=4, K_max=3, N_max=2, field_mode="complex"):
    """Small network with unit-scale channels and budgets."""
    L = int(rng.integers(1, L_max + 1))
    K = int(rng.integers(1, K_max + 1))
    ants = tuple(int(a) for a in rng.integers(1, N_max + 1, size=L))
    N = sum(ants)
    config = NetworkConfig(L, K, ants, rng.uniform(0.5, 2.0, L), rng.uniform(0.5, 1.5, K), None, field_mode)
    if field_mode == "complex":
        h = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)
    else:
        h = rng.standard_normal((K, N))
    return config, h


def stuffed(config, h, gamma):
    template, problem = build_template(config.dims())
    stuff(template, problem, h, config.power_budgets, np.sqrt(config.noise_powers), config.weights, gamma)
    return template, problem


@pytest.fixture
def unit_problem():
    config = unit_config()
    _, problem = stuffed(config, np.array([[2.0]]), 1.0)
    return problem
