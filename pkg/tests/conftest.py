"""Shared fixtures for the gom_spectral test-suite."""

from pathlib import Path

import numpy as np
import pytest

from gom_spectral.data_model import BlockPartition, Family, FlatMatrix, ModelParams
from gom_spectral.simulate import gen_memberships, sample_dirichlet
from gom_spectral.utils import make_rng

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def noiseless_dir() -> Path:
    return FIXTURES / "noiseless"


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


def noiseless_instance(seed: int, N: int, L: int, C: int, K: int):
    """
    Polytomous parameters with K pure subjects, and R* itself as bernoulli data
    """
    rng = make_rng(seed)
    memberships = gen_memberships(N, K, np.ones(K), rng)
    tables = sample_dirichlet(np.full(C, 0.2), L * K, rng).reshape(L, K, C)
    item_params = tables.transpose(0, 2, 1).reshape(L * C, K)
    partition = BlockPartition.uniform(L * C, C)
    params = ModelParams(memberships, item_params, Family.BERNOULLI_ONEHOT, partition)
    data = FlatMatrix(params.mean_matrix(), partition, Family.BERNOULLI_GENERAL)
    return params, data


@pytest.fixture
def small_noiseless():
    return noiseless_instance(seed=7, N=40, L=12, C=3, K=3)
