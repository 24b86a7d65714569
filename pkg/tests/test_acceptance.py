"""
Statistical acceptance checks on the simulation settings.

These run the estimator over many replications and take minutes; select them
with `pytest -m slow`.
"""

import time

import numpy as np
import pytest

from conftest import noiseless_instance
from gom_spectral.estimator import FitConfig, fit
from gom_spectral.gibbs import GibbsConfig, gibbs_fit
from gom_spectral.metrics import aligned_error, residual_covariance
from gom_spectral.simulate import SimScenario, run_replications, simulate_data
from gom_spectral.utils import make_rng

pytestmark = pytest.mark.slow

N_GRID = (200, 1000, 2000)


def polytomous_setting(n, replications=10, seed=2024):
    return SimScenario(
        "polytomous", n=n, items=n // 5, k=3, categories=3, replications=replications, seed=seed
    )


def dependent_setting(n, replications=10, seed=2025):
    return SimScenario(
        "bernoulli",
        n=n,
        items=n // 5,
        k=3,
        beta_a=0.2,
        beta_b=0.2,
        block_size=10,
        rho=0.5,
        replications=replications,
        seed=seed,
    )


def medians(table, metric):
    rows = table[(table["metric"] == metric) & (table["status"] == "ok")]
    return float(rows["value"].median())


def means(table, metric):
    rows = table[(table["metric"] == metric) & (table["status"] == "ok")]
    return float(rows["value"].mean())


def strictly_decreasing(values):
    return all(a > b for a, b in zip(values, values[1:]))


class TestExactRecovery:
    def test_fifty_random_noiseless_instances(self):
        start = time.perf_counter()
        for seed in range(50):
            rng = make_rng(seed, 7)
            N = int(rng.integers(30, 201))
            L = int(rng.integers(10, 51))
            C = int(rng.integers(2, 5))
            K = int(rng.integers(2, 5))
            params, data = noiseless_instance(1000 + seed, N, L, C, K)
            estimate = fit(data, K, FitConfig())
            error = aligned_error(estimate.memberships, estimate.item_params, params)
            assert error.l2inf_pi <= 1e-8, f"seed {seed}"
            assert error.maxabs_theta <= 1e-8, f"seed {seed}"
        assert time.perf_counter() - start < 10


class TestPolytomousSetting:
    def test_error_level_at_n_1000(self):
        table = run_replications(polytomous_setting(1000, replications=20), jobs=4)
        assert (table["status"] == "ok").all()
        assert 0.020 <= means(table, "mae_theta") <= 0.045
        assert 0.032 <= means(table, "mae_pi") <= 0.065

    def test_errors_shrink_with_n(self):
        tables = [run_replications(polytomous_setting(n), jobs=4) for n in N_GRID]
        assert strictly_decreasing([medians(t, "l2inf_pi") for t in tables])
        assert strictly_decreasing([medians(t, "maxabs_theta") for t in tables])

    def test_bound_ratios_are_stable(self):
        tables = [run_replications(polytomous_setting(n), jobs=4, bounds=True) for n in N_GRID]
        for metric in ("ratio_u", "ratio_entry"):
            values = np.concatenate(
                [t.loc[t["metric"] == metric, "value"].to_numpy() for t in tables]
            )
            assert np.isfinite(values).all()
            assert values.max() / values.min() <= 10
        empirical = [medians(t, "empirical_u") for t in tables]
        assert strictly_decreasing(empirical)


class TestDependentSetting:
    def test_errors_shrink_with_n(self):
        tables = [run_replications(dependent_setting(n), jobs=4) for n in N_GRID]
        assert strictly_decreasing([medians(t, "l2inf_pi") for t in tables])
        assert strictly_decreasing([medians(t, "maxabs_theta") for t in tables])

    def test_residual_covariance_is_block_diagonal(self):
        truth = simulate_data(dependent_setting(2000, replications=1))
        estimate = fit(truth.data, 3)
        cov = np.abs(
            residual_covariance(
                truth.data.values, estimate.memberships, estimate.item_params, (0, 50)
            )
        )
        blocks = np.arange(50) // 10
        same_block = blocks[:, None] == blocks[None, :]
        off_diagonal = ~np.eye(50, dtype=bool)
        within = cov[same_block & off_diagonal].mean()
        between = cov[~same_block].mean()
        assert within > 5 * between


class TestPoissonSetting:
    def test_frobenius_error_shrinks_and_rates_stay_positive(self):
        errors = []
        for n in (200, 1000):
            scenario = SimScenario("poisson", n=n, items=n // 5, k=3, seed=2026)
            truth = simulate_data(scenario)
            cfg = FitConfig()
            estimate = fit(truth.data, 3, cfg)
            assert (estimate.item_params >= cfg.epsilon).all()
            error = aligned_error(estimate.memberships, estimate.item_params, truth.params)
            errors.append(error.frob_scaled)
        assert errors[1] < errors[0]


class TestGibbsBaseline:
    def test_accuracy_and_relative_speed(self):
        truth = simulate_data(polytomous_setting(200, replications=1, seed=31))
        chain = gibbs_fit(truth.quasi, 3, GibbsConfig(burnin=5000, samples=2000, seed=31))
        gibbs_error = aligned_error(chain.memberships, chain.item_params, truth.params)
        assert gibbs_error.mae_theta <= 0.11
        assert gibbs_error.mae_pi <= 0.12

        estimate = fit(truth.data, 3)
        speedup = chain.diagnostics["runtime_seconds"] / estimate.diagnostics["runtime_seconds"]
        assert speedup >= 20
