"""
Synthetic data for the grade-of-membership estimators: membership and item
parameter generators, data generators for every family (including binary
data with Gaussian-copula block dependence), and the replication runner
that fits and scores many simulated datasets.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special

from .cache import BaseCache
from .config import DEFAULT_SEED
from .data_model import (
    BlockPartition,
    Family,
    FlatMatrix,
    ModelParams,
    QuasiTensor,
    flatten,
    flatten_params,
    halve_binomial,
)
from .estimator import FitConfig, fit
from .events import REPLICATION_FINISHED
from .exceptions import GomError, ScenarioError, UsageError, ValidationError
from .linalg import truncated_svd
from .metrics import aligned_error, noise_stats, theory_bounds
from .utils import check_cache, make_rng

LOGGER = logging.getLogger(__name__)

THRESHOLD_CLAMP: float = 1e-12
PROBABILITY_TOL: float = 1e-9

BOUND_METRICS = (
    "xi1",
    "xi2",
    "xi3",
    "empirical_u",
    "empirical_v",
    "empirical_entry",
    "ratio_u",
    "ratio_v",
    "ratio_entry",
    "mu1",
    "mu2",
    "kappa_star",
)

RESULT_COLUMNS = [
    "scenario",
    "replication",
    "family",
    "N",
    "J",
    "K",
    "metric",
    "value",
    "seconds",
    "status",
    "error",
]

__all__ = [
    "SimScenario",
    "Truth",
    "make_rng",
    "sample_dirichlet",
    "gen_memberships",
    "gen_item_params",
    "gen_polytomous",
    "gen_block_dependent_binary",
    "gen_bernoulli",
    "gen_binomial",
    "gen_poisson",
    "simulate_data",
    "run_replications",
]


def _positive_tuple(value, size: int, name: str) -> Tuple[float, ...]:
    values = np.atleast_1d(np.asarray(value, dtype=float))
    if values.size == 1:
        values = np.full(size, float(values[0]))
    if values.size != size:
        raise ScenarioError(f"{name} needs {size} entries, got {values.size}")
    if not np.all(values > 0):
        raise ScenarioError(f"{name} must be entrywise positive")
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SimScenario:
    """
    One simulation setting.

    items is the number of polytomous items L for the polytomous family and the
    number of columns J otherwise. alpha and beta accept a scalar (broadcast) or a
    full vector. rho and block_size only apply to bernoulli data.
    """

    family: Family
    n: int
    items: int
    k: int = 3
    name: str = "scenario"
    categories: int = 3
    alpha: Any = 1.0
    beta: Any = 0.2
    beta_a: float = 0.2
    beta_b: float = 0.2
    gamma_shape: float = 1.0
    gamma_rate: float = 2.0
    block_size: int = 1
    rho: Optional[float] = None
    replications: int = 1
    seed: int = DEFAULT_SEED
    pure_placement: str = "first"

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family.parse(self.family))
        for name in ("n", "items", "k", "categories", "block_size", "replications"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ScenarioError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "alpha", _positive_tuple(self.alpha, self.k, "alpha"))
        object.__setattr__(
            self, "beta", _positive_tuple(self.beta, self.categories, "beta")
        )
        for name in ("beta_a", "beta_b", "gamma_shape", "gamma_rate"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        if self.categories < 2:
            raise ScenarioError("polytomous items need at least 2 categories")
        if self.pure_placement not in ("first", "random"):
            raise ScenarioError(
                f"pure_placement must be 'first' or 'random', got {self.pure_placement!r}"
            )

        dependent = self.rho is not None or self.block_size > 1
        if dependent and self.family is not Family.BERNOULLI_GENERAL:
            raise ScenarioError(
                f"rho/block_size describe copula dependence and conflict with "
                f"family {self.family.model_name!r}"
            )
        if self.rho is not None:
            if not -1.0 < float(self.rho) < 1.0:
                raise ScenarioError(f"rho must lie in (-1, 1), got {self.rho}")
            object.__setattr__(self, "rho", float(self.rho))
        if self.items % self.block_size != 0:
            raise ScenarioError(
                f"J={self.items} is not divisible by block size M={self.block_size}"
            )

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "SimScenario":
        if not isinstance(document, dict):
            raise ScenarioError("a scenario must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {', '.join(unknown)}")
        missing = [name for name in ("family", "n", "items") if name not in document]
        if missing:
            raise ScenarioError(f"scenario is missing {', '.join(missing)}")
        try:
            return cls(**document)
        except (TypeError, ValueError) as error:
            raise ScenarioError(f"invalid scenario: {error}") from None

    def to_dict(self) -> Dict[str, Any]:
        document = asdict(self)
        document["family"] = self.family.model_name
        document["alpha"] = list(self.alpha)
        document["beta"] = list(self.beta)
        return document

    @property
    def n_columns(self) -> int:
        if self.family is Family.BERNOULLI_ONEHOT:
            return self.items * self.categories
        return self.items

    @property
    def dependence(self) -> float:
        return 0.0 if self.rho is None else self.rho


@dataclass(frozen=True)
class Truth:
    """Parameters and data of one simulated replication"""

    params: ModelParams
    data: FlatMatrix
    quasi: Optional[QuasiTensor] = None
    rho: float = 0.0
    clamped: int = 0


def sample_dirichlet(alpha, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    n Dirichlet(alpha) rows from normalized Gamma(alpha_k, 1) draws.

    alpha may also be an (n, K) array of per-row parameters.
    """
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(alpha > 0):
        raise UsageError("Dirichlet parameters must be entrywise positive")
    shape = alpha.shape if alpha.ndim == 2 else (int(n), alpha.shape[-1])
    draws = rng.standard_gamma(np.broadcast_to(alpha, shape))
    totals = draws.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    if empty.any():
        # every Gamma draw underflowed; put the mass on one random coordinate
        rows = np.flatnonzero(empty)
        draws[rows, rng.integers(shape[1], size=rows.size)] = 1.0
        totals = draws.sum(axis=1, keepdims=True)
    return draws / totals


def gen_memberships(
    N: int, K: int, alpha, rng: np.random.Generator, placement: str = "first"
) -> np.ndarray:
    """
    Pi with K pure subjects: identity rows first (or at random rows), the rest Dirichlet(alpha)
    """
    if N < K:
        raise UsageError(f"need N >= K to place {K} pure subjects, got N={N}")
    memberships = np.vstack([np.eye(K), sample_dirichlet(alpha, N - K, rng)])
    if placement == "random":
        memberships = memberships[rng.permutation(N)]
    return memberships


def gen_item_params(
    scenario: SimScenario, rng: np.random.Generator
) -> Tuple[np.ndarray, BlockPartition]:
    """
    Theta for the scenario's family and the column partition of the data
    """
    K = scenario.k
    J = scenario.n_columns
    family = scenario.family
    if family is Family.BERNOULLI_ONEHOT:
        L, C = scenario.items, scenario.categories
        tables = sample_dirichlet(scenario.beta, L * K, rng).reshape(L, K, C)
        return tables.transpose(0, 2, 1).reshape(L * C, K), BlockPartition.uniform(J, C)
    if family is Family.POISSON:
        rates = rng.gamma(scenario.gamma_shape, 1.0 / scenario.gamma_rate, size=(J, K))
        return rates, BlockPartition.singletons(J)
    probs = rng.beta(scenario.beta_a, scenario.beta_b, size=(J, K))
    if family is Family.BERNOULLI_GENERAL:
        return probs, BlockPartition.uniform(J, scenario.block_size)
    return probs, BlockPartition.singletons(J)


def _mean_probabilities(Pi: np.ndarray, Theta: np.ndarray) -> np.ndarray:
    mean = np.asarray(Pi, dtype=float) @ np.asarray(Theta, dtype=float).T
    if np.any(mean < -PROBABILITY_TOL) or np.any(mean > 1 + PROBABILITY_TOL):
        i, j = (int(v) for v in np.argwhere((mean < 0) | (mean > 1))[0])
        raise ValidationError(
            f"mean {mean[i, j]:.6g} is not a probability", location=(i, j)
        )
    return np.clip(mean, 0.0, 1.0)


def gen_polytomous(
    Pi: np.ndarray,
    Theta: Union[np.ndarray, Sequence[np.ndarray]],
    rng: np.random.Generator,
    partition: Optional[BlockPartition] = None,
) -> QuasiTensor:
    """
    Draws response l of subject i from Categorical(sum_k pi_ik theta_l,k,.).

    Theta is either a list of per-item (C_l x K) tables or the flattened J x K
    matrix together with its partition.
    """
    if partition is None:
        if isinstance(Theta, np.ndarray):
            raise UsageError("a flattened Theta needs its block partition")
        partition = BlockPartition(tuple(np.shape(table)[0] for table in Theta))
        Theta = flatten_params(Theta)
    probs = _mean_probabilities(Pi, Theta)
    sums = partition.block_sums(probs)
    if np.any(np.abs(sums - 1.0) > PROBABILITY_TOL):
        i, l = (int(v) for v in np.argwhere(np.abs(sums - 1.0) > PROBABILITY_TOL)[0])
        raise ValidationError(
            f"category probabilities sum to {sums[i, l]:.12g}", location=(i, l)
        )
    u = rng.random((probs.shape[0], partition.n_blocks))
    responses = np.empty(u.shape, dtype=int)
    for l, block in enumerate(partition.blocks):
        cumulative = np.cumsum(probs[:, block], axis=1)
        chosen = (u[:, l : l + 1] * cumulative[:, -1:] >= cumulative).sum(axis=1)
        responses[:, l] = np.minimum(chosen, len(block) - 1) + 1
    return QuasiTensor(responses, partition.sizes)


def ar_cholesky(M: int, rho: float) -> np.ndarray:
    """Lower Cholesky factor of the M x M matrix rho^|i-j|"""
    lags = np.abs(np.subtract.outer(np.arange(M), np.arange(M)))
    return np.linalg.cholesky(np.power(float(rho), lags))


def copula_thresholds(mean: np.ndarray, clamp: float = THRESHOLD_CLAMP):
    """Phi^-1 of the means after clamping into [clamp, 1 - clamp], and the clamp count"""
    clamped = int(np.count_nonzero((mean < clamp) | (mean > 1 - clamp)))
    return special.ndtri(np.clip(mean, clamp, 1 - clamp)), clamped


def gen_block_dependent_binary(
    Pi: np.ndarray,
    Theta: np.ndarray,
    M: int,
    rho: float,
    rng: np.random.Generator,
) -> FlatMatrix:
    """
    Binary data R_ij = 1(eta_ij < Phi^-1(mean_ij)) where each subject's eta is
    Gaussian with AR(rho) correlation inside blocks of M consecutive columns and
    independence across blocks.
    """
    mean = _mean_probabilities(Pi, Theta)
    n_rows, n_cols = mean.shape
    M = int(M)
    if M < 1 or n_cols % M != 0:
        raise ValidationError(f"J={n_cols} is not divisible by block size M={M}")
    if not -1.0 < rho < 1.0:
        raise UsageError(f"rho must lie in (-1, 1), got {rho}")
    thresholds, clamped = copula_thresholds(mean)
    if clamped:
        LOGGER.warning(
            f"Clamped {clamped} means into [{THRESHOLD_CLAMP:g}, 1 - {THRESHOLD_CLAMP:g}] "
            f"before inverting the normal CDF"
        )
    noise = rng.standard_normal((n_rows, n_cols // M, M)) @ ar_cholesky(M, rho).T
    values = (noise.reshape(n_rows, n_cols) < thresholds).astype(float)
    return FlatMatrix(values, BlockPartition.uniform(n_cols, M), Family.BERNOULLI_GENERAL)


def gen_bernoulli(Pi: np.ndarray, Theta: np.ndarray, rng: np.random.Generator) -> FlatMatrix:
    """Independent Bernoulli entries; the M=1 case of the copula generator"""
    return gen_block_dependent_binary(Pi, Theta, 1, 0.0, rng)


def gen_binomial(Pi: np.ndarray, Theta: np.ndarray, rng: np.random.Generator) -> FlatMatrix:
    """Binomial(2, mean) counts, returned halved"""
    mean = _mean_probabilities(Pi, Theta)
    return halve_binomial(rng.binomial(2, mean).astype(float))


def gen_poisson(Pi: np.ndarray, Theta: np.ndarray, rng: np.random.Generator) -> FlatMatrix:
    """Independent Poisson counts with rates Pi Theta^T"""
    rates = np.asarray(Pi, dtype=float) @ np.asarray(Theta, dtype=float).T
    if np.any(rates < 0):
        i, j = (int(v) for v in np.argwhere(rates < 0)[0])
        raise ValidationError(f"Poisson rate {rates[i, j]:.6g} is negative", location=(i, j))
    counts = rng.poisson(rates).astype(float)
    return FlatMatrix(counts, BlockPartition.singletons(rates.shape[1]), Family.POISSON)


def simulate_data(scenario: SimScenario, replication: int = 0) -> Truth:
    """
    Parameters and data for one replication, from its own random stream
    """
    rng = make_rng(scenario.seed, replication)
    Pi = gen_memberships(
        scenario.n, scenario.k, scenario.alpha, rng, scenario.pure_placement
    )
    Theta, partition = gen_item_params(scenario, rng)
    params = ModelParams(Pi, Theta, scenario.family, partition)
    family = scenario.family
    quasi = None
    clamped = 0
    if family is Family.BERNOULLI_ONEHOT:
        quasi = gen_polytomous(Pi, Theta, rng, partition)
        data = flatten(quasi)
    elif family is Family.BERNOULLI_GENERAL:
        _, clamped = copula_thresholds(params.mean_matrix())
        data = gen_block_dependent_binary(
            Pi, Theta, scenario.block_size, scenario.dependence, rng
        )
    elif family is Family.BINOMIAL_HALVED:
        data = gen_binomial(Pi, Theta, rng)
    else:
        data = gen_poisson(Pi, Theta, rng)
    return Truth(params, data, quasi, scenario.dependence, clamped)


def _replication_records(
    scenario: SimScenario, replication: int, cfg: FitConfig, bounds: bool
) -> List[Dict[str, Any]]:
    truth = simulate_data(scenario, replication)
    estimate = fit(truth.data, scenario.k, cfg)
    error = aligned_error(estimate.memberships, estimate.item_params, truth.params)
    values: Dict[str, float] = dict(error.as_dict())
    values["gap_warning"] = float(estimate.diagnostics["gap_warning"])
    values["n_pruned"] = float(estimate.diagnostics["n_pruned"])
    values["clamped_thresholds"] = float(truth.clamped)
    if bounds:
        report = theory_bounds(
            truth.params,
            noise_stats(truth.params, truth.rho),
            estimate.factors,
            truncated_svd(truth.params.mean_matrix(), scenario.k),
        )
        for name in BOUND_METRICS:
            values[name] = getattr(report, name)
    seconds = estimate.diagnostics["runtime_seconds"]
    return [
        result_record(scenario, replication, metric, value, seconds)
        for metric, value in values.items()
    ]


def result_record(
    scenario: SimScenario,
    replication: int,
    metric: str,
    value: float,
    seconds: float,
    status: str = "ok",
    error: str = "",
) -> Dict[str, Any]:
    return {
        "scenario": scenario.name,
        "replication": int(replication),
        "family": scenario.family.model_name,
        "N": scenario.n,
        "J": scenario.n_columns,
        "K": scenario.k,
        "metric": metric,
        "value": float(value),
        "seconds": float(seconds),
        "status": status,
        "error": error,
    }


def run_replications(
    scenario: SimScenario,
    cfg: Optional[FitConfig] = None,
    jobs: int = 1,
    cache: Union[BaseCache, bool, str, None] = None,
    replications: Optional[Sequence[int]] = None,
    bounds: bool = False,
) -> pd.DataFrame:
    """
    Simulates, fits and scores every replication of a scenario.

    Replication r draws from stream (scenario.seed, r), so the table does not
    depend on jobs or on completion order. A replication that raises a GomError
    is logged and recorded with status "failed"; the batch goes on.
    Returns a tidy table sorted by replication and metric.
    """
    cfg = cfg or FitConfig()
    cache = check_cache(cache)
    indices = list(range(scenario.replications) if replications is None else replications)
    records: List[Dict[str, Any]] = []
    LOGGER.info(
        f"Running {len(indices)} replications of scenario {scenario.name!r} "
        f"with {jobs} worker(s)"
    )

    def run_one(replication: int) -> List[Dict[str, Any]]:
        key = ("replication", scenario.to_dict(), replication, cfg.as_dict(), bounds)
        return cache.get_or_compute(
            key, lambda: _replication_records(scenario, replication, cfg, bounds)
        )

    with ThreadPoolExecutor(max_workers=max(int(jobs), 1)) as executor:
        future_to_rep = {executor.submit(run_one, r): r for r in indices}
        for idx, future in enumerate(as_completed(future_to_rep)):
            replication = future_to_rep[future]
            try:
                rows = future.result()
            except GomError as e:
                LOGGER.error(f"Replication {replication} of {scenario.name!r} failed: {e}")
                rows = [
                    result_record(
                        scenario,
                        replication,
                        "failed",
                        np.nan,
                        0.0,
                        status="failed",
                        error=f"{type(e).__name__}: {e}",
                    )
                ]
            records += rows
            REPLICATION_FINISHED.send_robust(
                scenario=scenario, replication=replication, record=rows
            )
            LOGGER.info(
                f"-- Replication percentage: {round((idx + 1) / len(indices) * 100, 2)}%"
            )

    table = pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)
    return table.sort_values(["replication", "metric"], kind="stable").reset_index(drop=True)
