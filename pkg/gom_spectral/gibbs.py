"""
Gibbs sampler for the polytomous grade-of-membership model, used as an
accuracy and timing baseline for the spectral estimator.

Each sweep draws the latent profile assignment of every (subject, item)
pair, then every membership row, then every item's category tables.
Items with fewer categories than the largest item are padded and masked.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .data_model import BlockPartition, QuasiTensor
from .exceptions import UsageError
from .metrics import align_permutation
from .utils import make_rng

LOGGER = logging.getLogger(__name__)

DEFAULT_ALPHA: float = 1.0
DEFAULT_BETA: float = 0.2
# log a progress line this many times per chain
PROGRESS_STEPS: int = 10

Prior = Union[None, float, Sequence[float]]


def _prior_vector(prior: Prior, size: int, default: float, name: str) -> np.ndarray:
    if prior is None:
        vector = np.full(size, default)
    else:
        vector = np.atleast_1d(np.asarray(prior, dtype=float))
        if vector.size == 1:
            vector = np.full(size, float(vector[0]))
    if vector.shape != (size,):
        raise UsageError(f"{name} prior needs {size} entries, got {vector.size}")
    if not np.all(vector > 0):
        raise UsageError(f"{name} prior must be entrywise positive")
    return vector


@dataclass(frozen=True)
class GibbsConfig:
    """
    Dirichlet priors (None: alpha 1, beta 0.2 per category), chain lengths and seed
    """

    alpha: Prior = None
    beta: Prior = None
    burnin: int = 5000
    samples: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.burnin) < 0:
            raise UsageError(f"burnin must be >= 0, got {self.burnin}")
        if int(self.samples) < 1:
            raise UsageError(f"samples must be >= 1, got {self.samples}")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if value is not None:
                values = np.atleast_1d(np.asarray(value, dtype=float))
                if not np.all(values > 0):
                    raise UsageError(f"{name} prior must be entrywise positive")
                if values.size == 1:
                    object.__setattr__(self, name, float(values[0]))
                else:
                    object.__setattr__(self, name, tuple(float(v) for v in values))

    def as_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "burnin": int(self.burnin),
            "samples": int(self.samples),
            "seed": int(self.seed),
        }


@dataclass(frozen=True)
class GibbsEstimate:
    """Posterior means of Pi and of the item tables, with the chain's trace"""

    memberships: np.ndarray
    item_tables: List[np.ndarray]
    partition: BlockPartition
    log_likelihood: np.ndarray
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def item_params(self) -> np.ndarray:
        """Item tables stacked into the flattened J x K layout"""
        return np.vstack(self.item_tables)


def _dirichlet(params: np.ndarray, rng: np.random.Generator, axis: int = -1) -> np.ndarray:
    """Gamma-normalized Dirichlet draws along axis; zero parameters give zero mass"""
    draws = rng.standard_gamma(params)
    totals = draws.sum(axis=axis, keepdims=True)
    return draws / np.where(totals > 0, totals, 1.0)


def z_conditional(
    memberships: np.ndarray, tables: np.ndarray, responses: np.ndarray
) -> np.ndarray:
    """
    P(Z_il = k | rest) for every subject i and item l: (N, L, K).

    tables has shape (L, C_max, K); responses are 0-based categories.
    """
    n_items = responses.shape[1]
    chosen = tables[np.arange(n_items)[None, :], responses, :]
    weights = chosen * memberships[:, None, :]
    totals = weights.sum(axis=2, keepdims=True)
    # a zero total only happens after Gamma underflow; fall back to the memberships
    fallback = np.broadcast_to(memberships[:, None, :], weights.shape)
    return np.where(totals > 0, weights / np.where(totals > 0, totals, 1.0), fallback)


def _log_likelihood(
    memberships: np.ndarray, tables: np.ndarray, responses: np.ndarray
) -> float:
    n_items = responses.shape[1]
    chosen = tables[np.arange(n_items)[None, :], responses, :]
    mixture = (chosen * memberships[:, None, :]).sum(axis=2)
    return float(np.log(np.maximum(mixture, np.finfo(float).tiny)).sum())


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cumulative = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cumulative[..., -1:]
    return np.minimum((u >= cumulative).sum(axis=-1), probs.shape[-1] - 1)


def gibbs_fit(
    quasi: QuasiTensor, K: int, cfg: Optional[GibbsConfig] = None, stream: int = 0
) -> GibbsEstimate:
    """
    Runs one chain and averages the post-burn-in draws.

    Profiles are relabelled draw by draw: each draw is matched to the first
    post-burn-in draw on its memberships before it enters the average.
    """
    cfg = cfg or GibbsConfig()
    K = int(K)
    if K < 1:
        raise UsageError(f"K must be positive, got {K}")
    responses = quasi.responses - 1
    n_subjects, n_items = responses.shape
    counts = np.asarray(quasi.category_counts)
    c_max = int(counts.max())
    alpha = _prior_vector(cfg.alpha, K, DEFAULT_ALPHA, "alpha")
    beta = _prior_vector(cfg.beta, c_max, DEFAULT_BETA, "beta")
    # (L, C_max, 1): categories past C_l carry no prior mass and no data
    valid = (np.arange(c_max)[None, :] < counts[:, None])[:, :, None]
    table_prior = np.where(valid, beta[None, :, None], 0.0)

    rng = make_rng(cfg.seed, stream)
    memberships = _dirichlet(np.broadcast_to(alpha, (n_subjects, K)), rng)
    tables = _dirichlet(np.broadcast_to(table_prior, (n_items, c_max, K)), rng, axis=1)

    total = int(cfg.burnin) + int(cfg.samples)
    trace = np.empty(total)
    reference: Optional[np.ndarray] = None
    sum_memberships = np.zeros((n_subjects, K))
    sum_tables = np.zeros((n_items, c_max, K))
    item_index = np.broadcast_to(np.arange(n_items)[None, :], responses.shape)
    start = time.perf_counter()

    for sweep in range(total):
        assignments = _sample_categorical(
            z_conditional(memberships, tables, responses), rng
        )
        profile_counts = np.zeros((n_subjects, K))
        np.add.at(
            profile_counts,
            (np.broadcast_to(np.arange(n_subjects)[:, None], responses.shape), assignments),
            1.0,
        )
        memberships = _dirichlet(profile_counts + alpha, rng)

        category_counts = np.zeros((n_items, c_max, K))
        np.add.at(category_counts, (item_index, responses, assignments), 1.0)
        tables = _dirichlet(np.where(valid, category_counts + table_prior, 0.0), rng, axis=1)

        trace[sweep] = _log_likelihood(memberships, tables, responses)
        if sweep >= cfg.burnin:
            if reference is None:
                reference = memberships
                perm = np.arange(K)
            else:
                perm = align_permutation(reference, memberships)
            sum_memberships += memberships[:, perm]
            sum_tables += tables[:, :, perm]
        if total >= PROGRESS_STEPS and (sweep + 1) % (total // PROGRESS_STEPS) == 0:
            LOGGER.info(
                f"-- Gibbs sweep percentage: {round((sweep + 1) / total * 100, 2)}%"
            )

    runtime = time.perf_counter() - start
    mean_tables = sum_tables / cfg.samples
    item_tables = [mean_tables[l, : counts[l], :] for l in range(n_items)]
    LOGGER.info(
        f"Gibbs chain of {total} sweeps on {n_subjects} subjects and {n_items} items "
        f"finished in {runtime:.2f} seconds"
    )
    return GibbsEstimate(
        memberships=sum_memberships / cfg.samples,
        item_tables=item_tables,
        partition=quasi.partition,
        log_likelihood=trace,
        diagnostics={
            "runtime_seconds": runtime,
            "burnin": int(cfg.burnin),
            "samples": int(cfg.samples),
        },
    )


def trace_slope_tstat(
    trace: np.ndarray, window: Optional[int] = None, batch: int = 1
) -> Tuple[float, float]:
    """
    Least-squares slope of the tail of a log-likelihood trace and its t statistic.

    With batch > 1 the regression runs on means of consecutive batches, which
    keeps the autocorrelation of the chain out of the standard error.
    """
    tail = np.asarray(trace, dtype=float)
    if window is not None:
        tail = tail[-int(window):]
    if batch > 1:
        usable = tail.size - tail.size % batch
        tail = tail[tail.size - usable :].reshape(-1, batch).mean(axis=1)
    fitted = stats.linregress(np.arange(tail.size, dtype=float), tail)
    if fitted.stderr == 0:
        return float(fitted.slope), 0.0
    return float(fitted.slope), float(fitted.slope / fitted.stderr)
