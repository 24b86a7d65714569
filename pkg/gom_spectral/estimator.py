"""
End-to-end spectral fit of a generalized grade-of-membership model:
truncated SVD -> pruning -> SPA -> closed-form Pi and Theta -> family
specific post-processing
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .data_model import BlockPartition, Family, FlatMatrix, validate
from .events import FIT_FINISHED
from .exceptions import (
    DegenerateBlockError,
    SingularVertexError,
    UsageError,
    ValidationError,
)
from .linalg import SvdFactors, truncated_svd
from .utils import StageTimer
from .vertex_hunting import PruneConfig, VertexResult, hunt_vertices

LOGGER = logging.getLogger(__name__)

DEFAULT_EPSILON: float = 1e-8
MAX_CONDITION: float = 1e8


@dataclass(frozen=True)
class FitConfig:
    """
    Estimator settings; prune=None disables the pruning step
    """

    prune: Optional[PruneConfig] = field(default_factory=PruneConfig)
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")

    def as_dict(self) -> Dict[str, Any]:
        prune = None
        if self.prune is not None:
            prune = {"r": self.prune.r, "q": self.prune.q, "e": self.prune.e}
        return {"prune": prune, "epsilon": self.epsilon, "seed": self.seed}


@dataclass(frozen=True)
class GomEstimate:
    """
    Everything one spectral fit produces
    """

    vertices: VertexResult
    memberships_raw: np.ndarray
    memberships: np.ndarray
    item_params_raw: np.ndarray
    item_params: np.ndarray
    factors: SvdFactors
    family: Family
    partition: BlockPartition
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_profiles(self) -> int:
        return self.memberships.shape[1]

    def mean_matrix(self) -> np.ndarray:
        """Pi_post Theta_post^T"""
        return self.memberships @ self.item_params.T

    def expected_counts(self) -> np.ndarray:
        """
        Item parameters on the data scale: 2 * Theta for binomial fits
        """
        if self.family is Family.BINOMIAL_HALVED:
            return 2.0 * self.item_params
        return self.item_params


def estimate_memberships(factors: SvdFactors, S: Sequence[int]) -> np.ndarray:
    """
    Pi_hat = U (U[S, :])^-1
    """
    U = factors.U
    U_S = U[np.asarray(S, dtype=int)]
    if U_S.shape[0] != U.shape[1]:
        raise UsageError(f"need {U.shape[1]} vertex rows, got {U_S.shape[0]}")
    condition = np.linalg.cond(U_S)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularVertexError(
            f"vertex rows {list(S)} are near singular (condition number {condition:.3g})",
            condition_number=float(condition),
        )
    return np.linalg.solve(U_S.T, U.T).T


def postprocess_memberships(raw: np.ndarray) -> np.ndarray:
    """
    Clips negative memberships to 0 and renormalizes each row to the simplex.

    A row with no positive entry maps to the uniform vector 1/K.
    """
    clipped = np.clip(np.asarray(raw, dtype=float), 0.0, None)
    n_profiles = clipped.shape[1]
    sums = clipped.sum(axis=1, keepdims=True)
    degenerate = sums[:, 0] <= 0
    if degenerate.any():
        LOGGER.warning(
            f"{int(degenerate.sum())} membership rows had no positive entry; "
            f"set to uniform 1/{n_profiles}"
        )
    safe = np.where(degenerate[:, None], 1.0, sums)
    return np.where(degenerate[:, None], 1.0 / n_profiles, clipped / safe)


def estimate_item_params(factors: SvdFactors, S: Sequence[int]) -> np.ndarray:
    """
    Theta_hat = V Lambda U[S, :]^T
    """
    U_S = factors.U[np.asarray(S, dtype=int)]
    return (factors.V * factors.singular_values) @ U_S.T


def postprocess_item_params(
    raw: np.ndarray,
    family: Family,
    partition: Optional[BlockPartition] = None,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """
    Maps raw item parameters into their family's range.

    Probabilities are clipped to [0, 1]; polytomous blocks are then
    renormalized per (item, profile). Poisson rates below epsilon become epsilon.
    """
    raw = np.asarray(raw, dtype=float)
    family = Family.parse(family)
    if family is Family.POISSON:
        return np.where(raw < epsilon, epsilon, raw)

    clipped = np.clip(raw, 0.0, 1.0)
    if family is not Family.BERNOULLI_ONEHOT:
        return clipped
    if partition is None:
        raise UsageError("polytomous post-processing needs the item block partition")
    sums = partition.block_sums(clipped.T)
    if (sums <= 0).any():
        k, l = (int(v) for v in np.argwhere(sums <= 0)[0])
        raise DegenerateBlockError(l, k)
    return clipped / np.repeat(sums.T, partition.sizes, axis=0)


def fit(data: FlatMatrix, K: int, cfg: Optional[FitConfig] = None) -> GomEstimate:
    """
    Spectral estimate of (Pi, Theta) from a flat data matrix
    """
    cfg = cfg or FitConfig()
    n_rows, n_cols = data.shape
    K = int(K)
    if not 1 <= K <= min(n_rows, n_cols):
        raise UsageError(f"K={K} must lie in [1, min(N, J)={min(n_rows, n_cols)}]")
    violations = validate(data)
    if violations:
        raise ValidationError(
            f"{data.family.value} data breaks {len(violations)} invariant(s); "
            f"first: {violations[0]}",
            violations=violations,
        )

    timer = StageTimer()
    start = time.perf_counter()
    with timer.stage("svd"):
        factors = truncated_svd(data.values, K, seed=cfg.seed)
    with timer.stage("vertex_hunting"):
        vertices = hunt_vertices(factors.U, K, cfg.prune)
    # VertexResult refuses overlap, so this only guards future refactors
    assert not set(vertices.indices) & set(vertices.pruned)

    with timer.stage("estimation"):
        memberships_raw = estimate_memberships(factors, vertices.indices)
        memberships = postprocess_memberships(memberships_raw)
        item_params_raw = estimate_item_params(factors, vertices.indices)
        item_params = postprocess_item_params(
            item_params_raw, data.family, data.partition, cfg.epsilon
        )

    runtime = time.perf_counter() - start
    diagnostics = {
        "runtime_seconds": runtime,
        "stage_seconds": dict(timer.timings),
        "gap_warning": factors.gap_warning,
        "svd_method": factors.method,
        "n_pruned": len(vertices.pruned),
        "degenerate_membership_rows": int(
            (np.clip(memberships_raw, 0.0, None).sum(axis=1) <= 0).sum()
        ),
        "singular_values": factors.singular_values.tolist(),
    }
    estimate = GomEstimate(
        vertices=vertices,
        memberships_raw=memberships_raw,
        memberships=memberships,
        item_params_raw=item_params_raw,
        item_params=item_params,
        factors=factors,
        family=data.family,
        partition=data.partition,
        diagnostics=diagnostics,
    )
    LOGGER.info(
        f"Fitted {data.family.model_name} GoM model with K={K} on "
        f"{n_rows}x{n_cols} data in {runtime:.3f} seconds"
    )
    FIT_FINISHED.send_robust(estimate=estimate)
    return estimate
