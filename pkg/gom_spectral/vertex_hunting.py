"""
Vertex hunting on the rows of U: pruning of isolated high-norm rows, then
the successive projection algorithm to locate one pure subject per profile
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DegenerateInputError, UsageError, ValidationError

LOGGER = logging.getLogger(__name__)

ZERO_NORM: float = 1e-12
MAX_PRUNED_FRACTION: float = 0.2
ENCLOSURE_TOL: float = 1e-8
ENCLOSURE_MAX_CONDITION: float = 1e8


@dataclass(frozen=True)
class PruneConfig:
    """
    r: neighbour count, q: upper norm quantile inspected, e: distance tolerance
    """

    r: int = 10
    q: float = 0.4
    e: float = 0.2

    def __post_init__(self) -> None:
        if int(self.r) != self.r or self.r < 1:
            raise UsageError(f"prune r must be a positive integer, got {self.r}")
        if not 0.0 < self.q < 1.0:
            raise UsageError(f"prune q must lie in (0, 1), got {self.q}")
        if not self.e >= 0.0:
            raise UsageError(f"prune e must be nonnegative, got {self.e}")
        object.__setattr__(self, "r", int(self.r))

    @classmethod
    def parse(cls, text: str) -> Optional["PruneConfig"]:
        """
        Reads the command-line form "r,q,e"; "none" disables pruning
        """
        if text.strip().lower() in ("none", "off", "no"):
            return None
        parts = text.split(",")
        if len(parts) != 3:
            raise UsageError(f"--prune expects r,q,e, got {text!r}")
        try:
            return cls(int(parts[0]), float(parts[1]), float(parts[2]))
        except ValueError as error:
            raise UsageError(f"--prune expects r,q,e, got {text!r}: {error}") from None


@dataclass(frozen=True)
class VertexResult:
    """
    Selected vertex rows in selection order, and the rows barred from selection
    """

    indices: Tuple[int, ...]
    pruned: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        indices = tuple(int(i) for i in self.indices)
        pruned = tuple(sorted(int(i) for i in self.pruned))
        if len(set(indices)) != len(indices):
            raise ValidationError(f"vertex indices are not distinct: {indices}")
        if set(indices) & set(pruned):
            raise ValidationError("a pruned row was selected as a vertex")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "pruned", pruned)


def prune(U: np.ndarray, cfg: PruneConfig) -> np.ndarray:
    """
    Returns the sorted indices of high-norm rows that sit far from their neighbours.

    Rows above the (1 - q) quantile of row norms are inspected; a row is pruned
    when its mean distance to its r nearest rows exceeds (1 + e) times the median
    of that statistic over the inspected rows. At most 20% of rows are pruned,
    the most isolated first.
    """
    U = np.asarray(U, dtype=float)
    n_rows, n_cols = U.shape
    if n_rows <= n_cols:
        raise UsageError(f"pruning needs N > K, got N={n_rows}, K={n_cols}")
    if cfg.r >= n_rows:
        raise UsageError(f"pruning needs r < N, got r={cfg.r}, N={n_rows}")

    norms = np.linalg.norm(U, axis=1)
    inspected = np.flatnonzero(norms > np.quantile(norms, 1.0 - cfg.q))
    if inspected.size == 0:
        return np.array([], dtype=int)

    distances = cdist(U[inspected], U)
    distances[np.arange(inspected.size), inspected] = np.inf
    nearest = np.partition(distances, cfg.r - 1, axis=1)[:, : cfg.r]
    spread = nearest.mean(axis=1)

    with np.errstate(invalid="ignore"):
        threshold = (1.0 + cfg.e) * np.median(spread)
        flagged = spread > threshold

    cap = int(np.floor(MAX_PRUNED_FRACTION * n_rows))
    if flagged.sum() > cap:
        order = np.argsort(-spread, kind="stable")
        keep = order[:cap]
        flagged = np.zeros_like(flagged)
        flagged[keep] = True
    pruned = np.sort(inspected[flagged])
    LOGGER.info(f"Pruned {pruned.size} of {n_rows} rows before vertex hunting")
    return pruned


def spa(
    Y: np.ndarray, K: int, candidates: Optional[Iterable[int]] = None
) -> VertexResult:
    """
    Successive projection: pick the candidate row of largest norm, project every
    row onto the orthogonal complement of it, repeat K times.

    Ties go to the lowest row index.
    """
    Y = np.array(Y, dtype=float, copy=True)
    n_rows = Y.shape[0]
    if Y.ndim != 2 or Y.shape[1] != K:
        raise UsageError(f"SPA expects an N x {K} matrix, got shape {Y.shape}")
    if candidates is None:
        candidate_rows = np.arange(n_rows)
    else:
        candidate_rows = np.unique(np.asarray(list(candidates), dtype=int))
    if candidate_rows.size < K:
        raise DegenerateInputError(
            f"SPA needs at least K={K} candidate rows, got {candidate_rows.size}"
        )

    selected = []
    for step in range(K):
        norms = np.linalg.norm(Y[candidate_rows], axis=1)
        best = int(np.argmax(norms))
        if norms[best] < ZERO_NORM:
            raise DegenerateInputError(
                f"all candidate rows have zero norm after {step} of {K} selections"
            )
        index = int(candidate_rows[best])
        selected.append(index)
        u = Y[index] / norms[best]
        Y -= np.outer(Y @ u, u)

    excluded = np.setdiff1d(np.arange(n_rows), candidate_rows)
    return VertexResult(tuple(selected), tuple(excluded))


def encloses_all_rows(
    U: np.ndarray, indices: Sequence[int], tol: float = ENCLOSURE_TOL
) -> bool:
    """
    True when every row of U is a convex combination of the rows at indices,
    up to tol on the barycentric coordinates
    """
    U_S = U[list(indices)]
    if np.linalg.cond(U_S) > ENCLOSURE_MAX_CONDITION:
        return False
    coordinates = np.linalg.solve(U_S.T, U.T).T
    return bool(coordinates.min() >= -tol)


def hunt_vertices(
    U: np.ndarray, K: int, cfg: Optional[PruneConfig] = PruneConfig()
) -> VertexResult:
    """
    Pruning followed by SPA; pruned rows only lose their vertex candidacy.

    Pruning is skipped when cfg is None, when there are too few rows for r
    neighbours, or when the vertices SPA finds on all rows already enclose
    every row (noiseless simplex data, whose only isolated rows are the vertices).
    """
    n_rows = U.shape[0]
    pruned = np.array([], dtype=int)
    if cfg is not None:
        if cfg.r < n_rows and n_rows > K:
            unpruned = spa(U, K)
            if encloses_all_rows(U, unpruned.indices):
                LOGGER.info(
                    f"SPA vertex rows {list(unpruned.indices)} enclose every row; "
                    "pruning skipped"
                )
                return unpruned
            pruned = prune(U, cfg)
        else:
            LOGGER.warning(
                f"Skipping pruning: N={n_rows} rows is too few for r={cfg.r} neighbours"
            )
    candidates = np.setdiff1d(np.arange(n_rows), pruned)
    result = spa(U, K, candidates)
    LOGGER.info(f"SPA selected vertex rows {list(result.indices)}")
    return result
