"""
Rank-K truncated SVD of a data matrix, a dense full-SVD oracle and a power
iteration spectral norm
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.utils.extmath import randomized_range_finder

from .exceptions import UsageError, ValidationError

LOGGER = logging.getLogger(__name__)

# below this min(N, J) the dense LAPACK factorization is cheaper than sketching
DENSE_CUTOFF: int = 64
ORACLE_MAX_DIM: int = 500
OVERSAMPLES: int = 10
POWER_ITERATIONS: int = 2
REFINE_TOL: float = 1e-13
REFINE_MAX_SWEEPS: int = 500
GAP_TOLERANCE: float = 1e-6


@dataclass(frozen=True)
class SvdFactors:
    """
    U (N x K), singular values (K,), V (J x K) with U diag(s) V^T ~ M
    """

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    gap_warning: bool = False
    method: str = "dense"

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    @property
    def Lambda(self) -> np.ndarray:
        return np.diag(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T

    def permute_rows(self, order) -> "SvdFactors":
        return SvdFactors(
            self.U[np.asarray(order)],
            self.singular_values,
            self.V,
            self.gap_warning,
            self.method,
        )


def _check_finite(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        i, j = (int(v) for v in np.argwhere(~np.isfinite(matrix))[0])
        raise ValidationError("matrix has non-finite entries", location=(i, j))
    return matrix


def _fix_signs(U: np.ndarray, V: np.ndarray):
    """
    Makes the first nonzero entry of every column of U nonnegative
    """
    U = U.copy()
    V = V.copy()
    for k in range(U.shape[1]):
        column = U[:, k]
        nonzero = np.flatnonzero(np.abs(column) > 1e-12)
        if nonzero.size and column[nonzero[0]] < 0:
            U[:, k] = -column
            V[:, k] = -V[:, k]
    return U, V


def dense_svd_oracle(matrix) -> SvdFactors:
    """
    Full thin SVD through LAPACK, for tests and small inputs only
    """
    matrix = _check_finite(matrix)
    if min(matrix.shape) > ORACLE_MAX_DIM:
        raise UsageError(
            f"dense oracle refuses min(N, J)={min(matrix.shape)} > {ORACLE_MAX_DIM}"
        )
    U, s, Vt = np.linalg.svd(matrix, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    return SvdFactors(U, s, V, False, "dense")


def _refine_subspace(matrix: np.ndarray, Q: np.ndarray, n_keep: int):
    """
    Block power sweeps on the range basis Q until the leading n_keep singular
    values move by at most REFINE_TOL * sigma_1 between sweeps
    """
    Ub, s, Vt = np.linalg.svd(Q.T @ matrix, full_matrices=False)
    for sweep in range(1, REFINE_MAX_SWEEPS + 1):
        Q, _ = np.linalg.qr(matrix @ Vt.T)
        Ub_next, s_next, Vt = np.linalg.svd(Q.T @ matrix, full_matrices=False)
        change = float(np.abs(s_next[:n_keep] - s[:n_keep]).max())
        Ub, s = Ub_next, s_next
        if change <= REFINE_TOL * s[0]:
            LOGGER.debug(f"Randomized SVD settled after {sweep} refinement sweeps")
            break
    else:
        LOGGER.warning(
            f"Randomized SVD still moving after {REFINE_MAX_SWEEPS} sweeps "
            f"(last change {change:.3g}); singular values may be inaccurate"
        )
    return Q @ Ub, s, Vt.T


def truncated_svd(matrix, K: int, seed: int = 0) -> SvdFactors:
    """
    Top-K singular triplets of matrix.

    Small inputs go through the dense oracle; larger ones through a randomized
    range finder (oversampling 10, two QR-normalized power iterations) followed
    by block power sweeps until the singular values settle to working precision.
    One extra triplet is computed to check the gap sigma_K - sigma_{K+1}; when
    it is below 1e-6 sigma_1 the factors are still returned with gap_warning set.
    """
    matrix = _check_finite(matrix)
    n_rows, n_cols = matrix.shape
    K = int(K)
    if not 1 <= K <= min(n_rows, n_cols):
        raise UsageError(f"K={K} must lie in [1, min(N, J)={min(n_rows, n_cols)}]")

    extra = 1 if K < min(n_rows, n_cols) else 0
    if min(n_rows, n_cols) <= DENSE_CUTOFF:
        full = dense_svd_oracle(matrix)
        U, s, V = full.U, full.singular_values, full.V
        method = "dense"
    else:
        width = min(K + extra + OVERSAMPLES, n_rows, n_cols)
        Q = randomized_range_finder(
            matrix,
            size=width,
            n_iter=POWER_ITERATIONS,
            power_iteration_normalizer="QR",
            random_state=seed,
        )
        U, s, V = _refine_subspace(matrix, Q, K)
        method = "randomized"

    gap_warning = False
    if extra:
        gap = s[K - 1] - s[K]
        if gap <= GAP_TOLERANCE * s[0]:
            gap_warning = True
            LOGGER.warning(
                f"Spectral gap sigma_K - sigma_K+1 = {gap:.3g} is below "
                f"{GAP_TOLERANCE:g} * sigma_1; the rank-{K} subspace is not reliable"
            )
    U, V = _fix_signs(U[:, :K], V[:, :K])
    return SvdFactors(U, s[:K].copy(), V, gap_warning, method)


def spectral_norm(
    matrix, seed: int = 0, tol: float = 1e-13, max_iter: int = 100000
) -> float:
    """
    Largest singular value by power iteration on M^T M with a seeded start vector
    """
    matrix = _check_finite(matrix)
    if not matrix.size or not np.any(matrix):
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(matrix.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = matrix @ x
        estimate = float(np.linalg.norm(y))
        z = matrix.T @ y
        z_norm = np.linalg.norm(z)
        if z_norm == 0.0:
            return estimate
        x = z / z_norm
        if abs(estimate - sigma) <= tol * estimate:
            return estimate
        sigma = estimate
    LOGGER.warning(f"Power iteration did not converge in {max_iter} steps")
    if min(matrix.shape) <= ORACLE_MAX_DIM:
        return float(dense_svd_oracle(matrix).singular_values[0])
    return sigma
