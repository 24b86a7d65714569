"""
Error metrics and perturbation diagnostics: permutation alignment of
profiles, rowwise/entrywise error norms, incoherence and conditioning of the
signal, residual covariances, and evaluation of the two-to-infinity
perturbation bounds with their empirical counterparts.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import special, stats
from scipy.optimize import linear_sum_assignment

from .data_model import Family, ModelParams
from .exceptions import RankDeficiencyError, ValidationError
from .linalg import SvdFactors, truncated_svd

LOGGER = logging.getLogger(__name__)

ORTHONORMAL_TOL: float = 1e-8
RANK_TOL: float = 1e-10
# smallest |threshold| fed to Owen's T; the orthant formula is continuous at 0
_NUDGE: float = 1e-150


@dataclass(frozen=True)
class AlignedError:
    """Errors of an estimate after matching its profiles to the truth"""

    permutation: Tuple[int, ...]
    l2inf_pi: float
    maxabs_theta: float
    mae_pi: float
    mae_theta: float
    frob_scaled: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "l2inf_pi": self.l2inf_pi,
            "maxabs_theta": self.maxabs_theta,
            "mae_pi": self.mae_pi,
            "mae_theta": self.mae_theta,
            "frob_scaled": self.frob_scaled,
        }


@dataclass(frozen=True)
class NoiseStats:
    """Scales of the noise E = R - R*: sigma, block sigma, entry bound B, block size M"""

    sigma: float
    sigma_tilde: float
    B: float
    M: int


@dataclass(frozen=True)
class BoundReport:
    """Perturbation bounds xi1..xi3 next to the perturbations actually observed"""

    mu1: float
    mu2: float
    kappa_star: float
    kappa_pi: float
    sigma: float
    sigma_tilde: float
    B: float
    M: int
    xi1: float
    xi2: float
    xi3: float
    empirical_u: float
    empirical_v: float
    empirical_entry: float
    ratio_u: float
    ratio_v: float
    ratio_entry: float
    mu1_within_kappa_bound: bool

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_same_shape(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def align_permutation(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    Column permutation perm minimizing sum_k ||A[:, k] - B[:, perm[k]]||_1.

    B[:, perm] is B P for the permutation matrix P returned by permutation_matrix.
    """
    A, B = _check_same_shape(A, B)
    cost = np.abs(A[:, :, None] - B[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(A.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    P = np.zeros((perm.size, perm.size))
    P[perm, np.arange(perm.size)] = 1.0
    return P


def l2inf(A: np.ndarray, B: np.ndarray) -> float:
    """Largest row l2 norm of A - B"""
    A, B = _check_same_shape(A, B)
    return float(np.linalg.norm(A - B, axis=1).max())


def maxabs(A: np.ndarray, B: np.ndarray) -> float:
    A, B = _check_same_shape(A, B)
    return float(np.abs(A - B).max())


def mae(A: np.ndarray, B: np.ndarray) -> float:
    A, B = _check_same_shape(A, B)
    return float(np.abs(A - B).mean())


def scaled_frobenius(Rstar: np.ndarray, Pi: np.ndarray, Theta: np.ndarray) -> float:
    """(NJ)^-1/2 ||R* - Pi Theta^T||_F"""
    Rstar, fitted = _check_same_shape(Rstar, np.asarray(Pi) @ np.asarray(Theta).T)
    return float(np.linalg.norm(Rstar - fitted) / np.sqrt(Rstar.size))


def aligned_error(Pi_hat: np.ndarray, Theta_hat: np.ndarray, truth: ModelParams):
    """
    Matches estimated profiles to the true ones on Pi, then scores both matrices
    """
    perm = align_permutation(Pi_hat, truth.memberships)
    Pi_star = truth.memberships[:, perm]
    Theta_star = truth.item_params[:, perm]
    return AlignedError(
        permutation=tuple(int(p) for p in perm),
        l2inf_pi=l2inf(Pi_hat, Pi_star),
        maxabs_theta=maxabs(Theta_hat, Theta_star),
        mae_pi=mae(Pi_hat, Pi_star),
        mae_theta=mae(Theta_hat, Theta_star),
        frob_scaled=scaled_frobenius(truth.mean_matrix(), Pi_hat, Theta_hat),
    )


def _check_orthonormal(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    gram = matrix.T @ matrix
    deviation = np.abs(gram - np.eye(gram.shape[0])).max()
    if deviation > ORTHONORMAL_TOL:
        raise ValidationError(
            f"{name} columns are not orthonormal (max |{name}^T {name} - I| = {deviation:.3g})"
        )
    return matrix


def incoherence(Ustar: np.ndarray, Vstar: np.ndarray) -> Tuple[float, float]:
    """
    mu1 = (N / K) ||U*||_2inf^2 and mu2 = (J / K) ||V*||_2inf^2
    """
    Ustar = _check_orthonormal(Ustar, "U")
    Vstar = _check_orthonormal(Vstar, "V")
    n_rows, K = Ustar.shape
    n_cols = Vstar.shape[0]
    mu1 = n_rows / K * float((Ustar**2).sum(axis=1).max())
    mu2 = n_cols / K * float((Vstar**2).sum(axis=1).max())
    return mu1, mu2


def condition_number(matrix: np.ndarray) -> float:
    """sigma_1 / sigma_min over the nonzero singular values"""
    singular_values = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    nonzero = singular_values[singular_values > RANK_TOL * singular_values[0]]
    return float(nonzero[0] / nonzero[-1])


def residual_covariance(
    R: np.ndarray,
    Pi: np.ndarray,
    Theta: np.ndarray,
    column_range: Union[slice, Tuple[int, int], range],
) -> np.ndarray:
    """
    Sample covariance over subjects of the selected columns of R - Pi Theta^T.

    With the true parameters this is the covariance of the noise itself; with
    estimates it is the covariance of the fitted residuals.
    """
    R = np.asarray(R, dtype=float)
    n_cols = R.shape[1]
    if isinstance(column_range, (tuple, range)):
        start, stop = (
            (column_range.start, column_range.stop)
            if isinstance(column_range, range)
            else (int(column_range[0]), int(column_range[1]))
        )
        if start < 0 or stop > n_cols:
            raise ValidationError(
                f"column range {column_range!r} outside [0, {n_cols})"
            )
        columns = np.arange(start, stop)
    else:
        columns = np.arange(n_cols)[column_range]
    if columns.size == 0:
        raise ValidationError(f"empty column range {column_range!r}")
    residual = R[:, columns] - np.asarray(Pi) @ np.asarray(Theta)[columns].T
    return np.atleast_2d(np.cov(residual, rowvar=False))


def bivariate_normal_cdf(h, k, rho) -> np.ndarray:
    """
    P(X <= h, Y <= k) for standard normals with correlation rho, |rho| < 1.

    Vectorized through Owen's T function.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    rho = np.asarray(rho, dtype=float)
    h = np.where(h == 0.0, _NUDGE, h)
    k = np.where(k == 0.0, _NUDGE, k)
    scale = np.sqrt(1.0 - rho**2)
    a_h = (k - rho * h) / (h * scale)
    a_k = (h - rho * k) / (k * scale)
    correction = np.where(h * k < 0, 0.5, 0.0)
    return (
        0.5 * special.ndtr(h)
        + 0.5 * special.ndtr(k)
        - special.owens_t(h, a_h)
        - special.owens_t(k, a_k)
        - correction
    )


def _max_block_eigenvalue(covariances: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(covariances)[..., -1].max())


def noise_stats(
    truth: ModelParams, rho: float = 0.0, clamp: float = 1e-12
) -> NoiseStats:
    """
    Exact noise scales of the generator that produced data from truth.

    Blocks come from truth.partition (one-hot items, or copula blocks for
    Bernoulli data generated with AR(rho) dependence).
    """
    mean = truth.mean_matrix()
    n_rows, n_cols = mean.shape
    partition = truth.partition
    family = truth.family

    if family is Family.POISSON:
        rate = float(mean.max())
        level = max(n_rows, n_cols) ** -22.0
        bound = float(stats.poisson.isf(level, rate)) if rate > 0 else 0.0
        return NoiseStats(np.sqrt(rate), np.sqrt(rate), bound, 1)

    p = np.clip(mean, 0.0, 1.0)
    bound = float(np.maximum(p, 1.0 - p).max()) if np.any(p * (1 - p) > 0) else 0.0
    if family is Family.BINOMIAL_HALVED:
        sigma = float(np.sqrt((p * (1 - p) / 2.0).max()))
        return NoiseStats(sigma, sigma, bound, 1)

    sigma = float(np.sqrt((p * (1 - p)).max()))
    if partition is None or partition.max_block == 1:
        return NoiseStats(sigma, sigma, bound, 1)

    if family is Family.BERNOULLI_GENERAL and rho == 0.0:
        return NoiseStats(sigma, sigma, bound, partition.max_block)

    thresholds = special.ndtri(np.clip(p, clamp, 1.0 - clamp))
    largest = 0.0
    for block in partition.blocks:
        pb = p[:, block]
        idx = np.arange(pb.shape[1])
        if family is Family.BERNOULLI_ONEHOT:
            cov = -pb[:, :, None] * pb[:, None, :]
        else:
            db = thresholds[:, block]
            # diagonal is overwritten below, lag 0 only needs a valid correlation
            lags = np.maximum(np.abs(np.subtract.outer(idx, idx)), 1)
            joint = bivariate_normal_cdf(
                db[:, :, None], db[:, None, :], float(rho) ** lags
            )
            cov = joint - pb[:, :, None] * pb[:, None, :]
        cov[:, idx, idx] = pb * (1 - pb)
        largest = max(largest, _max_block_eigenvalue(cov))
    return NoiseStats(sigma, float(np.sqrt(max(largest, 0.0))), bound, partition.max_block)


def theory_bounds(
    truth: ModelParams,
    noise: NoiseStats,
    factors: SvdFactors,
    factors_star: Optional[SvdFactors] = None,
) -> BoundReport:
    """
    Evaluates the two-to-infinity bounds xi1 (left subspace), xi2 (right
    subspace) and xi3 (entrywise rank-K reconstruction) with absolute constants
    set to 1, and the empirical perturbations they bound.
    """
    Rstar = truth.mean_matrix()
    n_rows, n_cols = Rstar.shape
    K = truth.n_profiles
    if factors_star is None:
        factors_star = truncated_svd(Rstar, K)
    s_star = factors_star.singular_values
    if s_star[-1] <= RANK_TOL * max(s_star[0], 1.0):
        raise RankDeficiencyError(
            f"R* has sigma_K = {s_star[-1]:.3g}; rank is below K={K}"
        )
    Ustar, Vstar = factors_star.U, factors_star.V
    mu1, mu2 = incoherence(Ustar, Vstar)
    kappa_star = float(s_star[0] / s_star[-1])
    sigma_K = float(s_star[-1])
    log_d = np.log(max(n_rows, n_cols))
    sigma, sigma_tilde, B, M = noise.sigma, noise.sigma_tilde, noise.B, noise.M

    left = np.sqrt(mu1 * K / n_rows)
    right = np.sqrt(mu2 * K / n_cols)
    spread = np.sqrt(M * n_rows + n_cols)
    xi1 = (
        sigma_tilde * np.sqrt(n_rows * log_d) / sigma_K * left
        + kappa_star * sigma**2 * n_cols / sigma_K**2 * left
        + sigma * M * B * log_d * spread / sigma_K**2 * right
    )
    xi2 = (
        sigma * np.sqrt(n_cols * log_d) / sigma_K * right
        + kappa_star * sigma**2 * M * n_rows / sigma_K**2 * right
        + sigma * B * log_d * spread / sigma_K**2 * left
    )
    xi3 = kappa_star * K * sigma * log_d * np.sqrt(mu1 * mu2) * np.sqrt(
        M / n_cols + 1.0 / n_rows
    ) + M * B * log_d * (mu2 * K / n_cols + mu1 * K / (M * n_rows))

    U, V = factors.U, factors.V
    empirical_u = float(np.linalg.norm(U @ (U.T @ Ustar) - Ustar, axis=1).max())
    empirical_v = float(np.linalg.norm(V @ (V.T @ Vstar) - Vstar, axis=1).max())
    empirical_entry = float(np.abs(factors.reconstruct() - Rstar).max())

    def ratio(observed: float, bound: float) -> float:
        return observed / bound if bound > 0 else float("nan")

    kappa_pi = condition_number(truth.memberships)
    report = BoundReport(
        mu1=mu1,
        mu2=mu2,
        kappa_star=kappa_star,
        kappa_pi=kappa_pi,
        sigma=sigma,
        sigma_tilde=sigma_tilde,
        B=B,
        M=M,
        xi1=float(xi1),
        xi2=float(xi2),
        xi3=float(xi3),
        empirical_u=empirical_u,
        empirical_v=empirical_v,
        empirical_entry=empirical_entry,
        ratio_u=ratio(empirical_u, float(xi1)),
        ratio_v=ratio(empirical_v, float(xi2)),
        ratio_entry=ratio(empirical_entry, float(xi3)),
        mu1_within_kappa_bound=bool(mu1 <= kappa_pi**2 * (1 + 1e-9)),
    )
    LOGGER.info(
        f"Bounds xi1={report.xi1:.3g} xi2={report.xi2:.3g} xi3={report.xi3:.3g}; "
        f"observed/bound ratios {report.ratio_u:.3g}, {report.ratio_v:.3g}, "
        f"{report.ratio_entry:.3g}"
    )
    return report
