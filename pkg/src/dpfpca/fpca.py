"""Private functional PCA through the exponential mechanism.

The utility of a rank-k projection P is sum_i ||P X_i||^2, which moves by at
most 1 when one record in the unit ball is replaced. With a Gaussian-span base
measure of covariance Sigma, the mechanism in basis coordinates is the matrix
Bingham law exp((eps/2) tr(V'(X'X - Sigma^-1)V)), sampled by Gibbs.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .bingham import (
    DEFAULT_BURN_IN,
    ChainResult,
    StiefelPoint,
    build_bingham_parameter,
    orthonormalize,
    run_chain,
)
from .covariance import CovarianceOperator
from .errors import DataError
from .expmech import ObjectiveSpec
from .hilbert import SIGN_TOL, BasisSet, CoefMatrix, Curve, Dataset, project, reconstruct

logger = logging.getLogger(__name__)

FPCA_SENSITIVITY = 1.0
NORM_TOL = 1e-9
TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """Orthogonal projection P of rank k, optionally with an orthonormal V (P = VV')."""

    P: np.ndarray
    rank: int
    V: np.ndarray | None = None
    nonunique: bool = False
    reorthonormalized: bool = False

    def __post_init__(self):
        p = np.array(self.P, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DataError("P must be square")
        if np.max(np.abs(p - p.T)) > 1e-8:
            raise DataError("P is not symmetric")
        if np.max(np.abs(p @ p - p)) > 1e-8:
            raise DataError("P is not idempotent")
        if abs(np.trace(p) - self.rank) > 1e-6:
            raise DataError(f"trace(P) = {np.trace(p):.6g} differs from rank {self.rank}")
        p.setflags(write=False)
        object.__setattr__(self, "P", p)

    @property
    def m(self) -> int:
        return self.P.shape[0]


def _matrix(P) -> np.ndarray:
    return P.P if isinstance(P, ProjectionOperator) else np.asarray(P, dtype=float)


def _coefs(coefs) -> np.ndarray:
    return coefs.entries if isinstance(coefs, CoefMatrix) else np.asarray(coefs, dtype=float)


def check_clipped(x: np.ndarray) -> None:
    norms = np.sqrt(np.sum(x**2, axis=1))
    if np.any(norms > 1.0 + NORM_TOL):
        i = int(np.argmax(norms))
        raise DataError(
            f"record {i} has norm {norms[i]:.6g} > 1; clip the data first or the sensitivity bound is void"
        )


def projection_from_span(V) -> ProjectionOperator:
    """P = VV'. A V whose columns are not orthonormal is re-orthonormalized first."""
    v = V.V if isinstance(V, StiefelPoint) else np.asarray(V, dtype=float)
    fixed = False
    if np.max(np.abs(v.T @ v - np.eye(v.shape[1]))) > 1e-8:
        logger.warning("V was not orthonormal; re-orthonormalized before forming P")
        v = orthonormalize(v)
        fixed = True
    p = v @ v.T
    return ProjectionOperator((p + p.T) / 2, v.shape[1], V=v, reorthonormalized=fixed)


def fpca_objective(coefs, P) -> float:
    """sum_i ||P x_i||^2 = tr(P X'X P), for records clipped to the unit ball."""
    x = _coefs(coefs)
    check_clipped(x)
    px = x @ _matrix(P)
    return float(np.sum(px * px))


def is_rank_k_projection(P, k: int) -> bool:
    p = _matrix(P)
    return (
        p.ndim == 2
        and p.shape[0] == p.shape[1]
        and np.max(np.abs(p - p.T)) <= 1e-8
        and np.max(np.abs(p @ p - p)) <= 1e-8
        and abs(np.trace(p) - k) <= 1e-6
    )


def fpca_objective_spec(k: int) -> ObjectiveSpec:
    """The FPCA utility as an exponential-mechanism objective (sensitivity 1)."""
    return ObjectiveSpec(
        evaluate=lambda x, P: fpca_objective(x, P),
        sensitivity=FPCA_SENSITIVITY,
        support="projections",
        name=f"fpca(k={k})",
        in_support=lambda P: is_rank_k_projection(P, k),
    )


def _order_eigenpairs(lam: np.ndarray, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decreasing eigenvalues; ties ordered lexicographically by coordinate mass."""
    vec = np.array(vec)
    for j in range(vec.shape[1]):
        big = np.flatnonzero(np.abs(vec[:, j]) > SIGN_TOL)
        if big.size and vec[big[0], j] < 0:
            vec[:, j] *= -1
    scale = max(float(np.max(np.abs(lam))), 1.0)
    rounded = np.round(lam / (TIE_TOL * scale))
    keys = [(-rounded[j],) + tuple(np.round(-np.abs(vec[:, j]), 12)) for j in range(lam.size)]
    order = sorted(range(lam.size), key=lambda j: keys[j])
    return lam[order], vec[:, order]


def nonprivate_fpca(coefs, k: int) -> ProjectionOperator:
    """Projection onto the top-k eigenvectors of X'X."""
    x = _coefs(coefs)
    n, m = x.shape
    if not 1 <= k <= min(n, m):
        raise DataError(f"k={k} must lie in [1, min(n, m) = {min(n, m)}]")
    lam, vec = np.linalg.eigh(x.T @ x)
    lam, vec = _order_eigenpairs(lam[::-1], vec[:, ::-1])
    nonunique = k < m and abs(lam[k - 1] - lam[k]) <= TIE_TOL * max(abs(lam[0]), 1.0)
    if nonunique:
        logger.warning("eigenvalues %d and %d tie; the top-%d subspace is not unique", k, k + 1, k)
    v = vec[:, :k]
    p = v @ v.T
    return ProjectionOperator((p + p.T) / 2, k, V=v, nonunique=bool(nonunique))


def _gram_frobenius_sq(x: np.ndarray, p: np.ndarray) -> float:
    # ||X_c' P X_c||_F^2 with X_c the m x n column-records layout
    g = x @ p @ x.T
    return float(np.sum(g * g))


def variance_ratio(coefs, P_tilde, P_hat) -> float:
    """||X'P~X||_F^2 / ||X'P^X||_F^2 with records as columns of X."""
    x = _coefs(coefs)
    den = _gram_frobenius_sq(x, _matrix(P_hat))
    if den == 0:
        raise DataError("variance ratio is undefined for data with no variation in range(P_hat)")
    return _gram_frobenius_sq(x, _matrix(P_tilde)) / den


def variance_explained_ratio(coefs, P_tilde, P_hat) -> float:
    """sum_i ||P~ x_i||^2 / sum_i ||P^ x_i||^2, the variance-explained reading."""
    x = _coefs(coefs)
    den = float(np.sum((x @ _matrix(P_hat)) ** 2))
    if den == 0:
        raise DataError("variance ratio is undefined for data with no variation in range(P_hat)")
    return float(np.sum((x @ _matrix(P_tilde)) ** 2)) / den


def subspace_norm(P_tilde, P_hat) -> float:
    """0.5 ||P~ - P^||_F^2, computed as k - tr(P~ P^)."""
    k1 = P_tilde.rank if isinstance(P_tilde, ProjectionOperator) else None
    k2 = P_hat.rank if isinstance(P_hat, ProjectionOperator) else None
    a, b = _matrix(P_tilde), _matrix(P_hat)
    k1 = round(np.trace(a)) if k1 is None else k1
    k2 = round(np.trace(b)) if k2 is None else k2
    if k1 != k2:
        raise DataError(f"projections have different ranks ({k1} vs {k2})")
    if np.array_equal(a, b):
        return 0.0
    # clamp rounding noise so the value stays in [0, k]
    return float(min(max(k1 - np.sum(a * b), 0.0), k1))


CSV_FIELDS = ("n", "epsilon", "k", "m", "replicate", "variance_ratio", "subspace_norm", "seed")


@dataclass(frozen=True)
class UtilityReport:
    variance_ratio: float
    subspace_norm: float
    epsilon: float
    n: int
    k: int
    m: int
    seed: int
    replicate: int = 0

    def as_row(self) -> dict:
        d = asdict(self)
        return {f: d[f] for f in CSV_FIELDS}


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = DEFAULT_BURN_IN
    keep: int = 1
    thin: int = 1
    seed: int = 0
    stream_id: int = 0


@dataclass(frozen=True, eq=False)
class PrivateFPCAResult:
    V: StiefelPoint
    P: ProjectionOperator
    report: UtilityReport
    P_hat: ProjectionOperator
    coefs: CoefMatrix
    chain: ChainResult = field(repr=False)

    def components(self, basis: BasisSet) -> list[Curve]:
        """Released components as curves on the basis grid."""
        return [reconstruct(self.V.V[:, j], basis) for j in range(self.V.k)]


def private_fpca(
    d: Dataset | CoefMatrix,
    basis: BasisSet | None,
    sigma: CovarianceOperator,
    k: int,
    epsilon: float,
    chain: ChainConfig = ChainConfig(),
    replicate: int = 0,
) -> PrivateFPCAResult:
    """Draw a rank-k projection from the eps-DP mechanism and score it.

    ``d`` is a clipped dataset (projected onto ``basis``) or coefficients that
    already live in basis coordinates. The final Gibbs state is the release.
    """
    if isinstance(d, Dataset):
        if basis is None:
            raise DataError("a basis is required to project curves")
        norms = d.norms()
        if np.any(norms > 1.0 + NORM_TOL):
            raise DataError(f"curve norms up to {norms.max():.6g} exceed 1; clip the data first")
        coefs, _ = project(d, basis)
    else:
        coefs = d
    x = coefs.entries
    n, m = x.shape
    if not 1 <= k < n:
        raise DataError(f"need 1 <= k < n (k={k}, n={n})")
    check_clipped(x)
    param = build_bingham_parameter(coefs, sigma, epsilon, k)
    result = run_chain(
        param, k, burn_in=chain.burn_in, keep=chain.keep, thin=chain.thin,
        seed=chain.seed, stream_id=chain.stream_id, init_cov=sigma.matrix,
    )
    p_tilde = projection_from_span(result.final)
    p_hat = nonprivate_fpca(coefs, k)
    report = UtilityReport(
        variance_ratio=variance_ratio(coefs, p_tilde, p_hat),
        subspace_norm=subspace_norm(p_tilde, p_hat),
        epsilon=float(epsilon), n=n, k=k, m=m, seed=chain.seed, replicate=replicate,
    )
    return PrivateFPCAResult(result.final, p_tilde, report, p_hat, coefs, result)
