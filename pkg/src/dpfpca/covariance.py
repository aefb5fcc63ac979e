"""Covariance operators of the Gaussian-process base measure, in basis coordinates."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hilbert import BasisSet, gaussian_kernel

logger = logging.getLogger(__name__)

DEFAULT_FLOOR_RATIO = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceOperator:
    """Symmetric positive definite m x m matrix.

    ``floored`` records whether an eigenvalue floor had to be applied while
    building the matrix; ``spec`` is a short human-readable description that
    ends up in release metadata.
    """

    matrix: np.ndarray
    floored: bool = False
    spec: str = "custom"

    def __post_init__(self):
        s = np.array(self.matrix, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DataError("covariance must be a square matrix")
        if np.max(np.abs(s - s.T), initial=0.0) > 1e-12:
            raise DataError("covariance must be symmetric")
        lam = np.linalg.eigvalsh(s)
        if lam[0] <= 0:
            raise DataError(f"covariance is not positive definite (min eigenvalue {lam[0]:.3g})")
        s.setflags(write=False)
        object.__setattr__(self, "matrix", s)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in decreasing order."""
        return np.linalg.eigvalsh(self.matrix)[::-1]


def power_law_sigma(m: int, exponent: float = 3.0) -> CovarianceOperator:
    """Diagonal covariance with entries i^(-exponent), i = 1..m."""
    if m < 1:
        raise DataError("m must be positive")
    i = np.arange(1, m + 1, dtype=float)
    return CovarianceOperator(np.diag(i**-exponent), spec=f"power_law(m={m}, exponent={exponent:g})")


def _floor_spectrum(lam: np.ndarray, floor_ratio: float):
    floor = floor_ratio * np.max(lam)
    return np.maximum(lam, floor), bool(np.any(lam < floor))


def sigma_from_kernel(basis: BasisSet, bandwidth: float, floor_ratio: float = DEFAULT_FLOOR_RATIO) -> CovarianceOperator:
    """Sigma_ij = <b_i, K b_j> for the Gaussian kernel, by double quadrature."""
    if bandwidth <= 0:
        raise DataError("bandwidth must be positive")
    g = basis.grid
    k = gaussian_kernel(g.points, g.points, bandwidth)
    bw = basis.functions * g.weights
    s = bw @ k @ bw.T
    s = (s + s.T) / 2
    lam, vec = np.linalg.eigh(s)
    floored_lam, floored = _floor_spectrum(lam, floor_ratio)
    if floored:
        logger.warning("kernel covariance not positive definite in this basis; eigenvalue floor applied")
        s = (vec * floored_lam) @ vec.T
        s = (s + s.T) / 2
    return CovarianceOperator(s, floored=floored, spec=f"gaussian_kernel(bandwidth={bandwidth:.10g}, m={basis.m})")


def inverse_with_floor(s: CovarianceOperator, floor_ratio: float = DEFAULT_FLOOR_RATIO) -> np.ndarray:
    """Inverse through the spectrum, with eigenvalues below floor_ratio * max raised to it."""
    lam, vec = np.linalg.eigh(s.matrix)
    lam, floored = _floor_spectrum(lam, floor_ratio)
    if floored:
        logger.warning("covariance eigenvalue floor at %.1e * max triggered during inversion", floor_ratio)
    inv = (vec / lam) @ vec.T
    return (inv + inv.T) / 2


def operator_ratio_diagnostic(sigma: CovarianceOperator, base: CovarianceOperator) -> np.ndarray:
    """lambda_i(sigma) / lambda_i(base), eigenvalues sorted decreasingly.

    Large or growing ratios suggest the base measure is smoother than the
    estimator's limiting covariance, which the Hilbert-space CLT excludes.
    Reported only; nothing is enforced.
    """
    if sigma.m != base.m:
        raise DataError("operators must have the same dimension")
    return sigma.eigenvalues() / base.eigenvalues()
