"""Discretized Hilbert-space machinery.

Curves live on a shared grid and the L2 inner product is approximated by a
quadrature rule (trapezoid by default). Bases are stored as their values on
the grid; coefficients are obtained by quadrature inner products.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

CLIP_ETA = 1e-9
GRAM_TOL = 1e-6
SIGN_TOL = 1e-8


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points):
    """Composite trapezoid weights for (possibly nonuniform) abscissae."""
    t = np.asarray(points, dtype=float)
    if t.size == 1:
        return np.ones(1)
    h = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Abscissae in [0, 1] together with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = _frozen(self.points)
        w = _frozen(self.weights)
        if t.ndim != 1 or t.shape != w.shape or t.size == 0:
            raise DataError("grid points and weights must be 1-D of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise DataError("grid contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise DataError("grid points must be strictly increasing")
        if t[0] < 0 or t[-1] > 1:
            raise DataError("grid points must lie in [0, 1]")
        if np.any(w <= 0):
            raise DataError("quadrature weights must be positive")
        object.__setattr__(self, "points", t)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points) -> "Grid":
        """Trapezoid-rule grid on the given abscissae."""
        t = np.asarray(points, dtype=float)
        if t.size < 2:
            raise DataError("a trapezoid grid needs at least two points")
        return cls(t, trapezoid_weights(t))

    @classmethod
    def uniform(cls, size: int) -> "Grid":
        """``size`` evenly spaced points on [0, 1], endpoints included."""
        return cls.from_points(np.linspace(0.0, 1.0, int(size)))

    @classmethod
    def periodic(cls, size: int) -> "Grid":
        """Points k/size, k < size, with equal weights 1/size.

        This is the trapezoid rule for 1-periodic integrands with the
        duplicated endpoint removed; it integrates trigonometric polynomials
        of degree < size exactly.
        """
        size = int(size)
        return cls(np.arange(size) / size, np.full(size, 1.0 / size))

    def __len__(self):
        return self.points.size

    @property
    def size(self) -> int:
        return self.points.size

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.size == other.size
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


def _require_same_grid(a: Grid, b: Grid):
    if not a.same_as(b):
        raise DataError("objects are defined on different grids")


@dataclass(frozen=True, eq=False)
class Curve:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.size,):
            raise DataError(f"curve has {v.size} values but grid has {self.grid.size} points")
        if not np.all(np.isfinite(v)):
            raise DataError("curve values must be finite")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """n curves on one grid, stored as an (n, G) array of values."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.atleast_2d(self.values))
        if v.ndim != 2 or v.shape[1] != self.grid.size:
            raise DataError(f"dataset values must have shape (n, {self.grid.size})")
        if v.shape[0] == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise DataError(f"non-finite value at record {bad[0]}, grid index {bad[1]}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_curves(cls, curves: Sequence[Curve]) -> "Dataset":
        if not curves:
            raise DataError("dataset is empty")
        grid = curves[0].grid
        for c in curves[1:]:
            _require_same_grid(grid, c.grid)
        return cls(grid, np.stack([c.values for c in curves]))

    def __len__(self):
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def curves(self) -> list[Curve]:
        return [Curve(self.grid, row) for row in self.values]

    def norms(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.values**2 @ self.grid.weights, 0.0))

    def replace(self, index: int, values) -> "Dataset":
        """Adjacent dataset: record ``index`` swapped for ``values``."""
        new = np.array(self.values)
        new[index] = np.asarray(values, dtype=float)
        return Dataset(self.grid, new)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """m functions on a grid, orthonormal under the grid's quadrature rule."""

    grid: Grid
    functions: np.ndarray
    labels: tuple = field(default=())
    validate: bool = True

    def __post_init__(self):
        f = _frozen(np.atleast_2d(self.functions))
        if f.shape[1] != self.grid.size:
            raise DataError("basis functions must be evaluated on the grid")
        labels = tuple(self.labels) or tuple(f"b{j + 1}" for j in range(f.shape[0]))
        if len(labels) != f.shape[0]:
            raise DataError("one label per basis function is required")
        object.__setattr__(self, "functions", f)
        object.__setattr__(self, "labels", labels)
        if self.validate:
            err = np.max(np.abs(self.gram() - np.eye(self.m)))
            if err > GRAM_TOL:
                raise DataError(f"basis is not orthonormal on this grid (max Gram error {err:.3g})")

    @property
    def m(self) -> int:
        return self.functions.shape[0]

    def __len__(self):
        return self.m

    def gram(self) -> np.ndarray:
        return (self.functions * self.grid.weights) @ self.functions.T


@dataclass(frozen=True, eq=False)
class CoefMatrix:
    """Basis coefficients, one row per record: entries[i, j] = <X_i, b_j>."""

    entries: np.ndarray
    basis: BasisSet | None = None

    def __post_init__(self):
        e = _frozen(np.atleast_2d(self.entries))
        if e.ndim != 2:
            raise DataError("coefficient matrix must be 2-D")
        if not np.all(np.isfinite(e)):
            raise DataError("coefficients must be finite")
        if self.basis is not None and e.shape[1] != self.basis.m:
            raise DataError("coefficient columns must match the basis size")
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]


def inner_product(f: Curve, g: Curve) -> float:
    """Quadrature approximation sum_k w_k f(t_k) g(t_k)."""
    _require_same_grid(f.grid, g.grid)
    return float(np.sum(f.grid.weights * f.values * g.values))


def clip_to_unit_ball(d: Dataset, mode: str = "per_record", eta: float = CLIP_ETA) -> Dataset:
    """Rescale curves into the open unit ball.

    ``per_record`` shrinks each curve independently and only when needed,
    so it is safe to apply before a private computation. ``global`` divides
    every curve by ``(1 + eta) * max_i ||X_i||``; the divisor depends on the
    whole dataset, so that mode is for simulations only.
    """
    norms = d.norms()
    if mode == "per_record":
        scale = np.maximum(1.0, norms / (1.0 - eta))
        return Dataset(d.grid, d.values / scale[:, None])
    if mode == "global":
        top = norms.max()
        if top == 0:
            return d
        logger.debug("global clipping divides by a data-dependent constant %.6g", top)
        return Dataset(d.grid, d.values / ((1.0 + eta) * top))
    raise ValueError(f"unknown clipping mode {mode!r}")


def center(d: Dataset) -> Dataset:
    """Subtract the pointwise sample mean (off by default everywhere)."""
    return Dataset(d.grid, d.values - d.values.mean(axis=0))


def fourier_basis(m: int, grid: Grid) -> BasisSet:
    """1, sqrt(2) sin(2 pi j t), sqrt(2) cos(2 pi j t), ... truncated at m."""
    if m < 1:
        raise DataError("m must be positive")
    if m > grid.size:
        raise DataError(f"m={m} exceeds the {grid.size} grid points")
    t = grid.points
    funcs = np.empty((m, t.size))
    labels = []
    for idx in range(m):
        if idx == 0:
            funcs[0] = 1.0
            labels.append("const")
            continue
        j = (idx + 1) // 2
        if idx % 2 == 1:
            funcs[idx] = np.sqrt(2.0) * np.sin(2 * np.pi * j * t)
            labels.append(f"sin{j}")
        else:
            funcs[idx] = np.sqrt(2.0) * np.cos(2 * np.pi * j * t)
            labels.append(f"cos{j}")
    return BasisSet(grid, funcs, tuple(labels))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first entry with magnitude > SIGN_TOL positive (rows)."""
    out = np.array(vectors)
    for row in out:
        big = np.flatnonzero(np.abs(row) > SIGN_TOL)
        if big.size and row[big[0]] < 0:
            row *= -1
    return out


def gaussian_kernel(s, t, bandwidth: float) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.exp(-((s[:, None] - t[None, :]) ** 2) / bandwidth**2)


class KernelEigenbasis(NamedTuple):
    basis: BasisSet
    eigenvalues: np.ndarray
    m_selected: int
    n_floored: int


def _kernel_spectrum(grid: Grid, bandwidth: float):
    sw = np.sqrt(grid.weights)
    k = gaussian_kernel(grid.points, grid.points, bandwidth)
    k = sw[:, None] * k * sw[None, :]
    lam, u = np.linalg.eigh((k + k.T) / 2)
    order = np.argsort(lam)[::-1]
    return lam[order], u[:, order], sw


def _n_to_explain(lam: np.ndarray, var_threshold: float) -> int:
    frac = np.cumsum(lam) / lam.sum()
    return int(np.argmax(frac > var_threshold)) + 1


def gaussian_kernel_eigenbasis(
    grid: Grid, bandwidth: float, var_threshold: float = 0.99, n_functions: int | None = None
) -> KernelEigenbasis:
    """Quadrature-orthonormal eigenfunctions of exp(-(s-t)^2 / bandwidth^2).

    Returns the basis (``m_selected`` functions unless ``n_functions`` is
    given), the full eigenvalue sequence in decreasing order, the smallest m
    whose cumulative eigenvalue fraction exceeds ``var_threshold``, and the
    number of negative eigenvalues that were floored at zero.
    """
    if bandwidth <= 0:
        raise DataError("bandwidth must be positive")
    if not 0 < var_threshold < 1:
        raise DataError("var_threshold must lie in (0, 1)")
    lam, u, sw = _kernel_spectrum(grid, bandwidth)
    n_floored = int(np.sum(lam < 0))
    if n_floored and lam[-1] < -1e-10 * lam[0]:
        logger.warning("kernel matrix is numerically indefinite; %d eigenvalues floored at 0", n_floored)
    lam = np.maximum(lam, 0.0)
    m_sel = _n_to_explain(lam, var_threshold)
    m_out = m_sel if n_functions is None else int(n_functions)
    if not 1 <= m_out <= grid.size:
        raise DataError("requested number of eigenfunctions is out of range")
    funcs = _fix_signs((u[:, :m_out] / sw[:, None]).T)
    labels = tuple(f"eig{j + 1}" for j in range(m_out))
    return KernelEigenbasis(BasisSet(grid, funcs, labels), lam, m_sel, n_floored)


def select_kernel_bandwidth(
    grid: Grid, target_m: int = 5, var_threshold: float = 0.99, iterations: int = 60
) -> float:
    """Bandwidth for which exactly ``target_m`` eigenvalues pass ``var_threshold``.

    The selected count falls as the bandwidth grows. Two bisections on
    [min grid spacing, domain length] locate where the count drops to
    ``target_m`` and where it drops below it; the geometric midpoint of that
    interval is returned so the answer is not sitting on a jump.
    """

    def count(h):
        lam = np.maximum(_kernel_spectrum(grid, h)[0], 0.0)
        return _n_to_explain(lam, var_threshold)

    lo0 = float(np.min(np.diff(grid.points)))
    hi0 = float(grid.points[-1] - grid.points[0])
    if count(lo0) < target_m or count(hi0) > target_m:
        raise DataError(f"no bandwidth in [{lo0:.3g}, {hi0:.3g}] selects m={target_m}")

    def edge(limit):
        # smallest h with count(h) <= limit
        lo, hi = lo0, hi0
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if count(mid) > limit:
                lo = mid
            else:
                hi = mid
        return hi

    first = edge(target_m)
    last = edge(target_m - 1) if target_m > 1 else hi0
    h = float(np.sqrt(first * last))
    if count(h) != target_m:
        h = first
    return h


def project(d: Dataset, basis: BasisSet) -> tuple[CoefMatrix, np.ndarray]:
    """Basis coefficients of every curve and the per-curve residual norms."""
    _require_same_grid(d.grid, basis.grid)
    w = d.grid.weights
    coefs = (d.values * w) @ basis.functions.T
    resid = d.values - coefs @ basis.functions
    res_norm = np.sqrt(np.maximum(resid**2 @ w, 0.0))
    return CoefMatrix(coefs, basis), res_norm


def reconstruct(coefs, basis: BasisSet) -> Curve:
    """Curve sum_j c_j b_j on the basis grid."""
    c = np.asarray(coefs, dtype=float)
    if c.shape != (basis.m,):
        raise DataError(f"expected {basis.m} coefficients, got shape {c.shape}")
    return Curve(basis.grid, c @ basis.functions)
