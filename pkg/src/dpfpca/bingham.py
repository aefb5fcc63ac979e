"""Gibbs sampling for the matrix Bingham distribution on the Stiefel manifold.

The target is p(V) proportional to exp(tr(V'AV)) over m x k matrices with
orthonormal columns. Each sweep redraws the columns one at a time, in random
order, from their full conditionals (Hoff, 2009): the column must be a unit
vector orthogonal to the others, so writing it as N z with N an orthonormal
basis of the complement reduces the update to a vector Bingham draw for z
with parameter N'AN. The vector draws are exact, by rejection from an
angular central Gaussian envelope (Kent, Ganeiber and Mardia, 2013).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .covariance import CovarianceOperator, inverse_with_floor
from .errors import DataError, NumericalError
from .hilbert import CoefMatrix
from .streams import as_generator, stream

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 20000
ORTHO_DRIFT = 1e-10
MAX_REJECTIONS = 10**6


@dataclass(frozen=True, eq=False)
class BinghamParameter:
    """Symmetric A of the density exp(tr(V'AV)) on m x k Stiefel matrices."""

    A: np.ndarray
    k: int = 1

    def __post_init__(self):
        a = np.array(self.A, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError("A must be a square matrix")
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
            raise DataError("A must be symmetric")
        if not 1 <= self.k <= a.shape[0]:
            raise DataError(f"k={self.k} must lie in [1, m={a.shape[0]}]")
        a.setflags(write=False)
        object.__setattr__(self, "A", a)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @cached_property
    def _full_sampler(self) -> "VectorBingham":
        # for k == 1 the complement is all of R^m, so one spectral setup serves every step
        return VectorBingham(self.A)

    def max_trace(self, k: int | None = None) -> float:
        """Sum of the k largest eigenvalues: the supremum of tr(V'AV)."""
        k = self.k if k is None else k
        return float(np.sum(np.linalg.eigvalsh(self.A)[::-1][:k]))


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    V: np.ndarray

    def __post_init__(self):
        v = np.array(self.V, dtype=float)
        if v.ndim != 2 or v.shape[1] > v.shape[0]:
            raise DataError("V must be m x k with k <= m")
        err = np.max(np.abs(v.T @ v - np.eye(v.shape[1])))
        if err > 1e-8:
            raise DataError(f"columns of V are not orthonormal (max error {err:.2e})")
        v.setflags(write=False)
        object.__setattr__(self, "V", v)

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def k(self) -> int:
        return self.V.shape[1]


def orthonormalize(x: np.ndarray) -> np.ndarray:
    """QR orthonormalization with column signs matching the input."""
    q, r = np.linalg.qr(x)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def build_bingham_parameter(coefs: CoefMatrix | np.ndarray, sigma: CovarianceOperator, epsilon: float, k: int = 1) -> BinghamParameter:
    """A = (eps/2)(X'X - Sigma^-1), symmetrized."""
    x = coefs.entries if isinstance(coefs, CoefMatrix) else np.asarray(coefs, dtype=float)
    if x.shape[1] != sigma.m:
        raise DataError(f"coefficients have m={x.shape[1]} but Sigma is {sigma.m} x {sigma.m}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a = 0.5 * epsilon * (x.T @ x - inverse_with_floor(sigma))
    return BinghamParameter((a + a.T) / 2, k)


class VectorBingham:
    """Exact sampler for z on the unit sphere with density exp(z'Bz).

    In the eigenbasis of B the density is exp(-sum_i a_i y_i^2) up to a
    constant, with a_i = lambda_max - lambda_i >= 0. The envelope is the
    angular central Gaussian with Omega = I + 2 diag(a) / b, where b solves
    sum_i 1 / (b + 2 a_i) = 1; the density ratio is then bounded by
    M = exp(-(p - b)/2) (p/b)^(p/2).
    """

    def __init__(self, B):
        b_mat = np.asarray(B, dtype=float)
        b_mat = (b_mat + b_mat.T) / 2
        lam, self.vectors = np.linalg.eigh(b_mat)
        self.p = lam.size
        self.eigenvalues = lam
        self.a = lam[-1] - lam
        if self.p == 1 or not np.any(self.a > 0):
            self.b = float(self.p)
        else:
            f = lambda t: np.sum(1.0 / (t + 2.0 * self.a)) - 1.0
            hi = float(self.p)
            if f(hi) >= 0:
                self.b = hi
            else:
                self.b = brentq(f, 1e-12, hi, xtol=1e-14, rtol=1e-14)
        self.omega = 1.0 + 2.0 * self.a / self.b
        self.scale = 1.0 / np.sqrt(self.omega)
        self.log_m = -(self.p - self.b) / 2 + (self.p / 2) * np.log(self.p / self.b)

    def draw(self, rng: np.random.Generator, batch: int = 4) -> tuple[np.ndarray, int]:
        """Return (z, number of proposals used). Proposals come ``batch`` at a time."""
        if self.p == 1:
            return self.vectors[:, 0] * (1.0 if rng.random() < 0.5 else -1.0), 1
        tries = 0
        while True:
            y = rng.standard_normal((batch, self.p)) * self.scale
            x = y / np.linalg.norm(y, axis=1, keepdims=True)
            x2 = x * x
            log_ratio = -x2 @ self.a + 0.5 * self.p * np.log(x2 @ self.omega) - self.log_m
            hit = np.flatnonzero(np.log(rng.random(batch)) < log_ratio)
            if hit.size:
                return self.vectors @ x[hit[0]], tries + hit[0] + 1
            tries += batch
            if tries >= MAX_REJECTIONS:
                raise NumericalError(
                    f"vector Bingham sampler rejected {tries} proposals; spectrum of B: {self.eigenvalues}"
                )


def sample_vector_bingham(B, rng=None) -> np.ndarray:
    """One draw from exp(z'Bz) on the unit sphere of dimension B.shape[0]."""
    return VectorBingham(B).draw(as_generator(rng))[0]


@dataclass
class ChainState:
    """Mutable state of one Gibbs chain; never shared between chains."""

    V: np.ndarray
    rng: np.random.Generator
    stream_id: int = 0
    step_count: int = 0
    trace: list = field(default_factory=list)
    rebuilds: int = 0
    proposals: int = 0
    draws: int = 0
    batch: int = 4

    def draw(self, sampler: VectorBingham) -> np.ndarray:
        z, used = sampler.draw(self.rng, self.batch)
        self.proposals += used
        self.draws += 1
        if self.draws % 64 == 0:
            # size batches to the chain's own acceptance rate so rng use stays per-chain
            self.batch = int(min(256, max(1, np.ceil(1.5 * self.proposals / self.draws))))
        return z

    @property
    def acceptance_rate(self) -> float:
        return float(self.draws / self.proposals) if self.proposals else 1.0

    @property
    def current(self) -> StiefelPoint:
        return StiefelPoint(self.V)


def random_stiefel(m: int, k: int, rng=None, cov=None) -> np.ndarray:
    """Orthonormalized span of k Gaussian vectors, N(0, cov) (identity by default)."""
    gen = as_generator(rng)
    g = gen.standard_normal((m, k))
    if cov is not None:
        g = np.linalg.cholesky(np.asarray(cov, dtype=float)) @ g
    return orthonormalize(g)


def _complement(others: np.ndarray) -> np.ndarray | None:
    m, r = others.shape
    q, rr = np.linalg.qr(others, mode="complete")
    if r and np.min(np.abs(np.diag(rr))) < 1e-8:
        return None
    return q[:, r:]


def gibbs_step(state: ChainState, param: BinghamParameter) -> ChainState:
    """One sweep over the columns of V, in random order. Updates ``state`` in place."""
    v = state.V
    m, k = v.shape
    if m != param.m:
        raise DataError("chain state and parameter disagree on m")
    a = param.A
    for j in state.rng.permutation(k):
        if k == 1:
            v[:, 0] = state.draw(param._full_sampler)
            continue
        others = np.delete(v, j, axis=1)
        basis = _complement(others)
        if basis is None:
            logger.warning("rank-deficient complement at step %d; chain state rebuilt", state.step_count)
            state.rebuilds += 1
            v[:] = random_stiefel(m, k, state.rng)
            continue
        z = state.draw(VectorBingham(basis.T @ a @ basis))
        v[:, j] = basis @ z
    if np.max(np.abs(v.T @ v - np.eye(k))) > ORTHO_DRIFT:
        v[:] = orthonormalize(v)
    state.step_count += 1
    state.trace.append(float(np.trace(v.T @ a @ v)))
    return state


class ChainResult(NamedTuple):
    final: StiefelPoint
    samples: np.ndarray
    trace: np.ndarray
    rebuilds: int
    metadata: dict


def run_chain(
    param: BinghamParameter,
    k: int | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    keep: int = 1,
    thin: int = 1,
    seed: int = 0,
    stream_id: int = 0,
    init_cov=None,
    rng: np.random.Generator | None = None,
) -> ChainResult:
    """Run burn_in sweeps, then record every thin-th state ``keep`` times.

    The initial state spans k Gaussian vectors drawn with covariance
    ``init_cov`` (the base measure). Only ``final`` is a mechanism release;
    ``samples`` are successive states of one chain and are diagnostics.
    """
    k = param.k if k is None else k
    if burn_in < 0 or keep < 1 or thin < 1:
        raise ValueError("need burn_in >= 0, keep >= 1, thin >= 1")
    if not 1 <= k <= param.m:
        raise DataError(f"k={k} must lie in [1, m={param.m}]")
    gen = stream(seed, stream_id) if rng is None else rng
    state = ChainState(random_stiefel(param.m, k, gen, init_cov), gen, stream_id)
    for _ in range(burn_in):
        gibbs_step(state, param)
    samples = np.empty((keep, param.m, k))
    for i in range(keep):
        for _ in range(thin):
            gibbs_step(state, param)
        samples[i] = state.V
    meta = {
        "burn_in": burn_in,
        "keep": keep,
        "thin": thin,
        "steps": state.step_count,
        "seed": seed,
        "stream_id": stream_id,
        "samples_are_private": False,
        "acceptance_rate": state.acceptance_rate,
    }
    return ChainResult(StiefelPoint(state.V.copy()), samples, np.asarray(state.trace), state.rebuilds, meta)


def write_trace_jsonl(path, trace) -> None:
    """One JSON object {"step", "trace"} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, value in enumerate(trace, start=1):
            fh.write(json.dumps({"step": step, "trace": float(value)}) + "\n")


class MomentReport(NamedTuple):
    second_moment: np.ndarray
    error_estimate: float
    nodes: int


def _circle_moment(a: np.ndarray, nodes: int) -> np.ndarray:
    theta = 2 * np.pi * np.arange(nodes) / nodes
    x = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return _weighted_moment(x, np.ones(nodes), a)


def _sphere_moment(a: np.ndarray, nodes: int) -> np.ndarray:
    u, wu = np.polynomial.legendre.leggauss(nodes)
    phi = 2 * np.pi * np.arange(nodes) / nodes
    uu, pp = np.meshgrid(u, phi, indexing="ij")
    s = np.sqrt(1 - uu**2)
    x = np.stack([s * np.cos(pp), s * np.sin(pp), uu], axis=-1).reshape(-1, 3)
    w = np.repeat(wu, nodes)
    return _weighted_moment(x, w, a)


def _weighted_moment(x, w, a):
    logd = np.einsum("ij,jk,ik->i", x, a, x)
    dens = w * np.exp(logd - logd.max())
    dens /= dens.sum()
    return (x * dens[:, None]).T @ x


def bingham_moment_oracle(param: BinghamParameter, nodes: int = 400) -> MomentReport:
    """E[VV'] for k = 1 and m in {2, 3} by deterministic quadrature.

    m = 2 uses the periodic trapezoid rule in the angle; m = 3 a product of
    Gauss-Legendre nodes in cos(theta) and uniform nodes in phi. The error
    estimate is the max entrywise change when the resolution is doubled.
    """
    if param.k != 1 or param.m not in (2, 3):
        raise DataError("the quadrature oracle covers k = 1 with m = 2 or 3 only")
    rule = _circle_moment if param.m == 2 else _sphere_moment
    if param.m == 2:
        nodes = max(nodes, 2000)
    coarse = rule(param.A, nodes)
    fine = rule(param.A, 2 * nodes)
    return MomentReport(fine, float(np.max(np.abs(fine - coarse))), 2 * nodes)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean of a (correlated) series.

    ``x`` has the series along axis 0; any trailing shape is kept.
    """
    x = np.asarray(x, dtype=float)
    size = x.shape[0] // n_batches
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)
