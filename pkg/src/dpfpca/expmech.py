"""The exponential mechanism: objective contract, log-density, DP ratio checks,
and exact samplers for quadratic objectives.

A mechanism draws b with density proportional to exp(eps / (2 Delta) * xi_X(b))
with respect to a base measure. The base measure is not part of the
unnormalized log-density computed here; samplers handle it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .covariance import CovarianceOperator, inverse_with_floor
from .errors import DataError, NumericalError
from .hilbert import CoefMatrix
from .streams import as_generator, stream

SUPPORTS = ("all", "ball", "projections")
BALL_TOL = 1e-12


def records_of(data) -> np.ndarray:
    """Coefficient-space records as an (n, d) float array."""
    if isinstance(data, CoefMatrix):
        return data.entries
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError("records must form an (n, d) array")
    return x


@dataclass(frozen=True)
class ObjectiveSpec:
    """Utility xi_X(b) with its sensitivity and the support of b.

    ``quadratic`` is set only for objectives that are exact quadratics in b:
    it maps the records to (H, g) with xi_X(b) = -b'Hb + g'b + const.
    """

    evaluate: Callable[[np.ndarray, object], float]
    sensitivity: float
    support: str = "all"
    name: str = "objective"
    quadratic: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    in_support: Callable[[object], bool] | None = None

    def __post_init__(self):
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        if self.support not in SUPPORTS:
            raise ValueError(f"support must be one of {SUPPORTS}")

    def contains(self, b) -> bool:
        if self.in_support is not None:
            return bool(self.in_support(b))
        if self.support == "ball":
            return float(np.linalg.norm(np.ravel(b))) <= 1.0 + BALL_TOL
        return True


@dataclass(frozen=True)
class MechanismConfig:
    epsilon: float
    delta_sensitivity: float
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.delta_sensitivity > 0:
            raise ValueError("delta_sensitivity must be positive")

    @classmethod
    def for_objective(cls, obj: ObjectiveSpec, epsilon: float, seed: int = 0) -> "MechanismConfig":
        return cls(epsilon, obj.sensitivity, seed)

    @property
    def scale(self) -> float:
        """The multiplier eps / (2 Delta) applied to the utility."""
        return self.epsilon / (2.0 * self.delta_sensitivity)


def _check_config(obj: ObjectiveSpec, cfg: MechanismConfig):
    if cfg.delta_sensitivity < obj.sensitivity:
        raise ValueError(
            f"configured sensitivity {cfg.delta_sensitivity} is below the objective's "
            f"bound {obj.sensitivity}; the privacy guarantee would not hold"
        )


def log_unnormalized_density(obj: ObjectiveSpec, cfg: MechanismConfig, data, b) -> float:
    """(eps / (2 Delta)) * xi_X(b), without the base-measure term."""
    if not obj.contains(b):
        raise DataError(f"candidate lies outside the {obj.support!r} support of {obj.name}")
    return cfg.scale * float(obj.evaluate(records_of(data), b))


def verify_dp_ratio(obj: ObjectiveSpec, cfg: MechanismConfig, data, index: int, replacement, probes) -> float:
    """Largest |log f_X(b) - log f_X'(b)| over the probes, unnormalized.

    X' is X with record ``index`` replaced. For a valid sensitivity bound the
    result never exceeds eps/2: the unnormalized densities use half the budget
    and the normalizing constants account for the other half.
    """
    x = records_of(data)
    x2 = np.array(x)
    x2[index] = np.asarray(replacement, dtype=float).ravel()
    worst = 0.0
    for b in probes:
        gap = abs(log_unnormalized_density(obj, cfg, x, b) - log_unnormalized_density(obj, cfg, x2, b))
        worst = max(worst, gap)
    return worst


def penalized_mean_objective(lam: float, C: CovarianceOperator) -> ObjectiveSpec:
    """xi_X(b) = -sum_i ||X_i - b||^2 - n lam <b, C^-1 b> on the unit ball.

    Records and b lie in the unit ball, so each summand changes by at most 4
    when one record is swapped.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    c_inv = inverse_with_floor(C)
    d = C.m

    def evaluate(x, b):
        b = np.asarray(b, dtype=float).ravel()
        if x.shape[1] != d or b.size != d:
            raise DataError(f"penalized mean expects {d}-dimensional records and candidates")
        n = x.shape[0]
        return -float(np.sum((x - b) ** 2)) - n * lam * float(b @ c_inv @ b)

    def quadratic(x):
        n = x.shape[0]
        return n * (np.eye(d) + lam * c_inv), 2.0 * x.sum(axis=0)

    return ObjectiveSpec(evaluate, 4.0, "ball", f"penalized_mean(lambda={lam:g})", quadratic)


def quadratic_maximizer(obj: ObjectiveSpec, data) -> np.ndarray:
    """Unconstrained maximizer (2H)^-1 g of a quadratic objective."""
    if obj.quadratic is None:
        raise ValueError(f"{obj.name} is not a quadratic objective")
    h, g = obj.quadratic(records_of(data))
    return np.linalg.solve(2.0 * h, g)


class GaussianLaw(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray


def quadratic_mechanism_law(obj: ObjectiveSpec, cfg: MechanismConfig, data, base: CovarianceOperator | None) -> GaussianLaw:
    """Exact Gaussian law of the mechanism before any truncation.

    exp{s(-b'Hb + g'b)} times the N(0, C) density has precision 2sH + C^-1
    and mean precision^-1 s g, with s = eps / (2 Delta). ``base=None`` is the
    flat-base limit C^-1 -> 0.
    """
    if obj.quadratic is None:
        raise ValueError(f"{obj.name} is not a quadratic objective")
    _check_config(obj, cfg)
    h, g = obj.quadratic(records_of(data))
    s = cfg.scale
    prec = 2.0 * s * h
    if base is not None:
        if base.m != h.shape[0]:
            raise DataError("base covariance dimension does not match the objective")
        prec = prec + inverse_with_floor(base)
    prec = (prec + prec.T) / 2
    cov = np.linalg.inv(prec)
    mean = np.linalg.solve(prec, s * g)
    return GaussianLaw(mean, (cov + cov.T) / 2, prec)


class QuadraticDraws(NamedTuple):
    samples: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    acceptance_rate: float
    proposals: int


MAX_PROPOSALS = 10**6
MIN_ACCEPTANCE = 1e-4


def sample_quadratic_mechanism(
    obj: ObjectiveSpec,
    cfg: MechanismConfig,
    data,
    base: CovarianceOperator | None,
    count: int,
    rng=None,
    stream_id: int = 0,
    truncate: bool | None = None,
) -> QuadraticDraws:
    """Exact draws from the exponential mechanism of a quadratic objective.

    Without truncation the law is Gaussian and sampled directly. With
    truncation (default: when the support is the unit ball) Gaussian
    proposals are rejected until they land in the ball.
    """
    law = quadratic_mechanism_law(obj, cfg, data, base)
    gen = stream(cfg.seed, stream_id) if rng is None else as_generator(rng)
    chol = np.linalg.cholesky(law.precision)
    d = law.mean.size
    if truncate is None:
        truncate = obj.support == "ball"

    def propose(size):
        z = gen.standard_normal((size, d))
        # b = mean + L^-T z has covariance (L L')^-1
        return law.mean + np.linalg.solve(chol.T, z.T).T

    if not truncate:
        return QuadraticDraws(propose(count), law.mean, law.cov, 1.0, count)

    kept = []
    n_kept = 0
    proposals = 0
    batch = max(count, 16)
    while n_kept < count:
        cand = propose(batch)
        proposals += batch
        inside = cand[np.linalg.norm(cand, axis=1) <= 1.0]
        kept.append(inside)
        n_kept += inside.shape[0]
        if proposals >= MAX_PROPOSALS and n_kept / proposals < MIN_ACCEPTANCE:
            raise NumericalError(
                f"ball truncation acceptance {n_kept / proposals:.2e} after {proposals} proposals; "
                f"mechanism mean norm {np.linalg.norm(law.mean):.3g}"
            )
        rate = max(n_kept / proposals, MIN_ACCEPTANCE)
        batch = int(min(max(16, 1.2 * (count - n_kept) / rate), MAX_PROPOSALS))
    samples = np.concatenate(kept)[:count]
    return QuadraticDraws(samples, law.mean, law.cov, n_kept / proposals, proposals)
