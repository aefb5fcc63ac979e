"""Empirical checks of the central limit behaviour of the exponential mechanism.

Only quadratic objectives (the penalized mean) are used, so every sanitized
draw is exact and any disagreement with the limit law is attributable to
finite n, not to an MCMC approximation.

For a quadratic utility with -xi''/n -> Sigma^-1 and base measure N(0, C),
n Var(b~) equals ((eps/2Delta) Sigma^-1 + C^-1/n)^-1 exactly, which tends to
(2 Delta / eps) Sigma.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .covariance import CovarianceOperator
from .errors import DataError
from .expmech import (
    MechanismConfig,
    penalized_mean_objective,
    quadratic_maximizer,
    sample_quadratic_mechanism,
)
from .streams import stream

LOW_ACCEPTANCE = 0.01


def asymptotic_covariance(sigma: np.ndarray, epsilon: float, delta: float) -> np.ndarray:
    """Limit covariance (2 Delta / eps) Sigma of sqrt(n)(b~ - b^)."""
    return (2.0 * delta / epsilon) * np.asarray(sigma, dtype=float)


def finite_n_covariance(sigma: np.ndarray, C: np.ndarray, epsilon: float, delta: float, n: float) -> np.ndarray:
    """((eps / 2 Delta) Sigma^-1 + C^-1 / n)^-1."""
    prec = (epsilon / (2.0 * delta)) * np.linalg.inv(sigma) + np.linalg.inv(C) / n
    out = np.linalg.inv(prec)
    return (out + out.T) / 2


def mean_shift(sigma: np.ndarray, C: np.ndarray, epsilon: float, delta: float, n: float, b_hat) -> np.ndarray:
    """-n^-1/2 ((eps/2Delta) Sigma^-1 + C^-1/n)^-1 C^-1 b^: the centring error of sqrt(n)(b~ - b^)."""
    cov = finite_n_covariance(sigma, C, epsilon, delta, n)
    return -cov @ np.linalg.solve(C, np.asarray(b_hat, dtype=float)) / np.sqrt(n)


def brute_force_scaled_variance(n: int, epsilon: float, delta: float, lam: float, c: float, xbar: float, nodes: int = 200001) -> float:
    """n Var(b~) for the 1-D penalized mean by direct quadrature of the density.

    The unnormalized density exp{eps/(2 Delta) xi(b)} N(b; 0, c) is evaluated
    pointwise from the objective's definition on a wide uniform grid; no
    completion of the square is used.
    """
    x = np.full(n, xbar)
    sd_guess = np.sqrt(delta / (n * epsilon))
    b = np.linspace(xbar - 60 * sd_guess - 1, xbar + 60 * sd_guess + 1, nodes)
    xi = -(n * (xbar - b) ** 2 + np.sum((x - xbar) ** 2)) - n * lam * b**2 / c
    logf = epsilon / (2 * delta) * xi - 0.5 * b**2 / c
    f = np.exp(logf - logf.max())
    f /= trapezoid(f, b)
    mu = trapezoid(b * f, b)
    var = trapezoid((b - mu) ** 2 * f, b)
    return float(n * var)


def decide_clt_constant(epsilon: float = 1.0, delta: float = 4.0, lam: float = 0.1, c: float = 1.0, n: int = 10**4, xbar: float = 0.3) -> dict:
    """Compare the brute-force n Var(b~) with both candidate limit constants.

    Sigma = 1 / (2 (1 + lam / c)) for the 1-D penalized mean. Returns the
    relative error of (2 Delta/eps) Sigma and (eps/2 Delta) Sigma and the
    name of the closer one.
    """
    sigma = 1.0 / (2.0 * (1.0 + lam / c))
    observed = brute_force_scaled_variance(n, epsilon, delta, lam, c, xbar)
    cands = {"2*delta/epsilon": 2 * delta / epsilon * sigma, "epsilon/(2*delta)": epsilon / (2 * delta) * sigma}
    rel = {k: abs(observed - v) / v for k, v in cands.items()}
    return {"observed": observed, "candidates": cands, "relative_error": rel, "winner": min(rel, key=rel.get)}


@dataclass(frozen=True)
class CltScenario:
    """Penalized-mean CLT scenario.

    Records are drawn as ``data_mean + data_sd * N(0, I)`` and clipped per
    record to the unit ball. ``base_var`` holds the diagonal of C, used both
    in the penalty and as the base measure.
    """

    dimension: int = 1
    lam: float = 0.1
    base_var: tuple = (1.0,)
    data_mean: tuple = (0.3,)
    data_sd: float = 0.2
    epsilon: float = 1.0
    delta: float = 4.0
    sample_sizes: tuple = (100, 10000)
    replicates: int = 1000
    truncate: bool = True

    def __post_init__(self):
        if len(self.base_var) != self.dimension or len(self.data_mean) != self.dimension:
            raise DataError("base_var and data_mean must have one entry per dimension")
        if any(b <= a for a, b in zip(self.sample_sizes, self.sample_sizes[1:])):
            raise DataError("sample sizes must be strictly increasing")
        if self.replicates < 100:
            raise DataError("at least 100 replicates are required")

    @property
    def C(self) -> CovarianceOperator:
        return CovarianceOperator(np.diag(np.asarray(self.base_var, dtype=float)), spec="diag")

    def sigma(self) -> np.ndarray:
        """Sigma from -xi''/n = 2 (I + lam C^-1)."""
        c_inv = np.diag(1.0 / np.asarray(self.base_var, dtype=float))
        return np.linalg.inv(2.0 * (np.eye(self.dimension) + self.lam * c_inv))


class DistributionTest(NamedTuple):
    ks: np.ndarray
    ks_critical: np.ndarray
    cov_statistic: float
    cov_critical: float
    skipped: tuple
    passed: bool


def distribution_test(samples, target_cov, level: float = 0.01) -> DistributionTest:
    """Test samples against N(0, target_cov).

    One KS test per coordinate against its target marginal plus a likelihood
    ratio test of the second-moment matrix about zero. Each test runs at
    level / (number of tests), so the whole family has level ``level``.
    Coordinates with zero target variance are skipped.
    """
    z = np.asarray(samples, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    t = np.atleast_2d(np.asarray(target_cov, dtype=float))
    n, d = z.shape
    if n < 100:
        raise DataError("distribution_test needs at least 100 samples")
    var = np.diag(t)
    active = np.flatnonzero(var > 0)
    skipped = tuple(int(j) for j in np.flatnonzero(var <= 0))
    alpha = level / (active.size + 1)
    ks = np.full(d, np.nan)
    crit = np.full(d, np.nan)
    for j in active:
        ks[j] = stats.kstest(z[:, j], "norm", args=(0.0, np.sqrt(var[j]))).statistic
        crit[j] = stats.kstwo.ppf(1 - alpha, n)
    za = z[:, active]
    ta = t[np.ix_(active, active)]
    chol = np.linalg.cholesky(ta)
    w = np.linalg.solve(chol, za.T)
    s = w @ w.T / n
    sign, logdet = np.linalg.slogdet(s)
    q = active.size
    cov_stat = float(n * (np.trace(s) - logdet - q)) if sign > 0 else np.inf
    cov_crit = float(stats.chi2.ppf(1 - alpha, q * (q + 1) // 2))
    passed = bool(np.all(ks[active] <= crit[active]) and cov_stat <= cov_crit)
    return DistributionTest(ks, crit, cov_stat, cov_crit, skipped, passed)


@dataclass
class CltLevel:
    n: int
    empirical_cov: np.ndarray
    target_cov: np.ndarray
    max_rel_deviation: float
    test: DistributionTest
    acceptance_rate: float
    exact_cov: np.ndarray | None = None
    exact_distance: float | None = None
    mean_shift_norm: float | None = None
    reliable: bool = True


@dataclass
class CltReport:
    scenario: CltScenario
    seed: int
    sigma: np.ndarray
    levels: list = field(default_factory=list)

    def level(self, n: int) -> CltLevel:
        return next(lv for lv in self.levels if lv.n == n)

    def to_json(self) -> str:
        """One block per n."""

        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        blocks = []
        for lv in self.levels:
            blocks.append({
                "n": lv.n,
                "empirical_cov": arr(lv.empirical_cov),
                "target_cov": arr(lv.target_cov),
                "max_rel_deviation": lv.max_rel_deviation,
                "ks_distance": arr(lv.test.ks),
                "ks_critical": arr(lv.test.ks_critical),
                "cov_statistic": lv.test.cov_statistic,
                "cov_critical": lv.test.cov_critical,
                "distribution_test_passed": lv.test.passed,
                "acceptance_rate": lv.acceptance_rate,
                "exact_cov": arr(lv.exact_cov),
                "exact_distance": lv.exact_distance,
                "mean_shift_norm": lv.mean_shift_norm,
                "reliable": lv.reliable,
            })
        doc = {"scenario": asdict(self.scenario), "seed": self.seed, "sigma": arr(self.sigma), "levels": blocks}
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "coordinate", "empirical_var", "target_var", "ks_distance"])
        for lv in self.levels:
            for j in range(lv.target_cov.shape[0]):
                w.writerow([lv.n, j, repr(float(lv.empirical_cov[j, j])), repr(float(lv.target_cov[j, j])), repr(float(lv.test.ks[j]))])
        return buf.getvalue()


def _draw_scaled_errors(s: CltScenario, n: int, level_index: int, seed: int):
    obj = penalized_mean_objective(s.lam, s.C)
    cfg = MechanismConfig(s.epsilon, s.delta, seed)
    mean = np.asarray(s.data_mean, dtype=float)
    z = np.empty((s.replicates, s.dimension))
    b_hats = np.empty_like(z)
    proposals = 0
    inside = 0.0
    for r in range(s.replicates):
        rng = stream(seed, level_index, r)
        x = mean + s.data_sd * rng.standard_normal((n, s.dimension))
        norms = np.linalg.norm(x, axis=1)
        x /= np.maximum(1.0, norms / (1.0 - 1e-9))[:, None]
        b_hat = quadratic_maximizer(obj, x)
        draw = sample_quadratic_mechanism(obj, cfg, x, s.C, 1, rng=rng, truncate=s.truncate)
        proposals += draw.proposals
        inside += draw.acceptance_rate * draw.proposals
        z[r] = np.sqrt(n) * (draw.samples[0] - b_hat)
        b_hats[r] = b_hat
    return z, b_hats, inside / proposals


def _summarize(s: CltScenario, n: int, z: np.ndarray, target: np.ndarray, acceptance: float) -> CltLevel:
    emp = np.atleast_2d(np.cov(z, rowvar=False))
    rel = float(np.max(np.abs(emp - target) / np.max(np.abs(np.diag(target)))))
    return CltLevel(
        n=n,
        empirical_cov=emp,
        target_cov=target,
        max_rel_deviation=rel,
        test=distribution_test(z, target),
        acceptance_rate=acceptance,
        reliable=acceptance >= LOW_ACCEPTANCE,
    )


def run_clt_experiment(s: CltScenario, seed: int = 0) -> CltReport:
    """sqrt(n)(b~ - b^) over replicates for each n, against (2 Delta/eps) Sigma.

    Deviations are entrywise and relative to the largest target variance.
    """
    sigma = s.sigma()
    target = asymptotic_covariance(sigma, s.epsilon, s.delta)
    report = CltReport(s, seed, sigma)
    for li, n in enumerate(s.sample_sizes):
        z, _, acc = _draw_scaled_errors(s, n, li, seed)
        report.levels.append(_summarize(s, n, z, target, acc))
    return report


def hilbert_clt_experiment(s: CltScenario, seed: int = 0) -> CltReport:
    """Truncated-basis version: adds the exact finite-n covariance and mean shift.

    Requires diagonal Sigma and C (they commute), which the penalized-mean
    scenario guarantees.
    """
    sigma = s.sigma()
    C = s.C.matrix
    target = asymptotic_covariance(sigma, s.epsilon, s.delta)
    report = CltReport(s, seed, sigma)
    for li, n in enumerate(s.sample_sizes):
        z, b_hats, acc = _draw_scaled_errors(s, n, li, seed)
        lv = _summarize(s, n, z, target, acc)
        lv.exact_cov = finite_n_covariance(sigma, C, s.epsilon, s.delta, n)
        lv.exact_distance = float(np.max(np.abs(lv.exact_cov - target) / np.abs(np.diag(target)).max()))
        shifts = [mean_shift(sigma, C, s.epsilon, s.delta, n, b) for b in b_hats]
        lv.mean_shift_norm = float(np.mean(np.linalg.norm(shifts, axis=1)))
        report.levels.append(lv)
    return report
