import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpfpca.bingham import random_stiefel
from dpfpca.covariance import CovarianceOperator, power_law_sigma
from dpfpca.errors import DataError, NumericalError
from dpfpca.expmech import (
    MechanismConfig, ObjectiveSpec, log_unnormalized_density, penalized_mean_objective,
    quadratic_maximizer, quadratic_mechanism_law, sample_quadratic_mechanism, verify_dp_ratio,
)
from dpfpca.fpca import fpca_objective, fpca_objective_spec, projection_from_span
from dpfpca.harness.verify import random_ball_point


def ball_records(rng, n, d):
    return np.array([random_ball_point(d, rng) for _ in range(n)])


def test_log_density_arithmetic():
    obj = ObjectiveSpec(lambda x, b: 3.0, 1.0, "all", "three")
    assert log_unnormalized_density(obj, MechanismConfig(2.0, 1.0), np.zeros((1, 1)), 0.0) == 3.0


def test_log_density_zero_objective():
    obj = ObjectiveSpec(lambda x, b: 0.0, 1.0, "all", "zero")
    for b in np.linspace(-3, 3, 7):
        assert log_unnormalized_density(obj, MechanismConfig(1.0, 1.0), np.zeros((2, 1)), b) == 0.0


def test_log_density_fpca_two_records():
    x = np.array([[0.3, 0.4, 0.1], [-0.5, 0.2, 0.6]])
    P = np.diag([1.0, 0.0, 0.0])
    obj = fpca_objective_spec(1)
    eps = 0.7
    got = log_unnormalized_density(obj, MechanismConfig.for_objective(obj, eps), x, P)
    assert got == pytest.approx(eps / 2 * (0.3**2 + 0.5**2), rel=1e-14)
    assert got == pytest.approx(eps / 2 * fpca_objective(x, P), rel=1e-14)


def test_log_density_rejects_outside_support():
    obj = penalized_mean_objective(0.1, power_law_sigma(2))
    with pytest.raises(DataError):
        log_unnormalized_density(obj, MechanismConfig(1.0, 4.0), np.zeros((3, 2)), np.array([1.0, 1.0]))


def test_config_validation():
    with pytest.raises(ValueError):
        MechanismConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        MechanismConfig(1.0, -1.0)
    obj = penalized_mean_objective(0.1, power_law_sigma(1))
    with pytest.raises(ValueError, match="below"):
        quadratic_mechanism_law(obj, MechanismConfig(1.0, 1.0), np.zeros((3, 1)), None)


def test_verify_ratio_same_record_is_zero():
    rng = np.random.default_rng(0)
    x = ball_records(rng, 10, 4)
    obj = fpca_objective_spec(2)
    probes = [projection_from_span(random_stiefel(4, 2, rng)).P for _ in range(50)]
    assert verify_dp_ratio(obj, MechanismConfig(1.0, 1.0), x, 3, x[3], probes) == 0.0


def test_verify_ratio_fpca_random():
    rng = np.random.default_rng(1)
    x = ball_records(rng, 20, 5)
    obj = fpca_objective_spec(1)
    probes = [projection_from_span(random_stiefel(5, 1, rng)).P for _ in range(1000)]
    r = verify_dp_ratio(obj, MechanismConfig(1.0, 1.0), x, 7, random_ball_point(5, rng), probes)
    assert r <= 0.5 + 1e-9


def test_verify_ratio_penalized_mean_near_tight():
    eps = 1.0
    obj = penalized_mean_objective(0.1, power_law_sigma(2))
    x = np.array([[1.0, 0.0], [0.2, 0.1], [-0.3, 0.4]])
    theta = np.linspace(0, 2 * np.pi, 73)
    probes = [r * np.array([np.cos(t), np.sin(t)]) for r in (0.0, 0.5, 1.0) for t in theta]
    r = verify_dp_ratio(obj, MechanismConfig(eps, 4.0), x, 0, np.array([-1.0, 0.0]), probes)
    assert r <= eps / 2 + 1e-9
    assert r > 0.4 * eps / 2


def test_penalized_mean_sensitivity_and_maximum():
    obj = penalized_mean_objective(0.0, power_law_sigma(3))
    assert obj.sensitivity == 4
    b = np.array([0.1, -0.2, 0.3])
    assert obj.evaluate(b[None], b) == 0.0


def test_penalized_mean_adjacent_bound():
    rng = np.random.default_rng(2)
    obj = penalized_mean_objective(0.3, power_law_sigma(3))
    x = ball_records(rng, 8, 3)
    x2 = x.copy()
    x2[5] = random_ball_point(3, rng)
    for _ in range(50):
        b = random_ball_point(3, rng)
        assert abs(obj.evaluate(x, b) - obj.evaluate(x2, b)) <= 4


def test_penalized_mean_rejects_negative_lambda():
    with pytest.raises(ValueError):
        penalized_mean_objective(-1.0, power_law_sigma(1))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_fpca_ratio_bound_property(n, m, seed):
    rng = np.random.default_rng(seed)
    x = ball_records(rng, n, m)
    k = int(rng.integers(1, m + 1))
    probes = [projection_from_span(random_stiefel(m, k, rng)).P for _ in range(20)]
    eps = float(rng.uniform(0.1, 5))
    r = verify_dp_ratio(fpca_objective_spec(k), MechanismConfig(eps, 1.0), x, int(rng.integers(n)), random_ball_point(m, rng), probes)
    assert r <= eps / 2 + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(1, 4), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_penalized_mean_ratio_bound_property(n, d, lam, seed):
    rng = np.random.default_rng(seed)
    x = ball_records(rng, n, d)
    obj = penalized_mean_objective(lam, power_law_sigma(d))
    probes = [random_ball_point(d, rng) for _ in range(20)]
    r = verify_dp_ratio(obj, MechanismConfig(1.0, 4.0), x, int(rng.integers(n)), random_ball_point(d, rng), probes)
    assert r <= 0.5 + 1e-9


@settings(max_examples=30)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_log_density_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    x = ball_records(rng, n, 3)
    perm = rng.permutation(n)
    b = random_ball_point(3, rng)
    P = projection_from_span(random_stiefel(3, 1, rng)).P
    cases = [
        (penalized_mean_objective(0.2, power_law_sigma(3)), MechanismConfig(1.0, 4.0), b),
        (fpca_objective_spec(1), MechanismConfig(1.0, 1.0), P),
    ]
    for obj, cfg, cand in cases:
        a = log_unnormalized_density(obj, cfg, x, cand)
        assert log_unnormalized_density(obj, cfg, x[perm], cand) == pytest.approx(a, rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 100))
def test_scaling_objective_and_sensitivity(c):
    base = penalized_mean_objective(0.1, power_law_sigma(2))
    scaled = ObjectiveSpec(lambda x, b: c * base.evaluate(x, b), c * base.sensitivity, "ball", "scaled")
    x = np.array([[0.1, 0.2], [0.3, -0.4]])
    b = np.array([0.2, 0.1])
    a = log_unnormalized_density(base, MechanismConfig(1.0, base.sensitivity), x, b)
    s = log_unnormalized_density(scaled, MechanismConfig(1.0, scaled.sensitivity), x, b)
    assert s == pytest.approx(a, rel=1e-12)


def test_flat_base_unpenalized_law():
    rng = np.random.default_rng(3)
    n, eps = 50, 1.0
    x = rng.uniform(-0.5, 0.5, size=(n, 1))
    obj = penalized_mean_objective(0.0, power_law_sigma(1))
    cfg = MechanismConfig(eps, 4.0, seed=11)
    draws = sample_quadratic_mechanism(obj, cfg, x, None, 100_000, truncate=False).samples[:, 0]
    var = 4.0 / (n * eps)
    se_mean = np.sqrt(var / draws.size)
    se_var = var * np.sqrt(2 / (draws.size - 1))
    assert abs(draws.mean() - x.mean()) < 4 * se_mean
    assert abs(draws.var(ddof=1) - var) < 4 * se_var


def test_large_epsilon_concentrates_at_maximizer():
    x = np.array([[0.3, -0.2], [0.1, 0.4], [0.5, 0.0]])
    obj = penalized_mean_objective(0.1, power_law_sigma(2))
    draws = sample_quadratic_mechanism(obj, MechanismConfig(1e6, 4.0), x, power_law_sigma(2), 200)
    assert np.max(np.abs(draws.samples - quadratic_maximizer(obj, x))) < 1e-2


def test_identity_base_untruncated_moments():
    rng = np.random.default_rng(4)
    x = ball_records(rng, 5, 3)
    obj = penalized_mean_objective(0.5, CovarianceOperator(np.eye(3)))
    cfg = MechanismConfig(2.0, 4.0, seed=5)
    base = CovarianceOperator(np.eye(3))
    law = quadratic_mechanism_law(obj, cfg, x, base)
    draws = sample_quadratic_mechanism(obj, cfg, x, base, 50_000, truncate=False).samples
    se = np.sqrt(np.diag(law.cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - law.mean) < 4 * se)
    emp = np.cov(draws.T)
    se_cov = np.sqrt((law.cov**2 + np.outer(np.diag(law.cov), np.diag(law.cov))) / draws.shape[0])
    assert np.all(np.abs(emp - law.cov) < 4 * se_cov)


def polar_moments(logf, nr=200, nt=400):
    # independent oracle: Gauss-Legendre in r (with Jacobian) times uniform theta on the unit disc
    r, wr = np.polynomial.legendre.leggauss(nr)
    r, wr = (r + 1) / 2, wr / 2
    t = 2 * np.pi * np.arange(nt) / nt
    R, T = np.meshgrid(r, t, indexing="ij")
    pts = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
    lf = logf(pts)
    w = np.exp(lf - lf.max()) * (wr * r)[:, None]
    w = w / w.sum()
    mean = np.einsum("ij,ijk->k", w, pts)
    second = np.einsum("ij,ijk,ijl->kl", w, pts, pts)
    return mean, second


def test_truncated_2d_against_quadrature():
    x = np.array([[0.6, 0.2], [0.5, -0.1], [0.7, 0.3]])
    C = CovarianceOperator(np.diag([1.0, 0.5]))
    lam, eps = 0.2, 1.0
    obj = penalized_mean_objective(lam, C)
    cfg = MechanismConfig(eps, 4.0, seed=9)
    cinv = np.diag([1.0, 2.0])

    def logf(b):
        xi = -np.sum((b[..., None, :] - x) ** 2, axis=(-1, -2)) - len(x) * lam * np.einsum("...i,ij,...j", b, cinv, b)
        return eps / 8 * xi - 0.5 * np.einsum("...i,ij,...j", b, cinv, b)

    mean, second = polar_moments(logf)
    draws = sample_quadratic_mechanism(obj, cfg, x, C, 40_000)
    assert 0 < draws.acceptance_rate < 1
    s = draws.samples
    se_mean = s.std(axis=0, ddof=1) / np.sqrt(len(s))
    assert np.all(np.abs(s.mean(axis=0) - mean) < 3 * se_mean)
    outer = s[:, :, None] * s[:, None, :]
    se_second = outer.std(axis=0, ddof=1) / np.sqrt(len(s))
    assert np.all(np.abs(outer.mean(axis=0) - second) < 3 * se_second)
    assert np.all(np.linalg.norm(s, axis=1) <= 1)


def test_truncation_aborts_when_mass_outside_ball():
    # a mean far outside the ball with a tiny spread cannot be truncated to it
    obj = ObjectiveSpec(
        lambda x, b: 0.0, 1.0, "ball", "far",
        quadratic=lambda x: (1e6 * np.eye(1), np.array([2e7])),
    )
    with pytest.raises(NumericalError):
        sample_quadratic_mechanism(obj, MechanismConfig(2.0, 1.0), np.zeros((1, 1)), None, 10)
