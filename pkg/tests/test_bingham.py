import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dpfpca.bingham import (
    DEFAULT_BURN_IN, BinghamParameter, ChainState, StiefelPoint, VectorBingham, batch_means_se,
    bingham_moment_oracle, build_bingham_parameter, gibbs_step, random_stiefel, run_chain,
    sample_vector_bingham, write_trace_jsonl,
)
from dpfpca.covariance import CovarianceOperator, power_law_sigma
from dpfpca.errors import DataError
from dpfpca.streams import stream


def chain_second_moment(A, n, seed, burn_in=200):
    res = run_chain(BinghamParameter(np.asarray(A, float)), 1, burn_in=burn_in, keep=n, seed=seed)
    v = res.samples[:, :, 0]
    outer = v[:, :, None] * v[:, None, :]
    return outer.mean(axis=0), batch_means_se(outer)


def circle_e11(a):
    num = integrate.quad(lambda t: np.cos(t) ** 2 * np.exp(a * np.cos(t) ** 2), 0, 2 * np.pi)[0]
    den = integrate.quad(lambda t: np.exp(a * np.cos(t) ** 2), 0, 2 * np.pi)[0]
    return num / den


def test_parameter_zero_data_identity_sigma():
    p = build_bingham_parameter(np.zeros((4, 3)), CovarianceOperator(np.eye(3)), 0.8)
    assert np.allclose(p.A, -0.4 * np.eye(3), atol=1e-15)


def test_parameter_single_record():
    x = np.array([[1.0, 0.0, 0.0]])
    p = build_bingham_parameter(x, CovarianceOperator(np.eye(3)), 2.0)
    assert np.allclose(p.A, np.outer([1, 0, 0], [1, 0, 0]) - np.eye(3), atol=1e-15)


def test_parameter_matches_second_expression():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.3, 0.3, size=(12, 5))
    sigma = power_law_sigma(5, 2.0)
    p = build_bingham_parameter(x, sigma, 1.7)
    expected = np.zeros((5, 5))
    for row in x:
        expected += np.outer(row, row)
    expected -= np.diag(np.arange(1, 6) ** 2.0)
    expected *= 1.7 / 2
    assert np.max(np.abs(p.A - expected)) < 1e-12


def test_parameter_dimension_mismatch():
    with pytest.raises(DataError):
        build_bingham_parameter(np.zeros((3, 4)), power_law_sigma(5), 1.0)


def test_parameter_validation():
    with pytest.raises(DataError):
        BinghamParameter(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DataError):
        BinghamParameter(np.zeros((2, 2)), k=3)


def test_stiefel_point_validation():
    StiefelPoint(np.eye(3)[:, :2])
    with pytest.raises(DataError):
        StiefelPoint(np.ones((3, 2)))


@pytest.mark.parametrize("c", [-3.0, 0.0, 4.0])
def test_vector_bingham_isotropic(c):
    p, n = 4, 20000
    rng = stream(1, 0)
    z = np.array([sample_vector_bingham(c * np.eye(p), rng) for _ in range(n)])
    var = (z**2).mean(axis=0)
    se = (z**2).std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(var - 1 / p) < 3 * se)


@pytest.mark.parametrize("b", [1.0, 5.0, 20.0])
def test_vector_bingham_circle(b):
    n = 20000
    vb = VectorBingham(np.diag([b, 0.0]))
    rng = stream(2, int(b))
    z1 = np.array([vb.draw(rng)[0][0] for _ in range(n)]) ** 2
    assert abs(z1.mean() - circle_e11(b)) < 3 * z1.std(ddof=1) / np.sqrt(n)


def test_vector_bingham_antipodal():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5))
    vb = VectorBingham(3 * (a + a.T))
    gen = stream(3, 0)
    z = np.array([vb.draw(gen)[0] for _ in range(20000)])
    se = z.std(axis=0, ddof=1) / np.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0)) < 3 * se)


def test_vector_bingham_one_dimensional():
    vb = VectorBingham(np.array([[2.0]]))
    rng = stream(4, 0)
    signs = np.array([vb.draw(rng)[0][0] for _ in range(4000)])
    assert set(np.unique(signs)) == {-1.0, 1.0}
    assert abs(signs.mean()) < 4 / np.sqrt(4000)


def test_vector_bingham_exchangeable():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 3))
    B = 2 * (a + a.T)
    perm = np.array([2, 0, 1])
    Bp = B[np.ix_(perm, perm)]
    n = 20000
    z = np.array([sample_vector_bingham(B, g) for g in [stream(6, 0)] for _ in range(n)])
    zp = np.array([sample_vector_bingham(Bp, g) for g in [stream(6, 1)] for _ in range(n)])
    m1 = (z**2).mean(axis=0)[perm]
    m2 = (zp**2).mean(axis=0)
    se = np.sqrt(((z**2).var(axis=0)[perm] + (zp**2).var(axis=0)) / n)
    assert np.all(np.abs(m1 - m2) < 4 * se)


def test_gibbs_zero_energy_uniform_sphere():
    # for m = 3 the first coordinate of a uniform point is uniform on [-1, 1]
    param = BinghamParameter(np.zeros((3, 3)))
    state = ChainState(np.eye(3)[:, :1].copy(), stream(7, 0))
    n = 100_000
    first = np.empty(n)
    for i in range(n):
        gibbs_step(state, param)
        first[i] = state.V[0, 0]
    a = np.abs(first)
    assert abs(a.mean() - 0.5) < 3 * a.std(ddof=1) / np.sqrt(n)
    assert abs((a**2).mean() - 1 / 3) < 3 * (a**2).std(ddof=1) / np.sqrt(n)


def test_gibbs_full_frame_sign_flips():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(3, 3))
    param = BinghamParameter(a + a.T, k=3)
    state = ChainState(random_stiefel(3, 3, rng), stream(8, 0))
    flips = []
    for _ in range(3000):
        before = state.V.copy()
        gibbs_step(state, param)
        assert np.allclose(np.abs(state.V), np.abs(before), atol=1e-8)
        flips.extend(np.sign(np.sum(before * state.V, axis=0)) < 0)
        StiefelPoint(state.V)
    flips = np.array(flips, dtype=float)
    assert abs(flips.mean() - 0.5) < 4 * 0.5 / np.sqrt(flips.size)


def test_gibbs_rebuilds_degenerate_state():
    param = BinghamParameter(np.diag([1.0, 0.0, -1.0, 0.5]), k=2)
    state = ChainState(np.zeros((4, 2)), stream(9, 0))
    gibbs_step(state, param)
    assert state.rebuilds >= 1
    StiefelPoint(state.V)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.data())
def test_gibbs_keeps_orthonormal_columns(m, data):
    k = data.draw(st.integers(1, m))
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=5, size=(m, m))
    param = BinghamParameter(a + a.T, k)
    state = ChainState(random_stiefel(m, k, rng), stream(seed, 1))
    for _ in range(5):
        gibbs_step(state, param)
        assert np.max(np.abs(state.V.T @ state.V - np.eye(k))) <= 1e-8
    assert len(state.trace) == 5 and state.step_count == 5


@pytest.mark.parametrize("a", [1.0, 5.0, 20.0])
def test_chain_circle_moments_match_oracle(a):
    A = np.diag([a, 0.0])
    emp, se = chain_second_moment(A, 20000, seed=int(a))
    exact = bingham_moment_oracle(BinghamParameter(A)).second_moment
    assert abs(emp[0, 0] - exact[0, 0]) < 3 * se[0, 0]


@pytest.mark.parametrize("seed", [10, 11])
def test_chain_circle_moments_random_A(seed):
    a = np.random.default_rng(seed).normal(scale=3, size=(2, 2))
    A = a + a.T
    emp, se = chain_second_moment(A, 20000, seed=seed)
    exact = bingham_moment_oracle(BinghamParameter(A)).second_moment
    assert np.all(np.abs(emp - exact) <= 3 * se + 1e-12)


def test_chain_sphere_moments_match_oracle():
    a = np.random.default_rng(12).normal(scale=2, size=(3, 3))
    A = a + a.T
    emp, se = chain_second_moment(A, 20000, seed=12)
    exact = bingham_moment_oracle(BinghamParameter(A)).second_moment
    assert np.all(np.abs(emp - exact) <= 3 * se + 1e-12)


def test_identity_shift_leaves_law_unchanged():
    A = np.diag([4.0, 0.0])
    m1, se1 = chain_second_moment(A, 20000, seed=13)
    m2, se2 = chain_second_moment(A + 100 * np.eye(2), 20000, seed=14)
    assert abs(m1[0, 0] - m2[0, 0]) < 4 * np.hypot(se1[0, 0], se2[0, 0])


def test_run_chain_reproducible():
    a = np.random.default_rng(15).normal(size=(6, 6))
    param = BinghamParameter(a + a.T, k=2)
    r1 = run_chain(param, burn_in=50, keep=5, seed=3, stream_id=2)
    r2 = run_chain(param, burn_in=50, keep=5, seed=3, stream_id=2)
    assert np.array_equal(r1.samples, r2.samples)
    assert np.array_equal(r1.trace, r2.trace)
    r3 = run_chain(param, burn_in=50, keep=5, seed=3, stream_id=3)
    assert not np.array_equal(r1.samples, r3.samples)


def test_run_chain_no_burn_in_zero_energy():
    res = run_chain(BinghamParameter(np.zeros((5, 5)), k=2), burn_in=0, keep=1, seed=0)
    assert np.max(np.abs(res.final.V.T @ res.final.V - np.eye(2))) <= 1e-8
    assert res.metadata["samples_are_private"] is False


def test_default_burn_in():
    assert DEFAULT_BURN_IN == 20000
    assert run_chain.__defaults__[1] == 20000


def test_run_chain_argument_checks():
    param = BinghamParameter(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        run_chain(param, burn_in=-1)
    with pytest.raises(DataError):
        run_chain(param, k=4, burn_in=0)


def test_trace_bounded_and_tight_for_large_scale():
    a = np.random.default_rng(16).normal(size=(5, 5))
    base = a + a.T
    fractions = []
    for c in (0.5, 50.0):
        param = BinghamParameter(c * base, k=2)
        res = run_chain(param, burn_in=300, keep=1, seed=1)
        assert np.all(res.trace <= param.max_trace() + 1e-9)
        lam = np.linalg.eigvalsh(c * base)
        low = lam[0] + lam[1]
        fractions.append((res.trace[100:].mean() - low) / (param.max_trace() - low))
    assert fractions[1] > fractions[0]
    assert fractions[1] > 0.98


def test_oracle_uniform_cases():
    assert np.allclose(bingham_moment_oracle(BinghamParameter(np.zeros((2, 2)))).second_moment, np.eye(2) / 2, atol=1e-12)
    assert np.allclose(bingham_moment_oracle(BinghamParameter(np.zeros((3, 3)))).second_moment, np.eye(3) / 3, atol=1e-12)


def test_oracle_refinement_agreement():
    rep = bingham_moment_oracle(BinghamParameter(np.diag([10.0, 0.0])))
    assert rep.error_estimate < 1e-8
    assert rep.second_moment[0, 0] == pytest.approx(circle_e11(10.0), abs=1e-8)


def test_oracle_sphere_against_scipy():
    A = np.diag([3.0, 1.0, 0.0])

    def dens(u, phi, f):
        s = np.sqrt(1 - u * u)
        x = np.array([s * np.cos(phi), s * np.sin(phi), u])
        return f(x) * np.exp(x @ A @ x)

    z = integrate.dblquad(lambda p, u: dens(u, p, lambda x: 1.0), -1, 1, 0, 2 * np.pi)[0]
    e11 = integrate.dblquad(lambda p, u: dens(u, p, lambda x: x[0] ** 2), -1, 1, 0, 2 * np.pi)[0] / z
    rep = bingham_moment_oracle(BinghamParameter(A))
    assert rep.second_moment[0, 0] == pytest.approx(e11, abs=1e-7)


def test_oracle_rejects_out_of_scope():
    with pytest.raises(DataError):
        bingham_moment_oracle(BinghamParameter(np.zeros((4, 4))))
    with pytest.raises(DataError):
        bingham_moment_oracle(BinghamParameter(np.zeros((3, 3)), k=2))


def test_trace_jsonl(tmp_path):
    path = tmp_path / "trace.jsonl"
    write_trace_jsonl(path, [1.5, -2.0])
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert lines == [{"step": 1, "trace": 1.5}, {"step": 2, "trace": -2.0}]
