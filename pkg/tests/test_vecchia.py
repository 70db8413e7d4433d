import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_design
from hetvecchia import vecchia
from hetvecchia.densegp import kriging_predict_dense
from hetvecchia.exceptions import ConfigError, DataError, NumericalError
from hetvecchia.kernel import kernel_matrix
from hetvecchia.likelihood import ScalePrior, latent_loglik, vecchia_woodbury_loglik, woodbury_loglik
from hetvecchia.vecchia import (
    GPCovariance,
    build_stacked_U,
    build_structure,
    build_U,
    factor_geometry,
    nearest_earlier,
    predict_from_stacked,
    quad_form,
    sparse_solve_transpose,
    stacked_layout,
)


def _nn_oracle(Xo, m):
    out = []
    for p in range(Xo.shape[0]):
        d2 = [(float(np.sum((Xo[p] - Xo[j]) ** 2)), j) for j in range(p)]
        out.append([j for _, j in sorted(d2)[:m]])
    return out


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_nearest_earlier_matches_brute_force(seed, m):
    rng = np.random.default_rng(seed)
    # a coarse grid produces ties, which go to the lower position
    Xo = rng.integers(0, 4, size=(int(rng.integers(1, 25)), 2)).astype(float)
    nb = nearest_earlier(Xo, m)
    for p, ref in enumerate(_nn_oracle(Xo, m)):
        got = nb[p][nb[p] >= 0].tolist()
        assert got == ref


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_nonzero_count(seed, m):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(int(rng.integers(1, 30)), 2))
    s = build_structure(X, m, seed=seed)
    U = build_U(s, GPCovariance(X, [0.3, 0.3], 1e-4))
    assert U.nnz == int(np.sum(s.sizes + 1))
    assert U.to_scipy().nnz == U.nnz


def test_seeded_structure_and_factor(rng):
    X = rng.uniform(size=(40, 2))
    a, b = build_structure(X, 5, seed=11), build_structure(X, 5, seed=11)
    np.testing.assert_array_equal(a.order, b.order)
    np.testing.assert_array_equal(a.neighbors, b.neighbors)
    Ua = build_U(a, GPCovariance(X, 0.2, 1e-3))
    Ub = build_U(b, GPCovariance(X, 0.2, 1e-3))
    assert Ua.diag.tobytes() == Ub.diag.tobytes() and Ua.off.tobytes() == Ub.off.tobytes()
    assert not np.array_equal(build_structure(X, 5, seed=12).order, a.order)


@pytest.mark.parametrize("fast", [True, False])
def test_columns_in_any_order_are_bitwise_identical(rng, monkeypatch, fast):
    monkeypatch.setattr(vecchia, "_FAST", fast)
    X = rng.uniform(size=(50, 2))
    s = build_structure(X, 6, seed=0)
    prov = GPCovariance(X, [0.2, 0.5], rng.uniform(0.01, 0.1, 50))
    full = build_U(s, prov)
    cols = rng.permutation(50)
    parts = [build_U(s, prov, columns=np.sort(c)) for c in (cols[:17], cols[17:33], cols[33:])]
    diag = sum(p.diag for p in parts)
    off = sum(p.off for p in parts)
    assert diag.tobytes() == full.diag.tobytes()
    assert off.tobytes() == full.off.tobytes()


def test_compiled_and_numpy_paths_agree(rng, monkeypatch):
    X = rng.uniform(size=(80, 3))
    s = build_structure(X, 10, seed=1)
    prov = GPCovariance(X, [0.3, 0.6, 1.2], rng.uniform(1e-3, 0.5, 80))
    fast = build_U(s, prov)
    monkeypatch.setattr(vecchia, "_FAST", False)
    slow = build_U(s, prov)
    np.testing.assert_allclose(fast.diag, slow.diag, rtol=1e-10)
    np.testing.assert_allclose(fast.off, slow.off, rtol=1e-9, atol=1e-11)


def test_nan_noise_raises():
    X = np.linspace(0, 1, 6)[:, None]
    s = build_structure(X, 3, seed=0)
    with pytest.raises(NumericalError):
        build_U(s, GPCovariance(X, 0.2, np.array([0.1, np.nan, 0.1, 0.1, 0.1, 0.1])))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_full_conditioning_recovers_precision(seed, d):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    X = rng.uniform(size=(n, d))
    S = kernel_matrix(X, None, 0.5) + np.diag(rng.uniform(0.05, 0.5, n))
    U = build_U(build_structure(X, n - 1, seed=seed), GPCovariance(X, 0.5, np.diag(S) - 1.0))
    M = U.to_dense()
    P = np.linalg.inv(S)
    np.testing.assert_allclose(M @ M.T, P, rtol=1e-8, atol=1e-8 * np.abs(P).max())
    assert U.logdet_cov() == pytest.approx(np.linalg.slogdet(S)[1], rel=1e-8, abs=1e-10)
    v = rng.standard_normal(n)
    assert quad_form(U, v) == pytest.approx(v @ P @ v, rel=1e-8)


def test_solve_transpose_and_draw_covariance(rng):
    n = 12
    X = rng.uniform(size=(n, 1))
    S = kernel_matrix(X, None, 0.4) + 0.2 * np.eye(n)
    U = build_U(build_structure(X, n - 1, seed=0), GPCovariance(X, 0.4, 0.2))
    z = rng.standard_normal(n)
    l = sparse_solve_transpose(U, z)
    np.testing.assert_allclose(U.to_dense().T @ l, z, atol=1e-10)
    draws = np.array([sparse_solve_transpose(U, rng.standard_normal(n)) for _ in range(20000)])
    np.testing.assert_allclose(np.cov(draws.T), S, atol=0.06)


def test_exact_likelihoods_at_full_conditioning(rng):
    design = random_design(rng, n=20, d=2)
    ll = rng.normal(-1, 0.4, design.n)
    theta = np.array([0.3, 0.7])
    s = build_structure(design.unique_inputs, design.n - 1, seed=3)
    Un = build_U(s, GPCovariance(design.unique_inputs, theta, np.exp(ll) / design.multiplicities))
    got = vecchia_woodbury_loglik(design, theta, ll, ScalePrior(), Un)
    ref = woodbury_loglik(design, theta, ll, ScalePrior())
    assert got[0] == pytest.approx(ref[0], rel=1e-8)
    assert got[1] == pytest.approx(ref[1], rel=1e-8)
    Ul = build_U(s, GPCovariance(design.unique_inputs, [0.5, 0.5], 1e-4))
    a = latent_loglik(ll, design.unique_inputs, [0.5, 0.5], 1e-4, ScalePrior(), Ul)[0]
    b = latent_loglik(ll, design.unique_inputs, [0.5, 0.5], 1e-4, ScalePrior())[0]
    assert a == pytest.approx(b, rel=1e-8)


def _stack(design, theta, lam, Xt, m_predict, pointwise, seed=0):
    s = build_structure(design.unique_inputs, 10, seed=seed)
    Xall = np.vstack([design.unique_inputs, Xt])
    noise = np.concatenate([lam / design.multiplicities, np.zeros(len(Xt))])
    return build_stacked_U(s, Xt, m_predict, GPCovariance(Xall, theta, noise), pointwise=pointwise, seed=seed)


@pytest.mark.parametrize("pointwise", [True, False])
def test_stacked_prediction_exact_with_full_sets(rng, pointwise):
    design = random_design(rng, n=25, d=2)
    lam = np.exp(rng.normal(-1, 0.3, design.n))
    theta = np.array([0.4, 0.4])
    Xt = rng.uniform(size=(8, 2))
    blocks = _stack(design, theta, lam, Xt, design.n + 8, pointwise)
    mu, cov = predict_from_stacked(blocks, design.means, return_cov=True)
    mu_ref, S_ref = kriging_predict_dense(design, theta, lam, 1.0, Xt)
    np.testing.assert_allclose(mu, mu_ref, rtol=1e-8, atol=1e-10)
    if pointwise:
        np.testing.assert_allclose(np.diag(cov), np.diag(S_ref), rtol=1e-7, atol=1e-12)
    else:
        np.testing.assert_allclose(cov, S_ref, rtol=1e-7, atol=1e-10)


def test_pointwise_and_joint_means_agree_on_training_only_sets(rng):
    design = random_design(rng, n=60, d=1)
    lam = np.exp(rng.normal(-1, 0.3, design.n))
    Xt = rng.uniform(size=(30, 1))
    pw = _stack(design, [0.1], lam, Xt, 8, True)
    jt = _stack(design, [0.1], lam, Xt, 8, False)
    mu_pw, _ = predict_from_stacked(pw, design.means)
    mu_jt, _ = predict_from_stacked(jt, design.means)
    only_train = np.zeros(len(Xt), dtype=bool)
    only_train[jt.layout.test_order] = np.all(jt.layout.neighbors < design.n, axis=1)
    assert only_train.sum() >= 1
    np.testing.assert_allclose(mu_pw[only_train], mu_jt[only_train], rtol=1e-9, atol=1e-12)


def test_joint_prediction_size_guard(rng, monkeypatch):
    design = random_design(rng, n=10)
    blocks = _stack(design, [0.3], np.ones(design.n), rng.uniform(size=(6, 1)), 4, False)
    monkeypatch.setattr(vecchia, "JOINT_MAX", 5)
    with pytest.raises(ConfigError):
        predict_from_stacked(blocks, design.means)


def test_argument_validation(rng):
    X = rng.uniform(size=(5, 1))
    with pytest.raises(ConfigError):
        build_structure(X, 0)
    with pytest.raises(ConfigError):
        build_structure(X, 2, order=[0, 0, 1, 2, 3])
    s = build_structure(X, 2, seed=0)
    with pytest.raises(ConfigError):
        stacked_layout(s, X, X, 0)
    with pytest.raises(DataError):
        stacked_layout(s, X, np.zeros((2, 2)), 3)
    with pytest.raises(DataError):
        quad_form(build_U(s, GPCovariance(X, 0.3, 0.1)), np.ones(3))


def test_geometry_cache_reuse(rng):
    X = rng.uniform(size=(30, 2))
    s = build_structure(X, 5, seed=0)
    cache = factor_geometry(s, X)
    for theta in ([0.1, 0.2], [0.3, 0.3], [0.1, 0.2]):
        a = build_U(s, GPCovariance(X, theta, 0.05), cache)
        b = build_U(s, GPCovariance(X, theta, 0.05))
        assert a.diag.tobytes() == b.diag.tobytes()
