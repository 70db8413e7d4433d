import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from hetvecchia.data import RawCampaign, build_replicated_design, fit_scaling
from hetvecchia.exceptions import ConfigError, DataError
from hetvecchia.mcmc import McmcConfig, gibbs_fit
from hetvecchia.predict import (
    MomentAccumulator,
    PredictConfig,
    PredictionResult,
    aggregate,
    lambda_plugin,
    metrics,
    predict_chain,
    predict_chain_modes,
)
from hetvecchia.testbeds import simulate

Z90 = norm.ppf(0.95)


def test_aggregate_hand_example():
    res = aggregate([[1.0, 2.0], [3.0, 6.0]], [[1.0, 1.0], [3.0, 1.0]])
    np.testing.assert_allclose(res.mean, [2.0, 4.0])
    # mean of variances (2, 1) plus variance of means with T - 1 = 1: (2, 8)
    np.testing.assert_allclose(res.variance_predictive, [4.0, 9.0])
    assert not res.between_term_missing


def test_single_draw_warns_and_flags():
    with pytest.warns(RuntimeWarning):
        res = aggregate([[1.0]], [[2.0]])
    assert res.between_term_missing and res.variance_predictive[0] == 2.0
    with pytest.raises(DataError):
        MomentAccumulator(2).result()


@given(st.integers(0, 2**32 - 1), st.floats(-1e8, 1e8))
def test_aggregate_matches_numpy_under_large_offsets(seed, offset):
    rng = np.random.default_rng(seed)
    M = offset + rng.standard_normal((30, 4))
    V = rng.uniform(0.1, 2, (30, 4))
    res = aggregate(M, V)
    np.testing.assert_allclose(res.mean, M.mean(axis=0), rtol=1e-12, atol=1e-12 * abs(offset))
    ref = V.mean(axis=0) + M.var(axis=0, ddof=1)
    # the raw second-moment form loses precision as |offset| grows
    np.testing.assert_allclose(res.variance_predictive, ref, rtol=1e-6, atol=1e-15 * offset**2)


def test_metrics_hand_example():
    test = build_replicated_design(RawCampaign(np.array([[0.0], [0.0], [1.0], [1.0]]), [0.5, -2.0, 1.0, 3.0]))
    res = PredictionResult(np.array([0.0, 1.0]), np.array([1.0, 4.0]), np.array([0.25, 1.0]))
    rep = metrics(res, test, 0.90, runtime_seconds=1.5)
    assert rep.rmse == pytest.approx(math.sqrt(2.0625))
    assert rep.rmse_site_mean == pytest.approx(math.sqrt(0.78125))
    # squared z-scores 0.25, 4, 0, 1 plus log variances 0, 0, log 4, log 4
    assert rep.score == pytest.approx(-(0.25 + 4 + 0 + 1 + 2 * math.log(4)) / 4)
    assert rep.coverage == 0.75
    assert rep.pi_width == pytest.approx(3 * Z90)
    assert rep.ci_width == pytest.approx(1.5 * Z90)
    assert (rep.n_sites, rep.n_replicates, rep.runtime_seconds) == (2, 4, 1.5)


def test_metrics_validation():
    test = build_replicated_design(RawCampaign(np.array([[0.0], [1.0]]), [0.0, 1.0]))
    with pytest.raises(DataError):
        metrics(PredictionResult(np.zeros(3), np.ones(3), np.ones(3)), test)
    with pytest.raises(DataError):
        metrics(PredictionResult(np.zeros(2), np.array([1.0, 0.0]), np.zeros(2)), test)


def test_lambda_plugin_modes():
    mu, sd = np.array([0.0, -1.0]), np.array([0.5, 0.0])
    cfg = PredictConfig()
    np.testing.assert_allclose(lambda_plugin(mu, sd, cfg), np.exp(mu + Z90 * sd))
    np.testing.assert_allclose(lambda_plugin(mu, sd, cfg, mode="mean"), np.exp(mu))
    a = lambda_plugin(mu, sd, cfg, np.random.default_rng(0), "sample")
    b = lambda_plugin(mu, sd, cfg, np.random.default_rng(0), "sample")
    np.testing.assert_array_equal(a, b)
    assert a[1] == pytest.approx(math.exp(-1.0))
    with pytest.raises(ConfigError):
        lambda_plugin(mu, sd, cfg, mode="median")
    with pytest.raises(DataError):
        lambda_plugin(mu, sd[:1], cfg)


@pytest.mark.parametrize("kw", [dict(m_predict=0), dict(lambda_mode="x"), dict(interval_level=1.0), dict(quantile_z=math.inf)])
def test_predict_config_validation(kw):
    with pytest.raises(ConfigError):
        PredictConfig(**kw)


def test_interval_z():
    assert PredictConfig(interval_level=0.95).interval_z == pytest.approx(1.959963984540054)


@pytest.fixture(scope="module")
def fitted():
    c = simulate("forrester-het", 60, 5, seed=9)
    d = build_replicated_design(c.raw)
    s = fit_scaling(d)
    chain = gibbs_fit(d.transform(s), McmcConfig(total_iters=80, burn_in=40, thin=4, seed=1, m=15))
    Xt = s.transform_X(np.linspace(0, 1, 25)[:, None])
    return chain, Xt


def test_interval_nesting_per_sample_and_pooled(fitted):
    chain, Xt = fitted
    cfg = PredictConfig(m_predict=40, keep_per_sample=True)
    for mode in ("upper-quantile", "mean", "sample"):
        res = predict_chain(chain, Xt, PredictConfig(**{**cfg.__dict__, "lambda_mode": mode}))
        assert res.per_sample_mean.shape == (chain.T, 25)
        assert np.all(res.variance_confidence <= res.variance_predictive)
        pl, ph, cl, ch = res.intervals(0.9)
        assert np.all((pl <= cl) & (ch <= ph))


def test_mean_mode_intervals_are_narrower(fitted):
    chain, Xt = fitted
    out = predict_chain_modes(chain, Xt, PredictConfig(m_predict=40), ("upper-quantile", "mean"))
    np.testing.assert_allclose(out["mean"].mean, out["upper-quantile"].mean)
    assert np.all(out["mean"].variance_predictive <= out["upper-quantile"].variance_predictive)
    np.testing.assert_allclose(out["mean"].variance_confidence, out["upper-quantile"].variance_confidence)


def test_joint_and_pointwise_agree_with_full_sets(fitted):
    chain, Xt = fitted
    n = chain.design.n
    pw = predict_chain(chain, Xt, PredictConfig(m_predict=n + 25, pointwise=True))
    jt = predict_chain(chain, Xt, PredictConfig(m_predict=n + 25, pointwise=False))
    np.testing.assert_allclose(jt.mean, pw.mean, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(jt.variance_predictive, pw.variance_predictive, rtol=1e-6)


def test_prediction_is_seeded(fitted):
    chain, Xt = fitted
    cfg = PredictConfig(m_predict=30, lambda_mode="sample", seed=3)
    a, b = predict_chain(chain, Xt, cfg), predict_chain(chain, Xt, cfg)
    assert a.mean.tobytes() == b.mean.tobytes()
    assert a.variance_predictive.tobytes() == b.variance_predictive.tobytes()


def test_inverse_transform_units():
    res = PredictionResult(np.array([0.0, 1.0]), np.array([1.0, 4.0]), np.array([0.5, 1.0]))
    d = build_replicated_design(RawCampaign(np.array([[0.0], [1.0], [2.0]]), [10.0, 20.0, 30.0]))
    s = fit_scaling(d)
    r = res.inverse_transform(s)
    np.testing.assert_allclose(r.mean, s.inverse_y(res.mean))
    np.testing.assert_allclose(r.variance_predictive, res.variance_predictive * s.y_scale**2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r.intervals()
