"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6, 7 and 10 share the ten seeded Forrester-het repetitions.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import random_design, record_criterion
from hetvecchia.benchmark import derive_seeds, forrester_rep, time_ess_paths
from hetvecchia.cli import main
from hetvecchia.data import RawCampaign, build_replicated_design, fit_scaling
from hetvecchia.densegp import kriging_predict_dense, loglik_full_N
from hetvecchia.kernel import kernel_matrix
from hetvecchia.likelihood import LatentState, ScalePrior, latent_loglik, vecchia_woodbury_loglik, woodbury_loglik
from hetvecchia.mcmc import McmcConfig, ess_update, gibbs_fit, mh_lengthscale_update, theta_rate
from hetvecchia.testbeds import simulate
from hetvecchia.vecchia import (
    GPCovariance,
    build_stacked_U,
    build_structure,
    build_U,
    predict_from_stacked,
    quad_form,
    sparse_solve_transpose,
)

pytestmark = pytest.mark.slow

REPS = 10


def _rel(a, b):
    return abs(a - b) / abs(b)


def _vrel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def _batch_se(series, batches=50):
    """Batch-means Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(series, dtype=float)
    k = x.shape[0] // batches
    means = x[: k * batches].reshape(batches, k, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(batches)


def test_c01_woodbury_identity():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, 31))
        X = rng.uniform(size=(n, d))
        a = rng.integers(1, 11, size=n)
        rows = np.repeat(np.arange(n), a)
        y = rng.standard_normal(rows.size) + np.cos(4 * X[rows].sum(axis=1))
        design = build_replicated_design(RawCampaign(X[rows], y))
        theta = rng.uniform(0.02, 2.0, size=d)
        ll = rng.normal(-1.0, 1.0, size=n)
        ref, _ = loglik_full_N(y, X[rows], np.exp(ll)[rows], theta, ScalePrior())
        got, _ = woodbury_loglik(design, theta, ll, ScalePrior())
        worst = max(worst, _rel(got, ref))
    secs = time.perf_counter() - t0
    ok = worst < 1e-8 and secs < 10
    record_criterion(1, ok, f"max relative error {worst:.2e} over 50 instances (< 1e-8), {secs:.1f} s (< 10 s)")
    assert ok


def test_c02_vecchia_exactness():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = dict(loglik=0.0, logdet=0.0, quad=0.0, mean=0.0, var=0.0)
    for i in range(20):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(5, 61))
        design = random_design(rng, n=n, d=d, a_max=8)
        theta = rng.uniform(0.05, 1.0, size=d)
        ll = rng.normal(-1.0, 0.5, size=n)
        noise = np.exp(ll) / design.multiplicities
        s = build_structure(design.unique_inputs, n - 1, seed=i)
        U = build_U(s, GPCovariance(design.unique_inputs, theta, noise))
        Sigma = kernel_matrix(design.unique_inputs, None, theta) + np.diag(noise)
        worst["loglik"] = max(worst["loglik"], _rel(
            vecchia_woodbury_loglik(design, theta, ll, ScalePrior(), U)[0], woodbury_loglik(design, theta, ll, ScalePrior())[0]
        ))
        Ul = build_U(s, GPCovariance(design.unique_inputs, theta * 2, 1e-4))
        worst["loglik"] = max(worst["loglik"], _rel(
            latent_loglik(ll, design.unique_inputs, theta * 2, 1e-4, ScalePrior(), Ul)[0],
            latent_loglik(ll, design.unique_inputs, theta * 2, 1e-4, ScalePrior())[0],
        ))
        worst["logdet"] = max(worst["logdet"], _rel(U.logdet_cov(), np.linalg.slogdet(Sigma)[1]))
        v = rng.standard_normal(n)
        worst["quad"] = max(worst["quad"], _rel(quad_form(U, v), v @ np.linalg.solve(Sigma, v)))
        Xt = rng.uniform(size=(10, d))
        Xall = np.vstack([design.unique_inputs, Xt])
        blocks = build_stacked_U(s, Xt, n, GPCovariance(Xall, theta, np.concatenate([noise, np.zeros(10)])), seed=i)
        mu, var = predict_from_stacked(blocks, design.means)
        mu_ref, S_ref = kriging_predict_dense(design, theta, np.exp(ll), 1.0, Xt)
        worst["mean"] = max(worst["mean"], _vrel(mu, mu_ref))
        worst["var"] = max(worst["var"], _vrel(var, np.diag(S_ref)))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-8 and secs < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_criterion(2, ok, f"max relative errors at m = n-1: {detail} (< 1e-8), {secs:.1f} s (< 30 s)")
    assert ok


def test_c03_vecchia_accuracy_improves_with_m():
    t0 = time.perf_counter()
    c = simulate("forrester-het", 500, 10, seed=303)
    design = build_replicated_design(c.raw)
    design = design.transform(fit_scaling(design))
    theta = np.array([0.05])
    ll = np.log(c.true_var / np.var(c.raw.outputs))
    ref = woodbury_loglik(design, theta, ll, ScalePrior())[0]
    err = {}
    for m in (5, 25):
        s = build_structure(design.unique_inputs, m, seed=0)
        U = build_U(s, GPCovariance(design.unique_inputs, theta, np.exp(ll) / design.multiplicities))
        err[m] = abs(vecchia_woodbury_loglik(design, theta, ll, ScalePrior(), U)[0] - ref)
    secs = time.perf_counter() - t0
    ok = err[25] < err[5] and secs < 60
    record_criterion(3, ok, f"|logL error| m=5: {err[5]:.3e}, m=25: {err[25]:.3e} (must decrease), {secs:.1f} s (< 60 s)")
    assert ok


def test_c04_ess_prior_recovery():
    t0 = time.perf_counter()
    n, iters = 50, 10_000
    X = simulate("forrester-het", n, 1, seed=404).sites
    U = build_U(build_structure(X, 25, seed=0), GPCovariance(X, [0.3], 1e-6))
    M = U.to_dense()
    prior_var = np.diag(np.linalg.inv(M @ M.T))
    rng = np.random.default_rng(404)
    x = LatentState(np.zeros(n))
    draws = np.empty((iters, n))
    for t in range(iters):
        res = ess_update(x, lambda v: 0.0, lambda r: sparse_solve_transpose(U, r.standard_normal(n)), rng)
        x = res.latent
        draws[t] = x.log_lambda
    z_mean = np.abs(draws.mean(axis=0)) / _batch_se(draws)
    sq = draws**2
    z_var = np.abs(sq.mean(axis=0) - prior_var) / _batch_se(sq)
    # shrink counts under a real data likelihood on the testbed
    c = simulate("forrester-het", n, 10, seed=404)
    d = build_replicated_design(c.raw)
    chain = gibbs_fit(d.transform(fit_scaling(d)), McmcConfig(seed=404))
    med = float(np.median(chain.ess_iteration_counts))
    secs = time.perf_counter() - t0
    ok = z_mean.max() <= 3 and z_var.max() <= 3 and med <= 20 and secs < 60
    record_criterion(
        4, ok,
        f"max |z| mean {z_mean.max():.2f}, variance {z_var.max():.2f} (<= 3 MC s.e.); "
        f"median shrinks {med:g} (<= 20); {secs:.1f} s (< 60 s)",
    )
    assert ok


def test_c05_mh_gamma_target():
    t0 = time.perf_counter()
    a = 1.5
    b = theta_rate(np.array([[0.0], [1.0]]), a)
    target = stats.gamma(a, scale=1 / b)
    rng = np.random.default_rng(505)
    theta, lp = target.mean(), target.logpdf(target.mean())
    draws = np.empty(100_000)
    for t in range(draws.size):
        res = mh_lengthscale_update(theta, target.logpdf, rng, lp)
        theta, lp = res.theta, res.logpost
        draws[t] = theta
    z = abs(draws.mean() - target.mean()) / _batch_se(draws, 100)
    secs = time.perf_counter() - t0
    ok = z <= 3 and secs < 30
    record_criterion(
        5, ok, f"Gamma({a}, {b:g}) mean {target.mean():.4f}, chain {draws.mean():.4f}, |z| {z:.2f} (<= 3); {secs:.1f} s (< 30 s)"
    )
    assert ok


@pytest.fixture(scope="module")
def forrester_runs():
    t0 = time.perf_counter()
    runs = [forrester_rep(s, n=500, a_spec=10, n_test=100, baseline=True) for s in derive_seeds(2024, REPS)]
    return runs, time.perf_counter() - t0


def test_c06_forrester_recovery(forrester_runs):
    runs, total = forrester_runs
    het = [r.values["het"] for r in runs]
    latent = np.array([h["latent_rmse"] for h in het])
    ratio = np.array([h["rmse_true_mean"] / h["rmse_bound"] for h in het])
    cover = float(np.mean([h["coverage"] for h in het]))
    secs = sum(h["fit_seconds"] + h["predict_seconds"] for h in het)
    ok = latent.max() < 0.5 and ratio.max() < 1.5 and 0.85 <= cover <= 0.95 and secs < 600
    record_criterion(
        6, ok,
        f"latent RMSE max {latent.max():.3f} (< 0.5); RMSE/bound max {ratio.max():.2f} (< 1.5); "
        f"mean coverage {cover:.3f} in [0.85, 0.95]; {secs:.0f} s fitting+predicting (< 600 s), "
        f"{total:.0f} s with baselines",
    )
    assert ok


def test_c07_coverage_ordering(forrester_runs):
    runs, _ = forrester_runs
    wins = sum(r.values["het-mean-lambda"]["coverage"] <= r.values["het"]["coverage"] for r in runs)
    ok = wins >= 9
    record_criterion(7, ok, f"mean-mode coverage <= upper-quantile coverage in {wins}/{REPS} repetitions (>= 9)")
    assert ok


def test_c08_timing_ordering():
    t0 = time.perf_counter()
    parts, ok = [], True
    for n in (20, 40, 80):
        t = time_ess_paths(n, a=50, iters=3, seed=808)
        fast, full = t["vecchia-unique-n"], t["dense-full-N"]
        ok &= fast < full and t["dense-unique-n"] < full
        parts.append(f"n={n}: {full / fast:.0f}x")
    secs = time.perf_counter() - t0
    ok &= secs < 900
    record_criterion(8, ok, f"full-N / unique-n Vecchia time per ESS iteration: {', '.join(parts)}; {secs:.0f} s (< 900 s)")
    assert ok


def test_c09_determinism(tmp_path):
    p = tmp_path
    assert main(["simulate", "--n", "80", "--a-spec", "5", "--seed", "9", "--output", str(p / "train.csv")]) == 0
    assert main(["simulate", "--n", "30", "--a-spec", "5", "--seed", "10", "--output", str(p / "test.csv")]) == 0
    fit = ["--input", str(p / "train.csv"), "--iters", "200", "--burn-in", "100", "--thin", "10", "--seed", "3"]
    for k in (1, 2):
        assert main(["fit", *fit, "--output", str(p / f"ck{k}.json")]) == 0
        assert main(["predict", "--checkpoint", str(p / f"ck{k}.json"), "--input", str(p / "test.csv"),
                     "--lambda-mode", "sample", "--output", str(p / f"pred{k}.csv")]) == 0
    same_ck = (p / "ck1.json").read_bytes() == (p / "ck2.json").read_bytes()
    same_pred = (p / "pred1.csv").read_bytes() == (p / "pred2.csv").read_bytes()
    ok = same_ck and same_pred
    record_criterion(9, ok, f"checkpoints identical: {same_ck}; prediction CSVs identical: {same_pred}")
    assert ok


def test_c10_het_beats_homoskedastic(forrester_runs):
    runs, _ = forrester_runs
    gaps = np.array([r.values["het"]["score"] - r.values["homoskedastic"]["score"] for r in runs])
    wins = int(np.sum(gaps > 0))
    ok = wins >= 9
    record_criterion(10, ok, f"het score above homoskedastic in {wins}/{REPS} repetitions (>= 9); mean gap {gaps.mean():.3f}")
    assert ok
