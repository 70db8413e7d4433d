"""Seeded benchmark protocols producing long-format result rows.

Every row is ``(protocol, method, rep, n, metric, value)``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (
    RawCampaign,
    SplitSpec,
    build_replicated_design,
    fit_scaling,
    split,
)
from .densegp import check_dense_size, loglik_full_N
from .exceptions import ConfigError, InputIOError
from .kernel import kernel_matrix, safe_cholesky
from .likelihood import LatentState, ScalePrior, latent_loglik, vecchia_woodbury_loglik, woodbury_loglik
from .mcmc import McmcConfig, PriorConfig, ess_update, gibbs_fit
from .predict import PredictConfig, metrics, predict_chain_modes
from .testbeds import parse_a_spec, simulate
from .vecchia import GPCovariance, build_U, build_structure, factor_geometry, sparse_solve_transpose

__all__ = [
    "PROTOCOLS",
    "ResultRow",
    "derive_seeds",
    "forrester_rep",
    "time_ess_paths",
    "forrester_sweep",
    "timing_sweep",
    "split_mc",
    "write_rows",
]

PROTOCOLS = ("forrester-sweep", "timing-sweep", "split-mc")


@dataclass(frozen=True)
class ResultRow:
    protocol: str
    method: str
    rep: int
    n: int
    metric: str
    value: float


def derive_seeds(master: int, reps: int) -> list[int]:
    """Independent per-repetition seeds spawned from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(reps)]


@dataclass
class RepOutcome:
    """Metrics for one synthetic repetition, keyed by method."""

    seed: int
    values: dict[str, dict[str, float]] = field(default_factory=dict)


def _latent_rmse(chain, scaling, truth_var) -> float:
    logv = chain.stacked("log_lambda") + np.log(chain.stacked("tau2_N"))[:, None]
    est = logv.mean(axis=0) + 2 * math.log(scaling.y_scale)
    return float(np.sqrt(np.mean((est - np.log(truth_var)) ** 2)))


def forrester_rep(
    seed: int,
    n: int = 500,
    a_spec=10,
    n_test: int = 100,
    mcmc: McmcConfig | None = None,
    prior: PriorConfig = PriorConfig(),
    predict: PredictConfig | None = None,
    baseline: bool = False,
    testbed: str = "forrester-het",
) -> RepOutcome:
    """Fit a synthetic campaign and score it on fresh sites from the same generator.

    Reports, for the heteroskedastic fit, upper-quantile and mean-mode
    predictions and (with ``baseline``) a homoskedastic fit.
    """
    mcmc = mcmc or McmcConfig()
    mcmc = McmcConfig(**{**mcmc.__dict__, "seed": seed})
    predict = predict or PredictConfig(seed=seed)
    train_c = simulate(testbed, n, a_spec, seed=seed)
    test_c = simulate(testbed, n_test, a_spec, seed=seed + 1_000_003)
    train = build_replicated_design(train_c.raw)
    test = build_replicated_design(test_c.raw)
    scaling = fit_scaling(train)
    scaled = train.transform(scaling)
    Xt = scaling.transform_X(test.unique_inputs)
    f_test = test_c.true_mean
    out = RepOutcome(seed)

    def score(res, extra):
        r = res.inverse_transform(scaling)
        rep = metrics(r, test, predict.interval_level)
        vals = {
            "rmse": rep.rmse,
            "rmse_site_mean": rep.rmse_site_mean,
            "score": rep.score,
            "coverage": rep.coverage,
            "pi_width": rep.pi_width,
            "ci_width": rep.ci_width,
        }
        vals["rmse_true_mean"] = float(np.sqrt(np.mean((r.mean - f_test) ** 2)))
        vals["rmse_bound"] = float(np.sqrt(np.mean(test_c.true_var / test.multiplicities)))
        vals.update(extra)
        return vals

    t0 = time.perf_counter()
    chain = gibbs_fit(scaled, mcmc, prior)
    t1 = time.perf_counter()
    res = predict_chain_modes(chain, Xt, predict, ("upper-quantile", "mean"))
    t2 = time.perf_counter()
    extra = {
        "latent_rmse": _latent_rmse(chain, scaling, train_c.true_var),
        "fit_seconds": t1 - t0,
        "predict_seconds": t2 - t1,
        "ess_median_shrinks": float(np.median(chain.ess_iteration_counts)),
    }
    out.values["het"] = score(res["upper-quantile"], extra)
    out.values["het-mean-lambda"] = score(res["mean"], {})
    if baseline:
        hm = McmcConfig(**{**mcmc.__dict__, "homoskedastic": True})
        t0 = time.perf_counter()
        hchain = gibbs_fit(scaled, hm, prior)
        hres = predict_chain_modes(hchain, Xt, predict, ("upper-quantile",))
        out.values["homoskedastic"] = score(hres["upper-quantile"], {"fit_seconds": time.perf_counter() - t0})
    return out


def _rows(protocol, outcome: RepOutcome, rep: int, n: int) -> list[ResultRow]:
    return [
        ResultRow(protocol, method, rep, n, metric, float(v))
        for method, vals in outcome.values.items()
        for metric, v in vals.items()
    ]


def forrester_sweep(ns=(250, 500, 1000, 2000), reps: int = 1, seed: int = 0, a_spec=10, mcmc: McmcConfig | None = None, **kw):
    """Vecchia fits over a grid of ``n`` with ``N = a n``; records whether the
    dense full-N path would accept each size."""
    rows = []
    for n in ns:
        for rep, s in enumerate(derive_seeds(seed + n, reps)):
            outcome = forrester_rep(s, n=n, a_spec=a_spec, mcmc=mcmc, **kw)
            rows += _rows("forrester-sweep", outcome, rep, n)
            N = int(round(n * _mean_a(a_spec)))
            try:
                check_dense_size(N, "full-N likelihood")
                refused = 0.0
            except ConfigError:
                refused = 1.0
            rows.append(ResultRow("forrester-sweep", "dense-full-N", rep, n, "refused", refused))
    return rows


def _mean_a(a_spec) -> float:
    lo, hi = parse_a_spec(a_spec)
    return (lo + hi) / 2


def time_ess_paths(n: int, a: int = 50, iters: int = 5, seed: int = 0, m: int = 25, paths=None) -> dict[str, float]:
    """Seconds per ESS iteration for the unique-n Vecchia, unique-n dense and
    full-N dense likelihoods on one ``N = a n`` campaign.

    Every path starts from the same state with the same random stream; the
    dense paths draw from the exact latent prior, the Vecchia path from its
    sparse factor.
    """
    paths = paths or ("vecchia-unique-n", "dense-unique-n", "dense-full-N")
    camp = simulate("forrester-het", n, a, seed=seed)
    design = build_replicated_design(camp.raw)
    design = design.transform(fit_scaling(design))
    X = design.unique_inputs
    theta_y, theta_l, g = np.array([0.05]), np.array([0.2]), 1e-6
    prior = ScalePrior()
    ll0 = np.full(design.n, math.log(0.1))
    Lk = safe_cholesky(kernel_matrix(X, None, theta_l) + g * np.eye(design.n))
    _, tau2_l = latent_loglik(ll0 + 0.1, X, theta_l, g, prior)
    structure = build_structure(X, m, seed=seed)
    cache = factor_geometry(structure, X)
    U_l = build_U(structure, GPCovariance(X, theta_l, g), cache)
    rows = np.repeat(np.arange(design.n), design.multiplicities)
    full = design.to_campaign()
    loglik = {
        "vecchia-unique-n": lambda x: vecchia_woodbury_loglik(
            design, theta_y, x, prior, build_U(structure, GPCovariance(X, theta_y, np.exp(x) / design.multiplicities), cache)
        )[0],
        "dense-unique-n": lambda x: woodbury_loglik(design, theta_y, x, prior)[0],
        "dense-full-N": lambda x: loglik_full_N(full.outputs, full.inputs, np.exp(x)[rows], theta_y, prior)[0],
    }
    draws = {
        "vecchia-unique-n": lambda r: math.sqrt(tau2_l) * sparse_solve_transpose(U_l, r.standard_normal(design.n)),
    }
    dense_draw = lambda r: math.sqrt(tau2_l) * (Lk @ r.standard_normal(design.n))  # noqa: E731
    out = {}
    for p in paths:
        if p not in loglik:
            raise ConfigError(f"unknown timing path {p!r}")
        if p == "dense-full-N":
            check_dense_size(design.total_n, "full-N likelihood")
        rng = np.random.default_rng(seed)
        state = LatentState(ll0)
        cur = None
        t0 = time.perf_counter()
        for _ in range(iters):
            res = ess_update(state, loglik[p], draws.get(p, dense_draw), rng, cur)
            state, cur = res.latent, res.loglik
        out[p] = (time.perf_counter() - t0) / iters
    return out


def timing_sweep(ns=(20, 40, 80), a: int = 50, iters: int = 5, seed: int = 0, m: int = 25) -> list[ResultRow]:
    rows = []
    for n in ns:
        t = time_ess_paths(n, a, iters, seed, m)
        for path, sec in t.items():
            rows.append(ResultRow("timing-sweep", path, 0, n, "seconds_per_iteration", sec))
        rows.append(ResultRow("timing-sweep", "dense-full-N/vecchia-unique-n", 0, n, "ratio",
                              t["dense-full-N"] / t["vecchia-unique-n"]))
    return rows


def split_mc(
    raw: RawCampaign,
    reps: int = 30,
    seed: int = 0,
    train_fraction: float = 0.8,
    mcmc: McmcConfig | None = None,
    prior: PriorConfig = PriorConfig(),
    predict: PredictConfig | None = None,
    homoskedastic_baseline: bool = False,
) -> list[ResultRow]:
    """Random train/test splits of the unique sites of one campaign."""
    design = build_replicated_design(raw)
    mcmc = mcmc or McmcConfig()
    rows = []
    methods = [("het", False)] + ([("homoskedastic", True)] if homoskedastic_baseline else [])
    for rep, s in enumerate(derive_seeds(seed, reps)):
        train, test = split(design, SplitSpec(train_fraction, s))
        scaling = fit_scaling(train)
        pc = predict or PredictConfig(seed=s)
        for method, homo in methods:
            cfg = McmcConfig(**{**mcmc.__dict__, "seed": s, "homoskedastic": homo})
            t0 = time.perf_counter()
            chain = gibbs_fit(train.transform(scaling), cfg, prior)
            res = predict_chain_modes(chain, scaling.transform_X(test.unique_inputs), pc)[pc.lambda_mode]
            rep_m = metrics(res.inverse_transform(scaling), test, pc.interval_level, time.perf_counter() - t0)
            for metric, v in rep_m.to_dict().items():
                if metric in ("n_sites", "n_replicates"):
                    continue
                rows.append(ResultRow("split-mc", method, rep, design.n, metric, float(v)))
    return rows


def write_rows(rows: list[ResultRow], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["protocol", "method", "rep", "n", "metric", "value"])
            for r in rows:
                w.writerow([r.protocol, r.method, r.rep, r.n, r.metric, repr(r.value)])
    except OSError as exc:
        raise InputIOError(f"cannot write {path}: {exc}") from exc
