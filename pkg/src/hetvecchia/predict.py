"""Posterior predictive moments from a fitted chain.

For every retained draw the log latent variances are kriged to the test inputs,
turned into a plug-in noise level, and the mean process is kriged with that
noise on the test diagonal.  Per-draw moments are pooled with the law of total
variance.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .data import ReplicatedDesign, Scaling
from .exceptions import ConfigError, DataError
from .mcmc import ChainSamples, HyperState
from .vecchia import (
    GPCovariance,
    VecchiaStructure,
    build_stacked_U,
    predict_from_stacked,
    stacked_geometry,
    stacked_layout,
)

__all__ = [
    "LAMBDA_MODES",
    "PredictConfig",
    "PredictionResult",
    "MetricReport",
    "PredictionContext",
    "MomentAccumulator",
    "predict_latent",
    "lambda_plugin",
    "predict_mean",
    "aggregate",
    "predict_chain",
    "predict_chain_modes",
    "metrics",
]

LAMBDA_MODES = ("upper-quantile", "mean", "sample")


@dataclass(frozen=True)
class PredictConfig:
    m_predict: int = 200
    lambda_mode: str = "upper-quantile"
    quantile_z: float = float(norm.ppf(0.95))
    pointwise: bool = True
    interval_level: float = 0.90
    keep_per_sample: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.m_predict < 1:
            raise ConfigError("m_predict must be >= 1")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ConfigError(f"lambda_mode must be one of {', '.join(LAMBDA_MODES)}")
        if not 0 < self.interval_level < 1:
            raise ConfigError("interval_level must lie in (0, 1)")
        if not math.isfinite(self.quantile_z):
            raise ConfigError("quantile_z must be finite")

    @property
    def interval_z(self) -> float:
        return float(norm.ppf(0.5 + self.interval_level / 2))


@dataclass(frozen=True)
class PredictionResult:
    """Pooled moments at the test inputs.

    ``variance_predictive`` includes the noise ``tau2 * lambda(x)``;
    ``variance_confidence`` is the same quantity without it.
    """

    mean: np.ndarray
    variance_predictive: np.ndarray
    variance_confidence: np.ndarray
    per_sample_mean: np.ndarray | None = None
    per_sample_var: np.ndarray | None = None
    between_term_missing: bool = False

    def __len__(self):
        return self.mean.shape[0]

    @property
    def sd_predictive(self) -> np.ndarray:
        return np.sqrt(self.variance_predictive)

    @property
    def sd_confidence(self) -> np.ndarray:
        return np.sqrt(self.variance_confidence)

    def intervals(self, level: float = 0.90):
        """``(pi_lo, pi_hi, ci_lo, ci_hi)`` for central normal intervals."""
        z = float(norm.ppf(0.5 + level / 2))
        pw = z * self.sd_predictive
        cw = z * self.sd_confidence
        return self.mean - pw, self.mean + pw, self.mean - cw, self.mean + cw

    def inverse_transform(self, scaling: Scaling) -> "PredictionResult":
        ps_mean = None if self.per_sample_mean is None else scaling.inverse_y(self.per_sample_mean)
        ps_var = None if self.per_sample_var is None else scaling.inverse_var(self.per_sample_var)
        return PredictionResult(
            scaling.inverse_y(self.mean),
            scaling.inverse_var(self.variance_predictive),
            scaling.inverse_var(self.variance_confidence),
            ps_mean,
            ps_var,
            self.between_term_missing,
        )


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    rmse_site_mean: float
    score: float
    coverage: float
    pi_width: float
    ci_width: float
    runtime_seconds: float | None = None
    n_sites: int = 0
    n_replicates: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class PredictionContext:
    """Test-point layout and geometry shared by all draws of one chain."""

    def __init__(self, design: ReplicatedDesign, structure: VecchiaStructure, X_test, config: PredictConfig):
        X_test = np.asarray(X_test, dtype=float)
        if X_test.ndim == 1:
            X_test = X_test[:, None]
        if X_test.ndim != 2 or X_test.shape[1] != design.d:
            raise DataError(f"test inputs need {design.d} columns, got shape {X_test.shape}")
        if not np.isfinite(X_test).all():
            raise DataError("test inputs contain non-finite values")
        self.design = design
        self.structure = structure
        self.X_test = X_test
        self.config = config
        self.layout = stacked_layout(
            structure, design.unique_inputs, X_test, config.m_predict, config.pointwise, seed=config.seed
        )
        self.X_all = np.vstack([design.unique_inputs, X_test])
        self.geometry = stacked_geometry(structure, self.layout, self.X_all)

    @property
    def n_test(self) -> int:
        return self.X_test.shape[0]

    def krige(self, theta, noise_train, noise_test, values):
        prov = GPCovariance(self.X_all, theta, np.concatenate([noise_train, noise_test]))
        blocks = build_stacked_U(
            self.structure, self.X_test, self.config.m_predict, prov,
            layout=self.layout, with_train=False, cache=self.geometry,
        )
        return predict_from_stacked(blocks, values)


def predict_latent(sample: HyperState, ctx: PredictionContext, homoskedastic: bool = False):
    """Kriging mean and standard deviation of the log latent variance at the test inputs."""
    n_p = ctx.n_test
    ll = sample.latent.log_lambda
    if homoskedastic:
        return np.full(n_p, float(ll[0])), np.zeros(n_p)
    g = sample.g_lambda
    mu, var = ctx.krige(sample.theta_lambda, np.full(ll.shape[0], g), np.full(n_p, g), ll)
    return mu, np.sqrt(sample.tau2_lambda * np.maximum(var, 0.0))


def lambda_plugin(mu, sd, config: PredictConfig, rng: np.random.Generator | None = None, mode: str | None = None):
    """Plug-in latent variance at the test inputs."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if mu.shape != sd.shape:
        raise DataError("mean and sd vectors must align")
    mode = mode or config.lambda_mode
    if mode == "upper-quantile":
        return np.exp(mu + config.quantile_z * sd)
    if mode == "mean":
        return np.exp(mu)
    if mode == "sample":
        rng = np.random.default_rng(rng)
        return np.exp(mu + sd * rng.standard_normal(mu.shape))
    raise ConfigError(f"unknown lambda mode {mode!r}")


def _mean_moments(sample: HyperState, ctx: PredictionContext, lam_test):
    """Returns ``(mu, v0)`` where ``v0`` is the unscaled conditional variance.

    Pointwise layouts condition test points on training sites only, so the test
    noise enters additively and ``v0`` excludes it; joint layouts include it.
    """
    d = ctx.design
    noise_train = np.exp(sample.latent.log_lambda) / d.multiplicities
    test_noise = np.zeros(ctx.n_test) if ctx.layout.pointwise else lam_test
    return ctx.krige(sample.theta_y, noise_train, test_noise, d.means)


def predict_mean(sample: HyperState, lam_test, ctx: PredictionContext, _moments=None):
    """Predictive mean, predictive variance and confidence variance at the test inputs."""
    lam_test = np.asarray(lam_test, dtype=float)
    mu, v = _moments if _moments is not None else _mean_moments(sample, ctx, lam_test)
    tau2 = sample.tau2_N
    if ctx.layout.pointwise:
        conf = tau2 * np.maximum(v, 0.0)
        pred = conf + tau2 * lam_test
    else:
        pred = tau2 * v
        conf = np.maximum(pred - tau2 * lam_test, 0.0)
    return mu, pred, conf


class MomentAccumulator:
    """Streaming law-of-total-variance pooling with compensated sums."""

    def __init__(self, n: int, keep: bool = False):
        self.T = 0
        self._sums = np.zeros((4, n))
        self._comp = np.zeros((4, n))
        self._kept = [] if keep else None

    def _add(self, k, v):
        s = self._sums[k]
        t = s + v
        big = np.abs(s) >= np.abs(v)
        self._comp[k] += np.where(big, (s - t) + v, (v - t) + s)
        self._sums[k] = t

    def add(self, mean, var_pred, var_conf):
        mean = np.asarray(mean, dtype=float)
        self._add(0, mean)
        self._add(1, mean * mean)
        self._add(2, np.asarray(var_pred, dtype=float))
        self._add(3, np.asarray(var_conf, dtype=float))
        self.T += 1
        if self._kept is not None:
            self._kept.append((mean.copy(), np.asarray(var_pred, dtype=float).copy()))

    def result(self) -> PredictionResult:
        if self.T == 0:
            raise DataError("no samples to aggregate")
        tot = self._sums + self._comp
        T = self.T
        mean = tot[0] / T
        missing = T < 2
        if missing:
            warnings.warn("a single draw gives no between-sample variance", RuntimeWarning, stacklevel=2)
            between = np.zeros_like(mean)
        else:
            between = np.maximum(tot[1] - T * mean * mean, 0.0) / (T - 1)
        ps_m = ps_v = None
        if self._kept is not None:
            ps_m = np.array([k[0] for k in self._kept])
            ps_v = np.array([k[1] for k in self._kept])
        return PredictionResult(mean, tot[2] / T + between, tot[3] / T + between, ps_m, ps_v, missing)


def aggregate(per_sample_means, per_sample_vars, per_sample_conf=None) -> PredictionResult:
    """Pool ``T x n_p`` per-draw moments: mean of variances plus variance of means (``T - 1`` denominator)."""
    M = np.atleast_2d(np.asarray(per_sample_means, dtype=float))
    V = np.atleast_2d(np.asarray(per_sample_vars, dtype=float))
    C = V if per_sample_conf is None else np.atleast_2d(np.asarray(per_sample_conf, dtype=float))
    if M.shape != V.shape or C.shape != M.shape:
        raise DataError("per-sample arrays must share one shape")
    acc = MomentAccumulator(M.shape[1])
    for t in range(M.shape[0]):
        acc.add(M[t], V[t], C[t])
    return acc.result()


def predict_chain_modes(chain: ChainSamples, X_test, config: PredictConfig = PredictConfig(), modes=None) -> dict:
    """Pooled predictions for several lambda modes from one pass over the draws.

    The latent kriging and (for pointwise layouts) the mean-process factor are
    shared between modes.
    """
    modes = tuple(modes or (config.lambda_mode,))
    for mode in modes:
        if mode not in LAMBDA_MODES:
            raise ConfigError(f"unknown lambda mode {mode!r}")
    ctx = PredictionContext(chain.design, chain.structure(), X_test, config)
    accs = {mode: MomentAccumulator(ctx.n_test, config.keep_per_sample) for mode in modes}
    rngs = {mode: np.random.default_rng([config.seed, i]) for i, mode in enumerate(modes)}
    for sample in chain.kept:
        mu_l, sd_l = predict_latent(sample, ctx, chain.homoskedastic)
        shared = None
        for mode in modes:
            lam = lambda_plugin(mu_l, sd_l, config, rngs[mode], mode)
            if ctx.layout.pointwise:
                if shared is None:
                    shared = _mean_moments(sample, ctx, lam)
                moments = shared
            else:
                moments = None
            accs[mode].add(*predict_mean(sample, lam, ctx, moments))
    return {mode: acc.result() for mode, acc in accs.items()}


def predict_chain(chain: ChainSamples, X_test, config: PredictConfig = PredictConfig()) -> PredictionResult:
    return predict_chain_modes(chain, X_test, config)[config.lambda_mode]


def metrics(result: PredictionResult, test: ReplicatedDesign, level: float = 0.90, runtime_seconds: float | None = None) -> MetricReport:
    """Out-of-sample accuracy against every held-out replicate.

    ``result`` rows must follow the sites of ``test``, which must carry its
    replicates.
    """
    if test.n == 0 or len(result) == 0:
        raise DataError("empty test set")
    if len(result) != test.n:
        raise DataError(f"{len(result)} predictions for {test.n} test sites")
    if not test.has_replicates:
        raise DataError("test design carries no replicate outputs")
    rows = np.repeat(np.arange(test.n), test.multiplicities)
    y = np.concatenate([test.site_outputs(i) for i in range(test.n)])
    mu = result.mean[rows]
    vp = result.variance_predictive[rows]
    if np.any(~(vp > 0)):
        raise DataError("predictive variances must be positive to score")
    z = float(norm.ppf(0.5 + level / 2))
    resid = y - mu
    return MetricReport(
        rmse=float(np.sqrt(np.mean(resid**2))),
        rmse_site_mean=float(np.sqrt(np.mean((test.means - result.mean) ** 2))),
        score=float(np.mean(-(resid**2) / vp - np.log(vp))),
        coverage=float(np.mean(np.abs(resid) <= z * np.sqrt(vp))),
        pi_width=float(np.mean(2 * z * result.sd_predictive)),
        ci_width=float(np.mean(2 * z * result.sd_confidence)),
        runtime_seconds=runtime_seconds,
        n_sites=int(test.n),
        n_replicates=int(y.size),
    )
