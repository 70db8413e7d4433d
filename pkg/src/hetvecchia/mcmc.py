"""Posterior sampling for the heteroskedastic GP.

Each Gibbs sweep updates, for every input coordinate, the latent-process
lengthscale and then the mean-process lengthscale by sliding-window
Metropolis-Hastings, followed by one elliptical slice sampling (ESS) update of
the log latent variances.  Scales are integrated out; their plug-in estimates
``tau2_N`` and ``tau2_lambda`` are recorded with every retained draw.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.special
import scipy.stats

from .data import ReplicatedDesign
from .exceptions import ConfigError, DataError, InputIOError, NumericalError
from .likelihood import LatentState, ScalePrior, latent_loglik, vecchia_woodbury_loglik
from .prefit import fit_homoskedastic, smooth_at_sites
from .vecchia import (
    GPCovariance,
    SparseUpper,
    VecchiaStructure,
    build_U,
    build_structure,
    factor_geometry,
    sparse_solve_transpose,
)

__all__ = [
    "McmcConfig",
    "PriorConfig",
    "HyperState",
    "ChainSamples",
    "ESSResult",
    "MHResult",
    "theta_rate",
    "ess_update",
    "mh_lengthscale_update",
    "initialize",
    "gibbs_fit",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "hetvecchia-chain/1"


@dataclass(frozen=True)
class McmcConfig:
    total_iters: int = 1000
    burn_in: int = 500
    thin: int = 10
    seed: int = 0
    m: int = 25
    constrain_theta: bool = True
    init: str = "smoothed-residual"
    homoskedastic: bool = False
    max_shrinks: int = 200

    def __post_init__(self):
        if self.total_iters < 1 or self.burn_in < 0 or self.thin < 1:
            raise ConfigError("total_iters >= 1, burn_in >= 0 and thin >= 1 are required")
        if self.burn_in >= self.total_iters:
            raise ConfigError(f"burn_in ({self.burn_in}) must be below total_iters ({self.total_iters})")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.init not in ("smoothed-residual", "constant-fraction"):
            raise ConfigError(f"unknown init strategy {self.init!r}")
        if self.retained == 0:
            raise ConfigError("no iterations are retained after burn-in and thinning (empty chain)")

    @property
    def retained(self) -> int:
        return (self.total_iters - self.burn_in) // self.thin

    def keeps(self, t: int) -> bool:
        """Whether 1-based iteration ``t`` is retained."""
        return t > self.burn_in and (t - self.burn_in) % self.thin == 0


@dataclass(frozen=True)
class PriorConfig:
    """Gamma priors on lengthscales (and nuggets) plus inverse-gamma scale priors.

    Rates left as ``None`` are set from the data by :meth:`resolve`.
    ``g_lambda="estimate"`` samples the latent nugget under
    ``Gamma(g_shape, g_rate)``; the same prior governs the constant noise ratio
    of a homoskedastic fit.
    """

    theta_shape: float = 1.5
    theta_rate_y: float | None = None
    theta_rate_lambda: float | None = None
    scale_prior_y: ScalePrior = ScalePrior()
    scale_prior_lambda: ScalePrior = ScalePrior()
    g_lambda: float | str = 1e-6
    g_shape: float = 1.5
    g_rate: float = 3.9

    def __post_init__(self):
        if not self.theta_shape > 0 or not self.g_shape > 0 or not self.g_rate > 0:
            raise ConfigError("Gamma shapes and rates must be positive")
        for r in (self.theta_rate_y, self.theta_rate_lambda):
            if r is not None and not r > 0:
                raise ConfigError("lengthscale rates must be positive")
        if isinstance(self.g_lambda, str):
            if self.g_lambda != "estimate":
                raise ConfigError("g_lambda must be a positive number or 'estimate'")
        elif not self.g_lambda > 0:
            raise ConfigError("g_lambda must be positive")

    @property
    def estimate_g(self) -> bool:
        return self.g_lambda == "estimate"

    def resolve(self, X) -> "PriorConfig":
        rate = theta_rate(X, self.theta_shape)
        return replace(
            self,
            theta_rate_y=self.theta_rate_y or rate,
            theta_rate_lambda=self.theta_rate_lambda or rate,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scale_prior_y"] = asdict(self.scale_prior_y)
        out["scale_prior_lambda"] = asdict(self.scale_prior_lambda)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        d = dict(d)
        d["scale_prior_y"] = ScalePrior(**d.get("scale_prior_y", {}))
        d["scale_prior_lambda"] = ScalePrior(**d.get("scale_prior_lambda", {}))
        return cls(**d)


def theta_rate(X, shape: float = 1.5) -> float:
    """Gamma rate placing the prior mode at 10% of the largest squared distance.

    For ``shape <= 1`` (no interior mode) the prior mean is placed there instead.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    span = X.max(axis=0) - X.min(axis=0)
    dmax2 = float(np.sum(span**2))
    if not dmax2 > 0:
        dmax2 = float(X.shape[1])
    target = 0.1 * dmax2
    return (shape - 1.0) / target if shape > 1 else shape / target


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if not x > 0:
        return -math.inf
    return (shape - 1.0) * math.log(x) - rate * x


@dataclass(frozen=True)
class HyperState:
    theta_y: np.ndarray
    theta_lambda: np.ndarray
    latent: LatentState
    tau2_N: float
    tau2_lambda: float
    g_lambda: float = 1e-6

    def to_dict(self) -> dict:
        return {
            "theta_y": [float(v) for v in self.theta_y],
            "theta_lambda": [float(v) for v in self.theta_lambda],
            "log_lambda": [float(v) for v in self.latent.log_lambda],
            "tau2_N": float(self.tau2_N),
            "tau2_lambda": float(self.tau2_lambda),
            "g_lambda": float(self.g_lambda),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperState":
        return cls(
            np.asarray(d["theta_y"], dtype=float),
            np.asarray(d["theta_lambda"], dtype=float),
            LatentState(np.asarray(d["log_lambda"], dtype=float)),
            float(d["tau2_N"]),
            float(d["tau2_lambda"]),
            float(d.get("g_lambda", 1e-6)),
        )


@dataclass
class ChainSamples:
    """Retained draws plus everything needed to predict from them."""

    kept: list[HyperState]
    acceptance_stats: dict[str, float]
    ess_iteration_counts: np.ndarray
    design: ReplicatedDesign
    order: np.ndarray
    config: McmcConfig
    prior: PriorConfig
    initial: HyperState | None = None
    final: HyperState | None = None
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.kept) == 0:
            raise DataError("a chain must retain at least one draw")

    @property
    def T(self) -> int:
        return len(self.kept)

    @property
    def homoskedastic(self) -> bool:
        return self.config.homoskedastic

    def structure(self) -> VecchiaStructure:
        return build_structure(self.design.unique_inputs, self.config.m, order=self.order)

    def stacked(self, name: str) -> np.ndarray:
        """Array of one field across retained draws, e.g. ``"tau2_N"`` or ``"log_lambda"``."""
        if name == "log_lambda":
            return np.array([s.latent.log_lambda for s in self.kept])
        return np.array([getattr(s, name) for s in self.kept])


class ESSResult(NamedTuple):
    latent: LatentState
    loglik: float
    aux: object
    shrinks: int


class MHResult(NamedTuple):
    theta: float
    accepted: bool
    logpost: float
    aux: object


def _call(fn, x):
    out = fn(x)
    val, aux = out if isinstance(out, tuple) else (out, None)
    val = float(val)
    return (-math.inf if math.isnan(val) else val), aux


def ess_update(
    latent: LatentState,
    loglik_fn: Callable,
    prior_draw_fn: Callable,
    rng: np.random.Generator,
    current_loglik: float | None = None,
    max_shrinks: int = 200,
) -> ESSResult:
    """One elliptical slice sampling step for a zero-mean Gaussian prior.

    ``loglik_fn(x)`` returns the log likelihood or ``(loglik, aux)``; NaN counts
    as ``-inf``.  ``prior_draw_fn(rng)`` returns a prior draw.  The bracket
    shrinks towards the current state, which always satisfies the slice, so the
    loop ends; ``max_shrinks`` only guards against a pathological likelihood by
    returning the current state.
    """
    x = latent.log_lambda if isinstance(latent, LatentState) else np.asarray(latent, dtype=float)
    aux0 = None
    if current_loglik is None:
        current_loglik, aux0 = _call(loglik_fn, x)
    nu = np.asarray(prior_draw_fn(rng), dtype=float)
    log_y = current_loglik + math.log(rng.uniform())
    gamma = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = gamma - 2.0 * math.pi, gamma
    for shrinks in range(max_shrinks + 1):
        prop = x * math.cos(gamma) + nu * math.sin(gamma)
        ll, aux = _call(loglik_fn, prop)
        if ll > log_y:
            return ESSResult(LatentState(prop), ll, aux, shrinks)
        if gamma < 0:
            lo = gamma
        else:
            hi = gamma
        gamma = rng.uniform(lo, hi)
    return ESSResult(LatentState(x), current_loglik, aux0, max_shrinks)


def mh_lengthscale_update(
    theta: float,
    logpost_fn: Callable,
    rng: np.random.Generator,
    current_logpost: float | None = None,
) -> MHResult:
    """Sliding-window proposal ``theta* ~ U(theta/2, 2 theta)`` with its ``theta/theta*`` correction.

    ``logpost_fn`` returns the log posterior (up to a constant) or
    ``(logpost, aux)``; ``-inf`` (prior zero, failed factorization) always rejects.
    """
    if not theta > 0:
        raise ConfigError("lengthscale must be positive")
    aux0 = None
    if current_logpost is None:
        current_logpost, aux0 = _call(logpost_fn, theta)
    prop = rng.uniform(theta / 2.0, 2.0 * theta)
    lp, aux = _call(logpost_fn, prop)
    log_u = math.log(rng.uniform())
    if lp > -math.inf and log_u < lp - current_logpost + math.log(theta / prop):
        return MHResult(prop, True, lp, aux)
    return MHResult(theta, False, current_logpost, aux0)


# --- likelihood plumbing ------------------------------------------------------


class _Eval(NamedTuple):
    loglik: float
    tau2: float
    U: SparseUpper | None


_FAILED = _Eval(-math.inf, math.nan, None)


class _Model:
    """Factor construction and likelihoods sharing one ordering and geometry cache."""

    def __init__(self, design: ReplicatedDesign, structure: VecchiaStructure, prior: PriorConfig):
        self.design = design
        self.structure = structure
        self.prior = prior
        self.X = design.unique_inputs
        self.cache = factor_geometry(structure, self.X)

    def data(self, theta_y, log_lam) -> _Eval:
        try:
            lam = np.exp(log_lam)
            if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
                return _FAILED
            U = build_U(self.structure, GPCovariance(self.X, theta_y, lam / self.design.multiplicities), self.cache)
            ll, tau2 = vecchia_woodbury_loglik(self.design, theta_y, log_lam, self.prior.scale_prior_y, U)
        except NumericalError:
            return _FAILED
        return _Eval(ll, tau2, U) if np.isfinite(ll) else _FAILED

    def latent_factor(self, theta_lambda, g) -> SparseUpper | None:
        try:
            return build_U(self.structure, GPCovariance(self.X, theta_lambda, g), self.cache)
        except NumericalError:
            return None

    def latent(self, log_lam, U: SparseUpper | None) -> _Eval:
        if U is None:
            return _FAILED
        ll, tau2 = latent_loglik(log_lam, self.X, None, 0.0, self.prior.scale_prior_lambda, U)
        return _Eval(ll, tau2, U) if np.isfinite(ll) else _FAILED


# --- initialization -----------------------------------------------------------


def _weighted_var(design: ReplicatedDesign) -> float:
    a = design.multiplicities
    mu = np.sum(a * design.means) / design.total_n
    return float(np.sum(a * ((design.means - mu) ** 2 + design.sos)) / design.total_n)


def _prior_median(shape: float, rate: float) -> float:
    return float(scipy.stats.gamma.ppf(0.5, shape, scale=1.0 / rate))


def initialize(
    design: ReplicatedDesign,
    strategy: str = "smoothed-residual",
    rng: np.random.Generator | None = None,
    prior: PriorConfig = PriorConfig(),
    structure: VecchiaStructure | None = None,
    m: int = 25,
    homoskedastic: bool = False,
    constrain_theta: bool = True,
) -> HyperState:
    """Starting values for the chain.

    ``constant-fraction`` sets every latent to 10% of the output variance with
    lengthscales at their prior medians.  ``smoothed-residual`` fits a
    homoskedastic GP to the site means, forms ``s~_i^2 = s_i^2 + (ybar_i - yhat_i)^2``,
    smooths ``log s~^2`` with a second homoskedastic GP and rescales by the
    first fit's ``tau2``.  Homoskedastic chains start from a constant latent.
    """
    rng = np.random.default_rng(rng)
    prior = prior.resolve(design.unique_inputs)
    if structure is None:
        structure = build_structure(design.unique_inputs, m, seed=rng)
    var = _weighted_var(design)
    if not var > 0:
        raise DataError("outputs have zero variance; add jitter to the outputs before fitting")
    g = 1e-6 if prior.estimate_g else float(prior.g_lambda)
    if strategy == "constant-fraction":
        theta_y = np.full(design.d, _prior_median(prior.theta_shape, prior.theta_rate_y))
        theta_l = np.full(design.d, _prior_median(prior.theta_shape, prior.theta_rate_lambda))
        log_lam = np.full(design.n, math.log(0.1 * var))
    elif strategy == "smoothed-residual":
        fit = fit_homoskedastic(design, structure, prior.scale_prior_y)
        theta_y = fit.theta
        if homoskedastic:
            theta_l = np.full(design.d, _prior_median(prior.theta_shape, prior.theta_rate_lambda))
            log_lam = np.full(design.n, math.log(fit.g))
        else:
            yhat = smooth_at_sites(design, structure, fit)
            a = design.multiplicities
            s2 = design.sos + (design.means - yhat) ** 2
            s2 = np.maximum(s2, 1e-8 * var)
            # a * s2 / sigma^2 is roughly chi-square with a dof; remove the log bias
            z = np.log(s2) - (scipy.special.digamma(a / 2.0) + np.log(2.0 / a))
            zc = z - z.mean()
            resid = ReplicatedDesign(design.unique_inputs, np.ones(design.n, dtype=int), zc, np.zeros(design.n))
            fit2 = fit_homoskedastic(resid, structure, prior.scale_prior_lambda)
            smooth = smooth_at_sites(resid, structure, fit2) + z.mean()
            log_lam = smooth - math.log(fit.tau2)
            theta_l = fit2.theta
    else:
        raise ConfigError(f"unknown init strategy {strategy!r}")
    if homoskedastic:
        log_lam = np.full(design.n, float(np.mean(log_lam)))
    if constrain_theta:
        theta_l = np.maximum(theta_l, 1.5 * theta_y)
    model = _Model(design, structure, prior)
    dat = model.data(theta_y, log_lam)
    lat = model.latent(log_lam, model.latent_factor(theta_l, g))
    if not (np.isfinite(dat.loglik) and np.isfinite(lat.loglik)):
        raise NumericalError("initial state has a non-finite likelihood")
    return HyperState(theta_y, theta_l, LatentState(log_lam), dat.tau2, lat.tau2, g)


# --- the sampler ---------------------------------------------------------------


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    s_struct, s_init, s_chain = ss.spawn(3)
    return np.random.default_rng(s_struct), np.random.default_rng(s_init), np.random.default_rng(s_chain)


def gibbs_fit(
    design: ReplicatedDesign,
    config: McmcConfig = McmcConfig(),
    prior: PriorConfig = PriorConfig(),
    init: HyperState | None = None,
    rng: np.random.Generator | None = None,
    callback: Callable | None = None,
) -> ChainSamples:
    """Run the Metropolis- and ESS-within-Gibbs sampler.

    Randomness comes from ``config.seed`` (split into independent streams for
    the ordering, the initialization and the chain) unless ``rng`` is given, in
    which case it drives the chain only.  ``callback(t, state)`` is called after
    every iteration.
    """
    if design.n < 1:
        raise DataError("empty design")
    if config.homoskedastic and prior.estimate_g:
        raise ConfigError("g_lambda estimation has no meaning for a homoskedastic fit")
    prior = prior.resolve(design.unique_inputs)
    r_struct, r_init, r_chain = _streams(config.seed)
    if rng is not None:
        r_chain = rng
    structure = build_structure(design.unique_inputs, config.m, seed=r_struct)
    if init is None:
        init = initialize(
            design, config.init, r_init, prior, structure, config.m, config.homoskedastic, config.constrain_theta
        )
    d = design.d
    if init.theta_y.shape != (d,) or init.latent.log_lambda.shape != (design.n,):
        raise DataError("initial state does not match the design")
    model = _Model(design, structure, prior)

    theta_y = init.theta_y.copy()
    theta_l = init.theta_lambda.copy()
    g = float(init.g_lambda)
    ll = init.latent.log_lambda.copy()
    if config.homoskedastic:
        ll = np.full(design.n, float(ll[0]))
    cur_d = model.data(theta_y, ll)
    cur_l = model.latent(ll, model.latent_factor(theta_l, g))
    if not np.isfinite(cur_d.loglik) or (not config.homoskedastic and not np.isfinite(cur_l.loglik)):
        raise NumericalError(f"likelihood not finite at iteration 0; state: {init.to_dict()}")

    shape = prior.theta_shape
    rate_y, rate_l = prior.theta_rate_y, prior.theta_rate_lambda
    accepts: dict[str, list[int]] = {}

    def tally(name, ok):
        c = accepts.setdefault(name, [0, 0])
        c[0] += int(ok)
        c[1] += 1

    kept: list[HyperState] = []
    shrinks = []
    for t in range(1, config.total_iters + 1):
        for j in range(d):
            if not config.homoskedastic:
                def lp_lambda(v, j=j):
                    if config.constrain_theta and not v > theta_y[j]:
                        return -math.inf, None
                    th = theta_l.copy()
                    th[j] = v
                    ev = model.latent(ll, model.latent_factor(th, g))
                    return ev.loglik + _gamma_logpdf(v, shape, rate_l), ev

                res = mh_lengthscale_update(
                    theta_l[j], lp_lambda, r_chain, cur_l.loglik + _gamma_logpdf(theta_l[j], shape, rate_l)
                )
                tally(f"theta_lambda[{j}]", res.accepted)
                if res.accepted:
                    theta_l[j] = res.theta
                    cur_l = res.aux

            def lp_y(v, j=j):
                if config.constrain_theta and not config.homoskedastic and not v < theta_l[j]:
                    return -math.inf, None
                th = theta_y.copy()
                th[j] = v
                ev = model.data(th, ll)
                return ev.loglik + _gamma_logpdf(v, shape, rate_y), ev

            res = mh_lengthscale_update(theta_y[j], lp_y, r_chain, cur_d.loglik + _gamma_logpdf(theta_y[j], shape, rate_y))
            tally(f"theta_y[{j}]", res.accepted)
            if res.accepted:
                theta_y[j] = res.theta
                cur_d = res.aux

        if config.homoskedastic:
            def lp_g(v):
                ev = model.data(theta_y, np.full(design.n, math.log(v)))
                return ev.loglik + _gamma_logpdf(v, prior.g_shape, prior.g_rate), ev

            g_cur = math.exp(ll[0])
            res = mh_lengthscale_update(g_cur, lp_g, r_chain, cur_d.loglik + _gamma_logpdf(g_cur, prior.g_shape, prior.g_rate))
            tally("g", res.accepted)
            if res.accepted:
                ll = np.full(design.n, math.log(res.theta))
                cur_d = res.aux
        else:
            if prior.estimate_g:
                def lp_gl(v):
                    ev = model.latent(ll, model.latent_factor(theta_l, v))
                    return ev.loglik + _gamma_logpdf(v, prior.g_shape, prior.g_rate), ev

                res = mh_lengthscale_update(g, lp_gl, r_chain, cur_l.loglik + _gamma_logpdf(g, prior.g_shape, prior.g_rate))
                tally("g_lambda", res.accepted)
                if res.accepted:
                    g = res.theta
                    cur_l = res.aux

            U_l = cur_l.U
            scale = math.sqrt(cur_l.tau2)

            def draw(r):
                return scale * sparse_solve_transpose(U_l, r.standard_normal(design.n))

            def data_ll(x):
                ev = model.data(theta_y, x)
                return ev.loglik, ev

            es = ess_update(LatentState(ll), data_ll, draw, r_chain, cur_d.loglik, config.max_shrinks)
            shrinks.append(es.shrinks)
            if es.aux is not None:
                ll = es.latent.log_lambda
                cur_d = es.aux
                cur_l = model.latent(ll, U_l)

        state = HyperState(
            theta_y.copy(), theta_l.copy(), LatentState(ll.copy()), cur_d.tau2,
            0.0 if config.homoskedastic else cur_l.tau2, g,
        )
        if config.keeps(t):
            kept.append(state)
        if callback is not None:
            callback(t, state)

    rates = {k: v[0] / v[1] for k, v in accepts.items()}
    return ChainSamples(
        kept=kept,
        acceptance_stats=rates,
        ess_iteration_counts=np.asarray(shrinks, dtype=np.int64),
        design=design,
        order=structure.order,
        config=config,
        prior=prior,
        initial=init,
        final=state,
        rng_state=r_chain.bit_generator.state,
    )


# --- checkpoints ----------------------------------------------------------------


def _design_dict(design: ReplicatedDesign) -> dict:
    return {
        "unique_inputs": design.unique_inputs.tolist(),
        "multiplicities": design.multiplicities.tolist(),
        "means": design.means.tolist(),
        "sos": design.sos.tolist(),
    }


def _design_from(d: dict) -> ReplicatedDesign:
    return ReplicatedDesign(
        np.asarray(d["unique_inputs"], dtype=float),
        np.asarray(d["multiplicities"], dtype=np.int64),
        np.asarray(d["means"], dtype=float),
        np.asarray(d["sos"], dtype=float),
    )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def chain_to_dict(chain: ChainSamples) -> dict:
    return _jsonable({
        "format": CHECKPOINT_FORMAT,
        "config": asdict(chain.config),
        "prior": chain.prior.to_dict(),
        "design": _design_dict(chain.design),
        "order": chain.order,
        "kept": [s.to_dict() for s in chain.kept],
        "acceptance_stats": dict(sorted(chain.acceptance_stats.items())),
        "ess_iteration_counts": chain.ess_iteration_counts,
        "initial": chain.initial.to_dict() if chain.initial else None,
        "final": chain.final.to_dict() if chain.final else None,
        "rng_state": chain.rng_state,
        "meta": chain.meta,
    })


def chain_from_dict(d: dict) -> ChainSamples:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a chain checkpoint (format {d.get('format')!r})")
    return ChainSamples(
        kept=[HyperState.from_dict(s) for s in d["kept"]],
        acceptance_stats=dict(d["acceptance_stats"]),
        ess_iteration_counts=np.asarray(d["ess_iteration_counts"], dtype=np.int64),
        design=_design_from(d["design"]),
        order=np.asarray(d["order"], dtype=np.int64),
        config=McmcConfig(**d["config"]),
        prior=PriorConfig.from_dict(d["prior"]),
        initial=HyperState.from_dict(d["initial"]) if d.get("initial") else None,
        final=HyperState.from_dict(d["final"]) if d.get("final") else None,
        rng_state=d.get("rng_state"),
        meta=d.get("meta", {}),
    )


def save_checkpoint(chain: ChainSamples, path) -> None:
    """Write the chain as JSON.  Floats are written in shortest round-trip form, so
    identical chains give byte-identical files."""
    text = json.dumps(chain_to_dict(chain), sort_keys=True, separators=(",", ":"))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
    except OSError as exc:
        raise InputIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> ChainSamples:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise InputIOError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return chain_from_dict(d)
