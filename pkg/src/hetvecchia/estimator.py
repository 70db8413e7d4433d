"""scikit-learn style front end."""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import RawCampaign, ReplicatedDesign, Scaling, build_replicated_design, fit_scaling
from .exceptions import DataError, InputIOError
from .likelihood import ScalePrior
from .mcmc import ChainSamples, McmcConfig, PriorConfig, chain_from_dict, chain_to_dict, gibbs_fit
from .predict import PredictConfig, PredictionResult, metrics, predict_chain, predict_chain_modes

__all__ = ["HetGPRegressor"]


class HetGPRegressor(RegressorMixin, BaseEstimator):
    """Fully Bayesian heteroskedastic GP regression with Vecchia approximations.

    Replicated inputs are collapsed to per-site means and variances before
    fitting, so cost grows with the number of unique inputs rather than runs.
    Inputs are min-max scaled and outputs standardized internally;
    predictions are returned in the original units.

    Parameters mirror :class:`~hetvecchia.mcmc.McmcConfig`,
    :class:`~hetvecchia.mcmc.PriorConfig` and
    :class:`~hetvecchia.predict.PredictConfig`.  Set ``homoskedastic=True``
    for a constant-noise baseline.
    """

    def __init__(
        self,
        total_iters: int = 1000,
        burn_in: int = 500,
        thin: int = 10,
        m: int = 25,
        m_predict: int = 200,
        lambda_mode: str = "upper-quantile",
        quantile_z: float = 1.6448536269514722,
        interval_level: float = 0.90,
        pointwise: bool = True,
        constrain_theta: bool = True,
        init: str = "smoothed-residual",
        homoskedastic: bool = False,
        g_lambda: float | str = 1e-6,
        scale_prior: tuple[float, float] = (10.0, 4.0),
        scale_inputs: bool = True,
        scale_outputs: bool = True,
        dedup_tol: float = 0.0,
        random_state: int = 0,
    ):
        self.total_iters = total_iters
        self.burn_in = burn_in
        self.thin = thin
        self.m = m
        self.m_predict = m_predict
        self.lambda_mode = lambda_mode
        self.quantile_z = quantile_z
        self.interval_level = interval_level
        self.pointwise = pointwise
        self.constrain_theta = constrain_theta
        self.init = init
        self.homoskedastic = homoskedastic
        self.g_lambda = g_lambda
        self.scale_prior = scale_prior
        self.scale_inputs = scale_inputs
        self.scale_outputs = scale_outputs
        self.dedup_tol = dedup_tol
        self.random_state = random_state

    # configs -------------------------------------------------------------

    def mcmc_config(self) -> McmcConfig:
        return McmcConfig(
            total_iters=self.total_iters,
            burn_in=self.burn_in,
            thin=self.thin,
            seed=int(self.random_state),
            m=self.m,
            constrain_theta=self.constrain_theta,
            init=self.init,
            homoskedastic=self.homoskedastic,
        )

    def prior_config(self) -> PriorConfig:
        a, b = self.scale_prior
        sp = ScalePrior(float(a), float(b))
        return PriorConfig(scale_prior_y=sp, scale_prior_lambda=sp, g_lambda=self.g_lambda)

    def predict_config(self, **overrides) -> PredictConfig:
        kw = dict(
            m_predict=self.m_predict,
            lambda_mode=self.lambda_mode,
            quantile_z=self.quantile_z,
            pointwise=self.pointwise,
            interval_level=self.interval_level,
            seed=int(self.random_state),
        )
        kw.update(overrides)
        return PredictConfig(**kw)

    # fitting -------------------------------------------------------------

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        design = build_replicated_design(RawCampaign(X, y), self.dedup_tol)
        return self.fit_design(design)

    def fit_design(self, design: ReplicatedDesign):
        """Fit from replicate sufficient statistics."""
        mcmc = self.mcmc_config()
        prior = self.prior_config()
        scaling = fit_scaling(design, self.scale_inputs, self.scale_outputs)
        self.design_ = design
        self.scaling_ = scaling
        self.chain_ = gibbs_fit(design.transform(scaling), mcmc, prior)
        self.n_features_in_ = design.d
        return self

    # prediction ----------------------------------------------------------

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "chain_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return X

    def predict_dist(self, X, **overrides) -> PredictionResult:
        """Pooled predictive moments in original units."""
        X = self._check_X(X)
        res = predict_chain(self.chain_, self.scaling_.transform_X(X), self.predict_config(**overrides))
        return res.inverse_transform(self.scaling_)

    def predict_modes(self, X, modes=("upper-quantile", "mean"), **overrides) -> dict[str, PredictionResult]:
        X = self._check_X(X)
        out = predict_chain_modes(self.chain_, self.scaling_.transform_X(X), self.predict_config(**overrides), modes)
        return {k: v.inverse_transform(self.scaling_) for k, v in out.items()}

    def predict(self, X, return_std: bool = False):
        res = self.predict_dist(X)
        if return_std:
            return res.mean, res.sd_predictive
        return res.mean

    def proper_score(self, X, y) -> float:
        """Mean of ``-(y - mu)^2 / s^2 - log s^2`` over the given runs."""
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        test = build_replicated_design(RawCampaign(X, y), self.dedup_tol)
        return self.evaluate(test).score

    def evaluate(self, test: ReplicatedDesign, **overrides):
        """:class:`~hetvecchia.predict.MetricReport` on a held-out design with replicates."""
        res = self.predict_dist(test.unique_inputs, **overrides)
        return metrics(res, test, self.interval_level)

    # persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "chain_")
        doc = chain_to_dict(self.chain_)
        doc["meta"] = {"scaling": self.scaling_.to_dict(), "params": _plain(self.get_params())}
        return doc

    def save(self, path) -> None:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError as exc:
            raise InputIOError(f"cannot write checkpoint {path}: {exc}") from exc

    @classmethod
    def from_dict(cls, doc: dict) -> "HetGPRegressor":
        chain: ChainSamples = chain_from_dict(doc)
        meta = doc.get("meta") or {}
        params = dict(meta.get("params") or {})
        if "scale_prior" in params:
            params["scale_prior"] = tuple(params["scale_prior"])
        est = cls(**params)
        scaling = Scaling.from_dict(meta["scaling"]) if "scaling" in meta else Scaling.identity(chain.design.d)
        est.chain_ = chain
        est.scaling_ = scaling
        est.n_features_in_ = chain.design.d
        return est

    @classmethod
    def load(cls, path) -> "HetGPRegressor":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise InputIOError(f"cannot read checkpoint {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def _plain(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out
