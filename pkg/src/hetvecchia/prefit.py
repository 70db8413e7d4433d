"""Homoskedastic Vecchia GP fits used to initialize the sampler.

A fit maximizes the Vecchia-Woodbury likelihood over ``log theta`` and the
log of a constant noise ratio ``g`` with scipy's L-BFGS-B.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .data import ReplicatedDesign
from .exceptions import DataError, NumericalError
from .likelihood import ScalePrior, vecchia_woodbury_loglik
from .vecchia import GPCovariance, VecchiaStructure, build_U, build_stacked_U, factor_geometry, predict_from_stacked

__all__ = ["HomoskedasticFit", "fit_homoskedastic", "smooth_at_sites"]

_LOG_BOUNDS = (np.log(1e-4), np.log(1e3))


@dataclass(frozen=True)
class HomoskedasticFit:
    theta: np.ndarray
    g: float
    tau2: float
    loglik: float


def fit_homoskedastic(
    design: ReplicatedDesign,
    structure: VecchiaStructure,
    prior: ScalePrior = ScalePrior(),
    theta0=None,
    g0: float = 0.1,
) -> HomoskedasticFit:
    """Maximum-likelihood ``(theta, g)`` with ``lambda_i = g`` at every site."""
    X = design.unique_inputs
    d = design.d
    cache = factor_geometry(structure, X)
    a = design.multiplicities

    def negll(p):
        theta, g = np.exp(p[:d]), float(np.exp(p[d]))
        try:
            U = build_U(structure, GPCovariance(X, theta, g / a), cache)
            ll, _ = vecchia_woodbury_loglik(design, theta, np.full(design.n, np.log(g)), prior, U)
        except NumericalError:
            return 1e300
        return -ll if np.isfinite(ll) else 1e300

    if theta0 is None:
        theta0 = np.full(d, 0.1)
    x0 = np.concatenate([np.log(np.broadcast_to(theta0, (d,))), [np.log(g0)]])
    x0 = np.clip(x0, *_LOG_BOUNDS)
    res = scipy.optimize.minimize(negll, x0, method="L-BFGS-B", bounds=[_LOG_BOUNDS] * (d + 1))
    theta, g = np.exp(res.x[:d]), float(np.exp(res.x[d]))
    U = build_U(structure, GPCovariance(X, theta, g / a), cache)
    ll, tau2 = vecchia_woodbury_loglik(design, theta, np.full(design.n, np.log(g)), prior, U)
    return HomoskedasticFit(theta, g, tau2, ll)


def smooth_at_sites(design: ReplicatedDesign, structure: VecchiaStructure, fit: HomoskedasticFit, m_predict: int = 50) -> np.ndarray:
    """Kriging mean of the site means, evaluated back at the training sites."""
    X = design.unique_inputs
    if X.shape[0] < 1:
        raise DataError("empty design")
    noise = np.concatenate([fit.g / design.multiplicities, np.zeros(design.n)])
    prov = GPCovariance(np.vstack([X, X]), fit.theta, noise)
    blocks = build_stacked_U(structure, X, min(m_predict, design.n), prov, pointwise=True, seed=0, with_train=False)
    mu, _ = predict_from_stacked(blocks, design.means)
    return mu
