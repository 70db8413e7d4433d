"""Marginal log likelihoods with the scale integrated out.

Every likelihood here drops only the ``2 pi`` constant and uses the
``-(N + alpha)/2 log tau2_hat`` convention, so dense, Woodbury and Vecchia
versions are directly comparable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ReplicatedDesign
from .exceptions import ConfigError, DataError
from .kernel import chol_logdet, forward_solve, kernel_matrix, safe_cholesky
from .vecchia import SparseUpper, quad_form

__all__ = [
    "ScalePrior",
    "LatentState",
    "replicate_penalty",
    "woodbury_loglik",
    "vecchia_woodbury_loglik",
    "latent_loglik",
]


@dataclass(frozen=True)
class ScalePrior:
    """``tau^2 ~ IG(alpha/2, beta/2)``; ``(0, 0)`` is the reference prior."""

    alpha: float = 10.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("scale prior parameters must be non-negative")


@dataclass(frozen=True)
class LatentState:
    """Log latent variances ``log lambda_i``, one per unique site."""

    log_lambda: np.ndarray

    def __post_init__(self):
        ll = np.asarray(self.log_lambda, dtype=float).ravel()
        if not np.isfinite(ll).all():
            raise DataError("latent log variances must be finite")
        object.__setattr__(self, "log_lambda", ll)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    def __len__(self):
        return self.log_lambda.shape[0]


def _log_lambda(latent) -> np.ndarray:
    if isinstance(latent, LatentState):
        return latent.log_lambda
    return np.asarray(latent, dtype=float)


def replicate_penalty(a: np.ndarray, log_lam: np.ndarray) -> float:
    """``-1/2 sum_i [(a_i - 1) log lambda_i + log a_i]``."""
    return -0.5 * float(np.sum((a - 1) * log_lam + np.log(a)))


def _residual_ss(design: ReplicatedDesign, lam: np.ndarray) -> float:
    """``sum_i a_i s_i^2 / lambda_i``, the within-site part of ``Y^T Lambda_N^{-1} Y``."""
    return float(np.sum(design.multiplicities * design.sos / lam))


def woodbury_loglik(design: ReplicatedDesign, theta_y, latent, prior_y: ScalePrior = ScalePrior()) -> tuple[float, float]:
    """Unique-n (Woodbury) log likelihood, dense in ``n``.

    ``logL = -(N+alpha)/2 log tau2 - 1/2 log|Upsilon| - 1/2 sum[(a_i-1) log lambda_i + log a_i]``
    with ``Upsilon = K(X_n) + A^{-1} Lambda_n`` and
    ``tau2 = (sum a_i s_i^2/lambda_i + ybar^T Upsilon^{-1} ybar + beta) / (N + alpha)``.
    """
    ll = _log_lambda(latent)
    if ll.shape != (design.n,):
        raise DataError("latent vector must have one entry per unique site")
    lam = np.exp(ll)
    a = design.multiplicities
    N = design.total_n
    U = kernel_matrix(design.unique_inputs, None, theta_y)
    U[np.diag_indices(design.n)] += lam / a
    L = safe_cholesky(U)
    w = forward_solve(L, design.means)
    tau2 = (_residual_ss(design, lam) + w @ w + prior_y.beta) / (N + prior_y.alpha)
    logL = -0.5 * (N + prior_y.alpha) * np.log(tau2) - 0.5 * chol_logdet(L) + replicate_penalty(a, ll)
    return float(logL), float(tau2)


def vecchia_woodbury_loglik(design: ReplicatedDesign, theta_y, latent, prior_y: ScalePrior, U_n: SparseUpper) -> tuple[float, float]:
    """Woodbury log likelihood with ``Upsilon^{-1}`` replaced by ``U_n U_n^T``.

    ``theta_y`` is not used directly: ``U_n`` must already be built from it and
    the current latents.  It is accepted so call sites mirror the dense version.
    """
    ll = _log_lambda(latent)
    if ll.shape != (design.n,) or U_n.n != design.n:
        raise DataError("latent vector and factor must match the number of unique sites")
    lam = np.exp(ll)
    a = design.multiplicities
    N = design.total_n
    tau2 = (_residual_ss(design, lam) + quad_form(U_n, design.means) + prior_y.beta) / (N + prior_y.alpha)
    logL = U_n.log_diag_sum() - 0.5 * (N + prior_y.alpha) * np.log(tau2) + replicate_penalty(a, ll)
    return float(logL), float(tau2)


def latent_loglik(latent, X_n, theta_lambda, g_lambda: float, prior_lambda: ScalePrior = ScalePrior(), U_lambda: SparseUpper | None = None) -> tuple[float, float]:
    """Log likelihood of the latent log variances under their GP prior.

    Dense when ``U_lambda`` is ``None``, otherwise Vecchia with ``U_lambda``
    approximating ``(K_lambda(X_n) + g I)^{-1}``.
    """
    ll = _log_lambda(latent)
    n = ll.shape[0]
    if U_lambda is None:
        S = kernel_matrix(X_n, None, theta_lambda)
        S[np.diag_indices(n)] += g_lambda
        L = safe_cholesky(S)
        w = forward_solve(L, ll)
        q = float(w @ w)
        half_logdet = -0.5 * chol_logdet(L)
    else:
        if U_lambda.n != n:
            raise DataError("factor size does not match the latent vector")
        q = quad_form(U_lambda, ll)
        half_logdet = U_lambda.log_diag_sum()
    tau2 = (q + prior_lambda.beta) / (n + prior_lambda.alpha)
    return float(half_logdet - 0.5 * (n + prior_lambda.alpha) * np.log(tau2)), float(tau2)
