"""Exact dense-matrix GP computations.

These are O(n^3) reference implementations.  They check the Woodbury and
Vecchia paths and serve small fits; matrices larger than ``DENSE_MAX_N`` are
refused.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ReplicatedDesign
from .exceptions import ConfigError, DataError
from .kernel import chol_logdet, chol_solve, forward_solve, kernel_matrix, safe_cholesky
from .likelihood import ScalePrior, LatentState

__all__ = ["DENSE_MAX_N", "DenseFit", "loglik_full_N", "kriging_predict_dense", "check_dense_size"]

DENSE_MAX_N = 4000


def check_dense_size(size: int, what: str = "dense path") -> None:
    if size > DENSE_MAX_N:
        raise ConfigError(f"{what} refuses a {size} x {size} matrix (cap is {DENSE_MAX_N}); use the Vecchia path")


def loglik_full_N(Y, X, lam_N, theta_y, prior: ScalePrior = ScalePrior()) -> tuple[float, float]:
    """Full-N marginal log likelihood with the scale integrated out.

    Returns ``(logL, tau2_hat)`` with
    ``logL = -(N + alpha)/2 log tau2_hat - 1/2 log|K + Lambda_N|`` and
    ``tau2_hat = (Y^T (K + Lambda_N)^{-1} Y + beta) / (N + alpha)``.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    lam_N = np.broadcast_to(np.asarray(lam_N, dtype=float), Y.shape)
    if np.any(~(lam_N > 0)):
        raise DataError("Lambda_N entries must be positive")
    N = Y.shape[0]
    check_dense_size(N, "full-N likelihood")
    C = kernel_matrix(X, X, theta_y)
    C[np.diag_indices(N)] += lam_N
    L = safe_cholesky(C)
    w = forward_solve(L, Y)
    tau2 = (w @ w + prior.beta) / (N + prior.alpha)
    return -0.5 * (N + prior.alpha) * np.log(tau2) - 0.5 * chol_logdet(L), float(tau2)


def kriging_predict_dense(
    design: ReplicatedDesign, theta_y, lam_n, tau2: float, X_test, lam_test=None, values=None
) -> tuple[np.ndarray, np.ndarray]:
    """Unique-n kriging equations.

    ``mu = k(X, X_n) Upsilon^{-1} ybar`` and
    ``Sigma = tau2 (K(X, X) + diag(lam_test) - k(X, X_n) Upsilon^{-1} k(X_n, X))``
    with ``Upsilon = K(X_n) + A^{-1} Lambda_n``.  ``values`` replaces ``ybar``
    (used for kriging the latent log variances).  ``lam_test=None`` drops the
    noise term, giving the mean-only (confidence) covariance.
    """
    Xn = design.unique_inputs
    check_dense_size(design.n)
    Xt = np.asarray(X_test, dtype=float)
    if Xt.ndim == 1:
        Xt = Xt[:, None]
    lam_n = np.broadcast_to(np.asarray(lam_n, dtype=float), (design.n,))
    U = kernel_matrix(Xn, Xn, theta_y)
    U[np.diag_indices(design.n)] += lam_n / design.multiplicities
    L = safe_cholesky(U)
    kx = kernel_matrix(Xn, Xt, theta_y)
    y = design.means if values is None else np.asarray(values, dtype=float)
    mu = kx.T @ chol_solve(L, y)
    W = forward_solve(L, kx)
    Sigma = kernel_matrix(Xt, Xt, theta_y) - W.T @ W
    if lam_test is not None:
        Sigma[np.diag_indices(Xt.shape[0])] += np.broadcast_to(np.asarray(lam_test, float), (Xt.shape[0],))
    Sigma = tau2 * 0.5 * (Sigma + Sigma.T)
    return mu, Sigma


@dataclass
class DenseFit:
    """A fitted unique-n GP held in dense form (small n only)."""

    design: ReplicatedDesign
    theta_y: np.ndarray
    latents: LatentState
    tau2_hat: float

    def __post_init__(self):
        if self.latents.log_lambda.shape[0] != self.design.n:
            raise DataError("latents must have one entry per unique site")

    def predict(self, X_test, lam_test=None):
        return kriging_predict_dense(
            self.design, self.theta_y, np.exp(self.latents.log_lambda), self.tau2_hat, X_test, lam_test
        )
