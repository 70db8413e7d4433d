"""Covariance kernels and dense linear-algebra helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, DataError, NumericalError

__all__ = [
    "JITTER",
    "KernelParams",
    "SquaredExponential",
    "kernel_value",
    "kernel_matrix",
    "safe_cholesky",
    "chol_logdet",
]

#: Added to the diagonal of a kernel matrix that fails to factorize.
JITTER = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Lengthscales ``theta`` (one per input), scale ``tau2`` and nugget ``g``."""

    lengthscales: np.ndarray
    scale: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if theta.ndim != 1 or np.any(~(theta > 0)):
            raise ConfigError("lengthscales must be a vector of positive reals")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")
        if not self.nugget >= 0:
            raise ConfigError("nugget must be non-negative")
        object.__setattr__(self, "lengthscales", theta)


class SquaredExponential:
    """``k(x, z) = exp(-sum_k (x_k - z_k)^2 / theta_k)``.

    Calls broadcast over leading axes: ``A`` of shape ``(..., p, d)`` and ``B`` of
    shape ``(..., q, d)`` give ``(..., p, q)``.
    """

    name = "sqexp"

    @staticmethod
    def from_sqdist(r2):
        """Kernel value from the lengthscale-weighted squared distance."""
        return np.exp(-r2)

    def __call__(self, A, B, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        D = (((A[..., :, None, :] - B[..., None, :, :]) ** 2) / theta).sum(axis=-1)
        return self.from_sqdist(D)

    def diag(self, A, theta) -> np.ndarray:
        A = np.asarray(A)
        return np.ones(A.shape[:-1])


sqexp = SquaredExponential()


def _check_theta(theta, d: int) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape == (1,) and d > 1:
        theta = np.repeat(theta, d)
    if theta.shape != (d,):
        raise DataError(f"expected {d} lengthscales, got {theta.shape[0]}")
    if np.any(~(theta > 0)):
        raise ConfigError("lengthscales must be positive")
    return theta


def kernel_value(x, z, theta) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if x.shape != z.shape:
        raise DataError("points differ in dimension")
    theta = _check_theta(theta, x.shape[0])
    return float(np.exp(-np.sum((x - z) ** 2 / theta)))


def kernel_matrix(A, B=None, theta=1.0, kernel=sqexp) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` (``p x d``) and ``B`` (``q x d``)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    B = A if B is None else np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} columns")
    theta = _check_theta(theta, A.shape[1])
    return kernel(A, B, theta)


def safe_cholesky(S: np.ndarray, jitter: float = JITTER, retries: int = 2) -> np.ndarray:
    """Lower Cholesky factor, retrying with ``jitter``, then ``10 * jitter``, on the diagonal."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(S.shape[-1])
    eps = jitter
    for _ in range(retries):
        try:
            return np.linalg.cholesky(S + eps * eye)
        except np.linalg.LinAlgError:
            eps *= 10
    raise NumericalError(f"matrix of size {S.shape[-1]} is not positive definite even with jitter {eps / 10:g}")


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)


def forward_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.solve_triangular(L, b, lower=True, check_finite=False)
