"""Compiled per-column factor construction for the squared-exponential kernel.

Each column solves one small conditioning problem in a scratch buffer:
kernel block over (neighbours, target), Cholesky, one triangular solve.
Columns are independent, so results do not depend on the order they run in.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# Reassociation lets the inner dot products vectorize; NaN/inf semantics stay
# strict so a failed pivot is still detected.
_FM = {"reassoc", "contract"}


@njit(cache=True)
def sqdist_blocks(X, targets, nbr, counts, inv_theta, out):
    """Scaled squared distances over (neighbours, target) per column.

    Fills the strict lower triangle of ``out[q, :k+1, :k+1]`` (``k = counts[q]``,
    target last); other entries are left untouched.  The caller applies
    ``exp(-r2)`` to the whole array in one vectorized pass.
    """
    b = targets.shape[0]
    d = X.shape[1]
    for q in range(b):
        k = counts[q]
        for i in range(k + 1):
            xi = targets[q] if i == k else nbr[q, i]
            for j in range(i):
                xj = nbr[q, j]
                r2 = 0.0
                for c in range(d):
                    diff = X[xi, c] - X[xj, c]
                    r2 += diff * diff * inv_theta[c]
                out[q, i, j] = r2


@njit(cache=True, fastmath=_FM)
def _chol_inplace(A, p):
    for j in range(p):
        s = A[j, j]
        for c in range(j):
            s -= A[j, c] * A[j, c]
        if not s > 0.0:
            return False
        ljj = math.sqrt(s)
        A[j, j] = ljj
        for i in range(j + 1, p):
            t = A[i, j]
            for c in range(j):
                t -= A[i, c] * A[j, c]
            A[i, j] = t / ljj
    return True


@njit(cache=True, fastmath=_FM)
def factor_columns(Kb, targets, nbr, counts, noise, jitters, diag_out, off_out):
    """Fill ``diag_out[q] = 1/sigma`` and ``off_out[q, :k] = -B/sigma``.

    ``noise`` is indexed by the same row ids as ``targets``/``nbr``.  A column
    whose block is not positive definite is retried with each entry of
    ``jitters`` added to its diagonal.  Returns the first failing column or -1.
    """
    b = targets.shape[0]
    mp1 = Kb.shape[1]
    A = np.empty((mp1, mp1))
    B = np.empty(mp1)
    for q in range(b):
        k = counts[q]
        p = k + 1
        ok = False
        for attempt in range(jitters.shape[0] + 1):
            eps = 0.0 if attempt == 0 else jitters[attempt - 1]
            for i in range(p):
                for j in range(i):
                    A[i, j] = Kb[q, i, j]
                idx = targets[q] if i == k else nbr[q, i]
                A[i, i] = Kb[q, i, i] + noise[idx] + eps
            if _chol_inplace(A, p):
                ok = True
                break
        if not ok:
            return q
        sig = A[k, k]
        for r in range(k - 1, -1, -1):
            t = A[k, r]
            for c in range(r + 1, k):
                t -= A[c, r] * B[c]
            B[r] = t / A[r, r]
        diag_out[q] = 1.0 / sig
        for r in range(k):
            off_out[q, r] = -B[r] / sig
        for r in range(k, off_out.shape[1]):
            off_out[q, r] = 0.0
    return -1
