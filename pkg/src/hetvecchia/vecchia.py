"""Vecchia approximation: orderings, nearest-neighbour conditioning sets and
sparse upper-triangular inverse Cholesky factors.

Conventions
-----------
Sites are the rows of the input matrix.  A :class:`VecchiaStructure` fixes an
ordering ``order`` (``order[p]`` is the site at position ``p``) and, for every
position, up to ``m`` earlier positions to condition on.  Factors are stored in
position space, column by column: column ``p`` of ``U`` has ``1/sigma_p`` on the
diagonal and ``-B_p/sigma_p`` on the rows of its conditioning set, so that
``U U^T`` approximates the precision matrix.  Public functions that take or
return vectors use *site* order and permute internally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .exceptions import ConfigError, DataError, NumericalError
from . import _fastfactor as _ff
from .kernel import JITTER, _check_theta, sqexp

__all__ = [
    "VecchiaStructure",
    "SparseUpper",
    "StackedLayout",
    "StackedFactor",
    "GPCovariance",
    "Geometry",
    "build_structure",
    "factor_geometry",
    "stacked_geometry",
    "nearest_earlier",
    "build_U",
    "sparse_solve_transpose",
    "quad_form",
    "stacked_layout",
    "build_stacked_U",
    "predict_from_stacked",
]

# Joint prediction forms the dense test-block inverse.
JOINT_MAX = 4000
_CHUNK_ELEMS = 200_000
_JITTERS = np.array([JITTER, 10 * JITTER])
_FAST = True


@dataclass(frozen=True)
class VecchiaStructure:
    """Ordering plus padded conditioning sets.

    ``neighbors[p, :k]`` holds the ``k = min(m, p)`` nearest earlier positions of
    position ``p``, closest first; the remaining slots are ``-1``.
    """

    order: np.ndarray
    neighbors: np.ndarray
    m: int

    @property
    def n(self) -> int:
        return self.order.shape[0]

    @property
    def rank(self) -> np.ndarray:
        """Position of each site (inverse of ``order``)."""
        r = np.empty_like(self.order)
        r[self.order] = np.arange(self.n)
        return r

    @property
    def sizes(self) -> np.ndarray:
        return (self.neighbors >= 0).sum(axis=1)

    def conditioning_set(self, p: int) -> np.ndarray:
        nb = self.neighbors[p]
        return nb[nb >= 0]


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)


def nearest_earlier(Xo: np.ndarray, m: int, first_row: int = 0) -> np.ndarray:
    """For each row ``p >= first_row`` of ``Xo``, the ``min(m, p)`` nearest rows among ``0..p-1``.

    Exact brute force; ties go to the lower row index (stable sort).  Returns an
    array with one padded row per requested ``p``.
    """
    n = Xo.shape[0]
    out = np.full((n - first_row, m), -1, dtype=np.int64)
    chunk = max(1, _CHUNK_ELEMS // max(n, 1))
    for start in range(first_row, n, chunk):
        stop = min(n, start + chunk)
        rows = np.arange(start, stop)
        D = _sqdist(Xo[start:stop], Xo[: stop - 1]) if stop > 1 else np.zeros((rows.size, 0))
        D[np.arange(D.shape[1])[None, :] >= rows[:, None]] = np.inf
        kk = min(m, D.shape[1])
        idx = np.argsort(D, axis=1, kind="stable")[:, :kk]
        keep = np.arange(kk)[None, :] < np.minimum(rows, m)[:, None]
        out[start - first_row:stop - first_row, :kk] = np.where(keep, idx, -1)
    return out


def build_structure(X, m: int, seed=None, order=None) -> VecchiaStructure:
    """Random ordering and nearest-neighbour conditioning sets of size ``min(m, p)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 1:
        raise DataError("need at least one site")
    if m < 1:
        raise ConfigError("conditioning set size m must be >= 1")
    if order is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        order = rng.permutation(n)
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ConfigError("order must be a permutation of the sites")
    nb = nearest_earlier(X[order], m)
    return VecchiaStructure(order, nb, int(m))


class Geometry:
    """One batch of conditioning problems over the rows of ``X``.

    ``targets[b]`` is the row being conditioned and ``nbr[b, :counts[b]]`` the
    rows it conditions on (padding slots hold row 0 and are masked out).
    Kernel blocks for recently used lengthscales are kept, since only the noise
    changes between many consecutive factor builds during sampling.
    """

    _KB_CAPACITY = 4
    _KB_MAX_BYTES = 32 * 2**20

    def __init__(self, X, targets, nbr, mask, labels):
        self.X = X
        self.targets = np.ascontiguousarray(targets, dtype=np.int64)
        self.mask = mask
        self.nbr = np.ascontiguousarray(np.where(mask, nbr, 0), dtype=np.int64)
        self.labels = labels
        self.counts = mask.sum(axis=1).astype(np.int64)
        self.pad_rows = np.flatnonzero(~mask.all(axis=1))
        self._dcc = None
        self._dtc = None
        self._kb: dict[bytes, np.ndarray] = {}

    def __len__(self):
        return self.targets.shape[0]

    @property
    def dcc(self) -> np.ndarray:
        """Squared coordinate differences among neighbours, shape ``(d, b, m, m)``."""
        if self._dcc is None:
            Xc = self.X[self.nbr]
            self._dcc = np.ascontiguousarray(np.moveaxis((Xc[:, :, None, :] - Xc[:, None, :, :]) ** 2, -1, 0))
        return self._dcc

    @property
    def dtc(self) -> np.ndarray:
        """Squared coordinate differences target-to-neighbours, shape ``(d, b, m)``."""
        if self._dtc is None:
            diff = self.X[self.targets][:, None, :] - self.X[self.nbr]
            self._dtc = np.ascontiguousarray(np.moveaxis(diff**2, -1, 0))
        return self._dtc

    def kernel_blocks(self, theta: np.ndarray) -> np.ndarray:
        key = theta.tobytes()
        kb = self._kb.get(key)
        if kb is not None:
            return kb
        b, m = self.nbr.shape
        kb = np.zeros((b, m + 1, m + 1))
        _ff.sqdist_blocks(self.X, self.targets, self.nbr, self.counts, 1.0 / theta, kb)
        np.negative(kb, out=kb)
        np.exp(kb, out=kb)
        if kb.nbytes <= self._KB_MAX_BYTES:
            if len(self._kb) >= self._KB_CAPACITY:
                self._kb.pop(next(iter(self._kb)))
            self._kb[key] = kb
        return kb


def _geometry(X, targets, nbr, mask, labels) -> Geometry:
    return Geometry(X, targets, nbr, mask, labels)


def _chunked_geometry(X, targets, nbr, mask, labels) -> list[Geometry]:
    b, m = nbr.shape
    chunk = max(1, _CHUNK_ELEMS // max(1, (m + 1) * (m + 1) * X.shape[1]))
    return [
        _geometry(X, targets[i:i + chunk], nbr[i:i + chunk], mask[i:i + chunk], labels[i:i + chunk])
        for i in range(0, b, chunk)
    ]


def factor_geometry(structure: VecchiaStructure, X, columns=None) -> list[Geometry]:
    """Geometry cache for :func:`build_U` (``X`` in site order)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = np.arange(structure.n) if columns is None else np.asarray(columns, dtype=np.int64)
    nb = structure.neighbors[cols]
    mask = nb >= 0
    order = structure.order
    return _chunked_geometry(X, order[cols], order[np.where(mask, nb, 0)], mask, cols)


class GPCovariance:
    """Covariance ``K_theta(x_i, x_j) + noise_i * [i == j]`` over the rows of ``X``.

    This is the ``Sigma`` a factor approximates: ``noise = lambda / a`` for the
    mean process (the matrix ``K + A^{-1} Lambda``), ``noise = g`` for the latent
    log-variance process.
    """

    def __init__(self, X, theta, noise=0.0, kernel=sqexp):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        self.theta = _check_theta(theta, X.shape[1])
        self.noise = np.broadcast_to(np.asarray(noise, dtype=float), (X.shape[0],)).copy()
        self.kernel = kernel

    def __len__(self):
        return self.X.shape[0]

    def dense(self, idx=None) -> np.ndarray:
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        Xi = self.X[idx]
        S = self.kernel(Xi, Xi, self.theta)
        S[np.diag_indices(idx.size)] += self.noise[idx]
        return S

    def augmented(self, g: Geometry) -> np.ndarray:
        """``[[S, k], [k^T, s]]`` per problem: neighbours first, target last.

        Padded neighbour slots get identity rows/columns and zero
        cross-covariance, so they drop out of the conditional.
        """
        b, m = g.nbr.shape
        inv = 1.0 / self.theta
        A = np.empty((b, m + 1, m + 1))
        A[:, :m, :m] = self.kernel.from_sqdist(np.tensordot(inv, g.dcc, axes=1))
        k = self.kernel.from_sqdist(np.tensordot(inv, g.dtc, axes=1))
        diag = np.arange(m)
        A[:, diag, diag] += self.noise[g.nbr]
        if g.pad_rows.size:
            r = g.pad_rows
            mk = g.mask[r]
            pair = mk[:, :, None] & mk[:, None, :]
            A[r, :m, :m] = np.where(pair, A[r, :m, :m], np.eye(m)[None])
            k[r] = np.where(mk, k[r], 0.0)
        A[:, :m, m] = k
        A[:, m, :m] = k
        A[:, m, m] = self.kernel.from_sqdist(np.zeros(b)) + self.noise[g.targets]
        return A


@dataclass(frozen=True)
class SparseUpper:
    """Sparse upper-triangular factor in position space (see module docstring)."""

    order: np.ndarray
    neighbors: np.ndarray
    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.order.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.n + (self.neighbors >= 0).sum())

    def log_diag_sum(self) -> float:
        """``sum_i log U_ii``, i.e. ``-1/2 log|Sigma|`` under the approximation."""
        return float(np.sum(np.log(self.diag)))

    def logdet_cov(self) -> float:
        return -2.0 * self.log_diag_sum()

    def _tmatvec_pos(self, vp: np.ndarray) -> np.ndarray:
        safe = np.where(self.neighbors >= 0, self.neighbors, 0)
        return self.diag * vp + (self.off * vp[safe]).sum(axis=1)

    def tmatvec(self, v) -> np.ndarray:
        """``U^T v`` for ``v`` in site order; the result is in position order."""
        return self._tmatvec_pos(np.asarray(v, dtype=float)[self.order])

    def to_scipy(self) -> scipy.sparse.csc_matrix:
        """Position-space ``n x n`` upper-triangular CSC matrix."""
        n, m = self.neighbors.shape
        cols = np.repeat(np.arange(n), m)
        rows = self.neighbors.ravel()
        keep = rows >= 0
        r = np.concatenate([np.arange(n), rows[keep]])
        c = np.concatenate([np.arange(n), cols[keep]])
        v = np.concatenate([self.diag, self.off.ravel()[keep]])
        return scipy.sparse.csc_matrix((v, (r, c)), shape=(n, n))

    def to_dense(self, site_order: bool = True) -> np.ndarray:
        """Dense factor; in site order ``M M^T`` approximates ``Sigma^{-1}`` over sites."""
        U = self.to_scipy().toarray()
        if not site_order:
            return U
        M = np.empty_like(U)
        M[np.ix_(self.order, self.order)] = U
        return M


def _backward(L: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched ``L^{-T} w`` for lower-triangular ``L`` (``b x m x m``) and ``w`` (``b x m``)."""
    x = np.empty_like(w)
    for r in range(w.shape[1] - 1, -1, -1):
        x[:, r] = (w[:, r] - (L[:, r + 1:, r] * x[:, r + 1:]).sum(axis=1)) / L[:, r, r]
    return x


def _batched_cholesky(A: np.ndarray, labels: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(A.shape[-1])[None]
    for eps in (JITTER, 10 * JITTER):
        try:
            return np.linalg.cholesky(A + eps * eye)
        except np.linalg.LinAlgError:
            continue
    for b in range(A.shape[0]):
        try:
            np.linalg.cholesky(A[b] + 10 * JITTER * eye[0])
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"conditional variance at index {int(labels[b])} is not positive (covariance not positive definite)"
            ) from None
    raise NumericalError("batched Cholesky failed")  # pragma: no cover


def _fast_ok(provider) -> bool:
    """Compiled path for the squared-exponential kernel; other kernels use batched LAPACK."""
    return isinstance(provider, GPCovariance) and provider.kernel is sqexp and _FAST


def _columns(provider, geoms: list[Geometry], n_out: int, m: int, rows=None):
    """Diagonal and off-diagonal factor entries for every problem in ``geoms``."""
    diag = np.zeros(n_out)
    off = np.zeros((n_out, m))
    fast = _fast_ok(provider)
    for g in geoms:
        idx = g.labels if rows is None else rows(g.labels)
        if fast:
            dg = np.empty(len(g))
            of = np.empty((len(g), m))
            kb = g.kernel_blocks(provider.theta)
            bad = _ff.factor_columns(kb, g.targets, g.nbr, g.counts, provider.noise, _JITTERS, dg, of)
            if bad >= 0:
                raise NumericalError(
                    f"conditional variance at index {int(g.labels[bad])} is not positive (covariance not positive definite)"
                )
            diag[idx] = dg
            off[idx] = of
            continue
        A = provider.augmented(g)
        L = _batched_cholesky(A, g.labels)
        sig = L[:, m, m]
        if np.any(~(sig > 0)):
            j = int(np.flatnonzero(~(sig > 0))[0])
            raise NumericalError(f"non-positive conditional variance at index {int(g.labels[j])}")
        B = _backward(L[:, :m, :m], L[:, m, :m])
        diag[idx] = 1.0 / sig
        off[idx] = np.where(g.mask, -B / sig[:, None], 0.0)
    return diag, off


def build_U(structure: VecchiaStructure, provider, cache: list[Geometry] | None = None, columns=None) -> SparseUpper:
    """Populate the factor column by column from the provider's covariance.

    Column ``p`` solves one small kriging problem on its conditioning set.
    Columns are independent; ``columns`` restricts the positions computed in this
    call (others stay zero) and ``cache`` reuses a :func:`factor_geometry`.
    """
    m = structure.neighbors.shape[1]
    if cache is None:
        cache = factor_geometry(structure, provider.X, columns)
    diag, off = _columns(provider, cache, structure.n, m)
    return SparseUpper(structure.order, structure.neighbors, diag, off)


def sparse_solve_transpose(U: SparseUpper, z) -> np.ndarray:
    """Solve ``U^T l = z`` (both in site order).

    With ``z ~ N(0, I)`` the solution is a draw from ``N(0, (U U^T)^{-1})``.
    """
    zp = np.asarray(z, dtype=float)[U.order]
    if zp.shape != (U.n,):
        raise DataError("length mismatch")
    if np.any(U.diag == 0):
        raise NumericalError("zero diagonal in factor")
    lp = np.empty(U.n)
    nbrs, off, diag = U.neighbors, U.off, U.diag
    for p in range(U.n):
        nb = nbrs[p]
        k = int((nb >= 0).sum())
        acc = zp[p]
        if k:
            acc -= off[p, :k] @ lp[nb[:k]]
        lp[p] = acc / diag[p]
    out = np.empty(U.n)
    out[U.order] = lp
    return out


def quad_form(U: SparseUpper, v) -> float:
    """``v^T U U^T v = ||U^T v||^2`` for ``v`` in site order."""
    v = np.asarray(v, dtype=float)
    if v.shape != (U.n,):
        raise DataError(f"vector of length {v.shape} does not match factor of size {U.n}")
    r = U.tmatvec(v)
    return float(r @ r)


@dataclass(frozen=True)
class StackedLayout:
    """Where test points go in the stacked ordering and what they condition on.

    ``test_order[q]`` is the test point at stacked position ``n + q``;
    ``neighbors`` holds stacked positions (training ones are ``< n``).
    Depends on inputs only, so it is reused across posterior samples.
    """

    n: int
    test_order: np.ndarray
    neighbors: np.ndarray
    pointwise: bool


def stacked_layout(structure: VecchiaStructure, X_train, X_test, m_predict: int, pointwise: bool = True, seed=None) -> StackedLayout:
    """Append test points after the training positions and pick their neighbours.

    Pointwise layouts let each test point condition on its ``m_predict`` nearest
    training sites only.  Joint layouts also allow earlier test points.
    """
    if m_predict < 1:
        raise ConfigError("m_predict must be >= 1")
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim == 1:
        X_train = X_train[:, None]
    X_test = np.asarray(X_test, dtype=float)
    if X_test.ndim == 1:
        X_test = X_test[:, None]
    if X_test.shape[1] != X_train.shape[1]:
        raise DataError("test inputs have the wrong number of columns")
    n, n_p = X_train.shape[0], X_test.shape[0]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    test_order = rng.permutation(n_p) if n_p else np.empty(0, dtype=np.int64)
    Xtr = X_train[structure.order]
    Xte = X_test[test_order]
    if pointwise:
        k = min(m_predict, n)
        nb = np.full((n_p, k), -1, dtype=np.int64)
        chunk = max(1, _CHUNK_ELEMS // max(n, 1))
        for start in range(0, n_p, chunk):
            D = _sqdist(Xte[start:start + chunk], Xtr)
            nb[start:start + chunk] = np.argsort(D, axis=1, kind="stable")[:, :k]
    else:
        allX = np.vstack([Xtr, Xte])
        k = min(m_predict, n + n_p - 1) if n + n_p > 1 else 1
        nb = nearest_earlier(allX, max(k, 1), first_row=n)
    return StackedLayout(n, test_order.astype(np.int64), nb, pointwise)


@dataclass(frozen=True)
class StackedFactor:
    """Blocks of the stacked factor.

    ``train`` is ``U_n`` (``None`` if not requested).  Test column ``q`` has
    diagonal ``test_diag[q]`` and entries ``test_off[q]`` on stacked rows
    ``layout.neighbors[q]``; entries on training rows form ``U_{n,X}``, the rest
    (and the diagonal) form ``U_X``.
    """

    layout: StackedLayout
    train: SparseUpper | None
    test_diag: np.ndarray
    test_off: np.ndarray
    order: np.ndarray

    def dense_test_blocks(self):
        """Dense ``(U_{n,X}, U_X)`` in position space (small problems only)."""
        n, n_p = self.layout.n, self.test_diag.shape[0]
        UnX = np.zeros((n, n_p))
        UX = np.zeros((n_p, n_p))
        for q in range(n_p):
            for j, v in zip(self.layout.neighbors[q], self.test_off[q]):
                if j < 0:
                    continue
                if j < n:
                    UnX[j, q] = v
                else:
                    UX[j - n, q] = v
            UX[q, q] = self.test_diag[q]
        return UnX, UX


def stacked_geometry(structure: VecchiaStructure, layout: StackedLayout, X_all) -> list[Geometry]:
    """Geometry cache for the test columns of a stacked factor.

    ``X_all`` stacks the training inputs (site order) over the test inputs.
    """
    X_all = np.asarray(X_all, dtype=float)
    if X_all.ndim == 1:
        X_all = X_all[:, None]
    n = structure.n
    n_p = layout.test_order.shape[0]
    stacked_sites = np.concatenate([structure.order, n + layout.test_order])
    nb = layout.neighbors
    mask = nb >= 0
    return _chunked_geometry(X_all, n + layout.test_order, stacked_sites[np.where(mask, nb, 0)], mask, n + np.arange(n_p))


def build_stacked_U(
    structure: VecchiaStructure,
    X_test,
    m_predict: int,
    provider,
    pointwise: bool = True,
    seed=None,
    layout: StackedLayout | None = None,
    with_train: bool = True,
    cache: list[Geometry] | None = None,
) -> StackedFactor:
    """Stacked factor for training sites followed by test points.

    ``provider`` must cover ``n + n_p`` rows: the training sites (same indices as
    in ``structure``) followed by the test points in their given order.
    Training columns never involve test points, so ``train`` equals
    ``build_U(structure, provider)``.
    """
    n = structure.n
    if layout is None:
        layout = stacked_layout(structure, provider.X[:n], X_test, m_predict, pointwise, seed)
    n_p = layout.test_order.shape[0]
    if len(provider) != n + n_p:
        raise DataError("provider must cover training and test rows")
    train = build_U(structure, provider) if with_train else None
    if cache is None:
        cache = stacked_geometry(structure, layout, provider.X)
    diag, off = _columns(provider, cache, n_p, layout.neighbors.shape[1], rows=lambda lab: lab - n)
    return StackedFactor(layout, train, diag, off, structure.order)


def predict_from_stacked(blocks: StackedFactor, values, return_cov: bool = False):
    """Conditional mean ``-(U_X^T)^{-1} U_{n,X}^T values`` and ``(U_X U_X^T)^{-1}``.

    ``values`` is in training-site order; outputs follow the caller's test order.
    Returns the variance vector, or the full covariance with ``return_cov``.
    """
    lay = blocks.layout
    n, n_p = lay.n, lay.test_order.shape[0]
    v = np.asarray(values, dtype=float)
    if v.shape != (n,):
        raise DataError("values must have one entry per training site")
    vp = v[blocks.order]
    nb, off, diag = lay.neighbors, blocks.test_off, blocks.test_diag
    if lay.pointwise:
        safe = np.where(nb >= 0, nb, 0)
        mu_pos = -(off * vp[safe]).sum(axis=1) / diag
        var_pos = 1.0 / diag**2
        cov_pos = np.diag(var_pos) if return_cov else None
    else:
        stack = np.concatenate([vp, np.zeros(n_p)])
        for q in range(n_p):
            k = nb[q] >= 0
            stack[n + q] = -(off[q, k] @ stack[nb[q, k]]) / diag[q]
        mu_pos = stack[n:]
        if n_p > JOINT_MAX:
            raise ConfigError(f"joint prediction refuses {n_p} test points (cap is {JOINT_MAX}); use pointwise mode")
        _, UX = blocks.dense_test_blocks()
        # U_X is upper triangular, so its inverse is too
        W = scipy.linalg.solve_triangular(UX, np.eye(n_p), lower=False) if n_p else np.zeros((0, 0))
        cov_pos = W.T @ W if return_cov else None
        var_pos = np.einsum("ij,ij->j", W, W)
    mu = np.empty(n_p)
    mu[lay.test_order] = mu_pos
    var = np.empty(n_p)
    var[lay.test_order] = var_pos
    if return_cov:
        cov = np.empty((n_p, n_p))
        cov[np.ix_(lay.test_order, lay.test_order)] = cov_pos
        return mu, cov
    return mu, var
