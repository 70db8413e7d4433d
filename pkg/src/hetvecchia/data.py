"""Campaign ingestion, replicate collapsing and train/test splitting.

A stochastic simulation campaign is a set of ``N`` runs ``(x_j, y_j)``, many of
which share an input.  Everything downstream only needs per-site sufficient
statistics: the unique inputs, their multiplicities ``a_i``, the per-site means
and the per-site mean squared residuals ``s_i^2``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .exceptions import DataError, InputIOError

__all__ = [
    "RawCampaign",
    "ReplicatedDesign",
    "SplitSpec",
    "Scaling",
    "build_replicated_design",
    "split",
    "split_campaign",
    "merge",
    "fit_scaling",
    "read_campaign_csv",
    "write_campaign_csv",
    "write_design_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawCampaign:
    """``N`` raw runs: an ``N x d`` input matrix and a length-``N`` output vector."""

    inputs: np.ndarray
    outputs: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"inputs must be a non-empty N x d matrix, got shape {X.shape}")
        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite input at row {int(np.flatnonzero(bad)[0])}")
        object.__setattr__(self, "inputs", _frozen(X))
        if self.outputs is not None:
            y = np.asarray(self.outputs, dtype=float).ravel()
            if y.shape[0] != X.shape[0]:
                raise DataError(f"{X.shape[0]} input rows but {y.shape[0]} outputs")
            bad = ~np.isfinite(y)
            if bad.any():
                raise DataError(f"non-finite output at row {int(np.flatnonzero(bad)[0])}")
            object.__setattr__(self, "outputs", _frozen(y))

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def has_outputs(self) -> bool:
        return self.outputs is not None

    def with_jitter(self, sd: float, seed: int | None = None) -> "RawCampaign":
        """Add ``N(0, sd^2)`` noise to the outputs (for zero-noise simulators)."""
        if self.outputs is None:
            raise DataError("campaign has no outputs to jitter")
        rng = np.random.default_rng(seed)
        return RawCampaign(self.inputs, self.outputs + sd * rng.standard_normal(self.N))


@dataclass(frozen=True)
class ReplicatedDesign:
    """Unique-site sufficient statistics of a campaign.

    ``replicates``/``offsets`` keep the raw per-site outputs (site ``i`` owns
    ``replicates[offsets[i]:offsets[i+1]]``).  They are only used for splitting,
    merging and out-of-sample scoring; likelihoods never look at them.
    """

    unique_inputs: np.ndarray
    multiplicities: np.ndarray
    means: np.ndarray
    sos: np.ndarray
    replicates: np.ndarray | None = field(default=None, repr=False)
    offsets: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.unique_inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(self.multiplicities)
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise DataError("multiplicities must be integers")
            a = a.astype(np.int64)
        ybar = np.asarray(self.means, dtype=float).ravel()
        s2 = np.asarray(self.sos, dtype=float).ravel()
        n = X.shape[0]
        if n < 1:
            raise DataError("design has no sites")
        if not (a.shape == ybar.shape == s2.shape == (n,)):
            raise DataError("multiplicities, means and sos must all have length n")
        if np.any(a < 1):
            raise DataError("every multiplicity must be >= 1")
        if np.any(s2 < 0) or not np.isfinite(s2).all() or not np.isfinite(ybar).all():
            raise DataError("means must be finite and sos finite and non-negative")
        s2 = np.where(a == 1, 0.0, s2)
        object.__setattr__(self, "unique_inputs", _frozen(X))
        object.__setattr__(self, "multiplicities", _frozen(a.astype(np.int64)))
        object.__setattr__(self, "means", _frozen(ybar))
        object.__setattr__(self, "sos", _frozen(s2))
        if self.replicates is not None:
            reps = np.asarray(self.replicates, dtype=float).ravel()
            offs = np.asarray(self.offsets, dtype=np.int64)
            if offs.shape != (n + 1,) or offs[-1] != reps.shape[0] or np.any(np.diff(offs) != a):
                raise DataError("replicates/offsets disagree with multiplicities")
            object.__setattr__(self, "replicates", _frozen(reps))
            object.__setattr__(self, "offsets", _frozen(offs))

    @property
    def n(self) -> int:
        return self.unique_inputs.shape[0]

    @property
    def d(self) -> int:
        return self.unique_inputs.shape[1]

    @property
    def total_n(self) -> int:
        return int(self.multiplicities.sum())

    N = total_n

    @property
    def has_replicates(self) -> bool:
        return self.replicates is not None

    def site_outputs(self, i: int) -> np.ndarray:
        if self.replicates is None:
            raise DataError("design was built without raw replicates")
        return self.replicates[self.offsets[i]:self.offsets[i + 1]]

    def subset(self, idx) -> "ReplicatedDesign":
        """Design restricted to the sites ``idx`` (in that order)."""
        idx = np.asarray(idx, dtype=np.int64)
        reps = offs = None
        if self.replicates is not None:
            pieces = [self.site_outputs(i) for i in idx]
            reps = np.concatenate(pieces) if pieces else np.empty(0)
            offs = np.concatenate([[0], np.cumsum(self.multiplicities[idx])])
        return ReplicatedDesign(
            self.unique_inputs[idx], self.multiplicities[idx], self.means[idx], self.sos[idx], reps, offs
        )

    def to_campaign(self) -> RawCampaign:
        """Expand back to one row per replicate (requires stored replicates)."""
        if self.replicates is None:
            raise DataError("design was built without raw replicates")
        X = np.repeat(self.unique_inputs, self.multiplicities, axis=0)
        return RawCampaign(X, self.replicates)

    def expanded_inputs(self) -> np.ndarray:
        return np.repeat(self.unique_inputs, self.multiplicities, axis=0)

    def transform(self, scaling: "Scaling") -> "ReplicatedDesign":
        """Apply input/output scaling to the sufficient statistics."""
        reps = None if self.replicates is None else scaling.transform_y(self.replicates)
        return ReplicatedDesign(
            scaling.transform_X(self.unique_inputs),
            self.multiplicities,
            scaling.transform_y(self.means),
            self.sos / scaling.y_scale**2,
            reps,
            self.offsets,
        )


def _group_rows(X: np.ndarray, tol: float) -> np.ndarray:
    """Site label per row, labels numbered in first-appearance order."""
    N = X.shape[0]
    labels = np.empty(N, dtype=np.int64)
    if tol == 0:
        seen: dict[tuple, int] = {}
        for j, row in enumerate(map(tuple, X.tolist())):
            labels[j] = seen.setdefault(row, len(seen))
        return labels
    reps: list[np.ndarray] = []
    rep_arr = np.empty((0, X.shape[1]))
    for j in range(N):
        if rep_arr.shape[0]:
            dist = np.sqrt(((rep_arr - X[j]) ** 2).sum(axis=1))
            hit = np.flatnonzero(dist <= tol)
            if hit.size:
                labels[j] = hit[0]
                continue
        labels[j] = len(reps)
        reps.append(X[j])
        rep_arr = np.asarray(reps)
    return labels


def build_replicated_design(raw: RawCampaign, dedup_tol: float = 0.0) -> ReplicatedDesign:
    """Collapse replicates into unique-site sufficient statistics.

    Rows whose inputs coincide (exactly when ``dedup_tol == 0``, otherwise within
    Euclidean distance ``dedup_tol`` of the first row of a site) form one site.
    Sites keep first-appearance order.  ``sos[i]`` is the mean squared residual
    ``(1/a_i) sum_j (y_ij - ybar_i)^2``.
    """
    if not isinstance(raw, RawCampaign):
        raw = RawCampaign(*raw)
    if raw.outputs is None:
        raise DataError("campaign has no outputs")
    if dedup_tol < 0:
        raise DataError("dedup_tol must be non-negative")
    X, y = raw.inputs, raw.outputs
    labels = _group_rows(X, dedup_tol)
    n = int(labels.max()) + 1
    first = np.full(n, -1, dtype=np.int64)
    for j in range(X.shape[0] - 1, -1, -1):
        first[labels[j]] = j
    a = np.bincount(labels, minlength=n)
    ybar = np.bincount(labels, weights=y, minlength=n) / a
    s2 = np.bincount(labels, weights=(y - ybar[labels]) ** 2, minlength=n) / a
    order = np.argsort(labels, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(a)])
    return ReplicatedDesign(X[first], a, ybar, s2, y[order], offsets)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    mode: Literal["by-unique-site", "by-replicate"] = "by-unique-site"

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise DataError("train_fraction must lie in (0, 1]")
        if self.mode not in ("by-unique-site", "by-replicate"):
            raise DataError(f"unknown split mode {self.mode!r}")


def _n_train(total: int, fraction: float) -> int:
    k = int(round(fraction * total))
    if k <= 0 or k >= total:
        raise DataError(
            f"train_fraction={fraction} leaves an empty side for {total} units"
        )
    return k


def split(design: ReplicatedDesign, spec: SplitSpec) -> tuple[ReplicatedDesign, ReplicatedDesign]:
    """Random train/test partition of a design.

    ``by-unique-site`` keeps every replicate of a site on the same side.
    ``by-replicate`` assigns individual runs and needs stored replicates; a site
    can then appear on both sides.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "by-unique-site":
        if design.n < 2:
            raise DataError("need at least 2 unique sites to split by site")
        k = _n_train(design.n, spec.train_fraction)
        perm = rng.permutation(design.n)
        return design.subset(np.sort(perm[:k])), design.subset(np.sort(perm[k:]))
    left, right = split_campaign(design.to_campaign(), spec)
    return build_replicated_design(left), build_replicated_design(right)


def split_campaign(raw: RawCampaign, spec: SplitSpec) -> tuple[RawCampaign, RawCampaign]:
    """Split raw runs; ``by-unique-site`` groups rows by exact input first."""
    if spec.mode == "by-unique-site":
        tr, te = split(build_replicated_design(raw), spec)
        return tr.to_campaign(), te.to_campaign()
    rng = np.random.default_rng(spec.seed)
    k = _n_train(raw.N, spec.train_fraction)
    perm = rng.permutation(raw.N)
    tr, te = np.sort(perm[:k]), np.sort(perm[k:])
    return (RawCampaign(raw.inputs[tr], raw.outputs[tr]), RawCampaign(raw.inputs[te], raw.outputs[te]))


def merge(*designs: ReplicatedDesign) -> ReplicatedDesign:
    """Union of designs with stored replicates; identical inputs are re-pooled."""
    camps = [d.to_campaign() for d in designs]
    X = np.vstack([c.inputs for c in camps])
    y = np.concatenate([c.outputs for c in camps])
    return build_replicated_design(RawCampaign(X, y))


@dataclass(frozen=True)
class Scaling:
    """Affine maps ``x -> (x - x_min) / x_range`` and ``y -> (y - y_center) / y_scale``."""

    x_min: np.ndarray
    x_range: np.ndarray
    y_center: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def identity(cls, d: int) -> "Scaling":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    def transform_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return (X - self.x_min) / self.x_range

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def inverse_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_scale + self.y_center

    def inverse_var(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) * self.y_scale**2

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min.tolist(),
            "x_range": self.x_range.tolist(),
            "y_center": float(self.y_center),
            "y_scale": float(self.y_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaling":
        return cls(np.asarray(d["x_min"], float), np.asarray(d["x_range"], float), d["y_center"], d["y_scale"])


def fit_scaling(design: ReplicatedDesign, scale_inputs: bool = True, scale_outputs: bool = True) -> Scaling:
    """Min-max inputs onto ``[0, 1]^d``; center outputs and divide by their sd.

    Standardized outputs mostly land in ``[-2, 2]``.  Output moments are taken
    over all ``N`` runs, reconstructed from the sufficient statistics.
    """
    X = design.unique_inputs
    d = X.shape[1]
    if scale_inputs:
        lo = X.min(axis=0)
        rng = X.max(axis=0) - lo
        rng = np.where(rng > 0, rng, 1.0)
    else:
        lo, rng = np.zeros(d), np.ones(d)
    center, scale = 0.0, 1.0
    if scale_outputs:
        a = design.multiplicities
        N = a.sum()
        center = float((a * design.means).sum() / N)
        second = float((a * (design.sos + (design.means - center) ** 2)).sum() / N)
        scale = float(np.sqrt(second)) if second > 0 else 1.0
    return Scaling(lo, rng, center, scale)


def read_campaign_csv(path, delimiter: str = ",", has_outputs: bool | None = None) -> RawCampaign:
    """Read a header-row CSV: ``d`` input columns then one output column.

    With ``has_outputs=None`` a final column named ``y`` (or ``output``) is taken
    as the output; otherwise every column is an input.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputIOError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text), delimiter=delimiter))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise DataError(f"{path}: expected a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if has_outputs is None:
        has_outputs = header[-1].lower() in ("y", "output", "outputs", "response")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    if has_outputs:
        if data.shape[1] < 2:
            raise DataError(f"{path}: need at least one input column and one output column")
        return RawCampaign(data[:, :-1], data[:, -1])
    return RawCampaign(data)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_campaign_csv(raw: RawCampaign, path, delimiter: str = ",") -> None:
    header = [f"x_{k + 1}" for k in range(raw.d)]
    if raw.outputs is not None:
        header.append("y")
    lines = [delimiter.join(header)]
    for j in range(raw.N):
        vals = [_fmt(v) for v in raw.inputs[j]]
        if raw.outputs is not None:
            vals.append(_fmt(raw.outputs[j]))
        lines.append(delimiter.join(vals))
    _write_text(path, "\n".join(lines) + "\n")


def write_design_csv(design: ReplicatedDesign, path, delimiter: str = ",") -> None:
    """Columns ``x_1..x_d, a, ybar, s2``, one row per unique site."""
    header = [f"x_{k + 1}" for k in range(design.d)] + ["a", "ybar", "s2"]
    lines = [delimiter.join(header)]
    for i in range(design.n):
        vals = [_fmt(v) for v in design.unique_inputs[i]]
        vals += [str(int(design.multiplicities[i])), _fmt(design.means[i]), _fmt(design.sos[i])]
        lines.append(delimiter.join(vals))
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputIOError(f"cannot write {path}: {exc}") from exc
