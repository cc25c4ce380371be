"""Fisher operator estimation, variance control and split-half error proxies.

The Fisher operator here is the uncentered second moment E[h h^T] of the
representation; labels never enter it and are only used for stratification.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    InvalidInput,
    InvalidQuantile,
    InvalidRank,
    InvalidRidge,
    LabelError,
    ShapeError,
    TooFewSamples,
)
from .spectral import SpectralDecomposition, SymmetricOperator, as_operator, operator_norm

__all__ = [
    "FeatureMatrix",
    "FisherEstimate",
    "DeltaEstimate",
    "empirical_fisher",
    "clip_features",
    "split_half_delta",
    "exact_delta",
    "eigengap",
    "ridge_regularize",
    "quantile",
]

PSD_TOL = 1e-10
DEFAULT_SPLITS = 8


@dataclass(frozen=True)
class FeatureMatrix:
    """``n x d`` representations h(x_i) with optional +/-1 labels."""

    rows: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.rows, dtype=float)
        if x.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise TooFewSamples("feature matrix has no rows")
        if x.shape[1] < 2:
            raise ShapeError(f"feature dimension must be >= 2, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("feature matrix has non-finite entries")
        x = np.array(x, copy=True)
        x.setflags(write=False)
        object.__setattr__(self, "rows", x)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise ShapeError(f"labels must have length {x.shape[0]}, got shape {y.shape}")
            if not np.all((y == 1) | (y == -1)):
                raise LabelError("labels must be -1 or +1")
            y = y.astype(np.int8)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.rows[idx], None if self.labels is None else self.labels[idx])

    def with_rows(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(rows, self.labels)


@dataclass(frozen=True)
class FisherEstimate:
    """A Fisher operator with provenance. ``n_used == 0`` marks an exact population value."""

    operator: SymmetricOperator
    n_used: int
    clip_radius: Optional[float] = None
    ridge: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "operator", as_operator(self.operator))
        if self.ridge < 0:
            raise InvalidRidge(f"ridge must be >= 0, got {self.ridge}")
        if self.clip_radius is not None and not self.clip_radius > 0:
            raise InvalidInput(f"clip radius must be positive, got {self.clip_radius}")
        m = np.asarray(self.operator.entries)
        lam = np.linalg.eigvalsh(m)
        if lam[0] < -PSD_TOL * max(1.0, abs(lam[-1])):
            raise InvalidInput(f"Fisher operator is not PSD (min eigenvalue {lam[0]:.3g})")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.operator.entries)

    @property
    def dim(self) -> int:
        return self.operator.dim


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    method: str
    n_splits: int
    per_split: tuple[float, ...]


def _moment(rows: np.ndarray) -> np.ndarray:
    m = rows.T @ rows / rows.shape[0]
    return 0.5 * (m + m.T)


def empirical_fisher(f: FeatureMatrix, clip_radius: Optional[float] = None) -> FisherEstimate:
    """(1/n) sum_i h_i h_i^T."""
    return FisherEstimate(SymmetricOperator(_moment(f.rows)), n_used=f.n, clip_radius=clip_radius)


def quantile(values, q: float) -> float:
    """Empirical quantile with linear interpolation between order statistics."""
    return float(np.quantile(np.asarray(values, dtype=float), q, method="linear"))


def clip_features(f: FeatureMatrix, q: float, mode: str = "norm_clip"):
    """Clip feature rows at the q-quantile. Returns ``(clipped, B)``.

    ``norm_clip`` rescales rows whose Euclidean norm exceeds the q-quantile of
    row norms down onto that radius. ``winsorize`` clamps each coordinate to
    its central q-band of empirical quantiles; B is then the largest clipped
    row norm.
    """
    if not 0.0 < q <= 1.0:
        raise InvalidQuantile(f"clipping quantile must lie in (0, 1], got {q}")
    x = f.rows
    if mode == "norm_clip":
        norms = np.linalg.norm(x, axis=1)
        radius = quantile(norms, q)
        over = norms > radius
        if not np.any(over):
            return f, radius
        out = np.array(x)
        out[over] *= (radius / norms[over])[:, None]
        # the rescale can land an ulp above the radius; nudge those rows inside
        for _ in range(4):
            bump = np.linalg.norm(out, axis=1) > radius
            if not np.any(bump):
                break
            out[bump] *= 1.0 - 2.0 * np.finfo(float).eps
        return f.with_rows(out), radius
    if mode == "winsorize":
        lo = np.quantile(x, (1.0 - q) / 2.0, axis=0, method="linear")
        hi = np.quantile(x, (1.0 + q) / 2.0, axis=0, method="linear")
        out = np.clip(x, lo, hi)
        return f.with_rows(out), float(np.linalg.norm(out, axis=1).max())
    raise ValueError(f"unknown clipping mode {mode!r}")


def _split_indices(f: FeatureMatrix, rng: np.random.Generator):
    """One 50/50 partition, stratified by label when labels exist."""
    if f.labels is None:
        perm = rng.permutation(f.n)
        half = f.n // 2
        return np.sort(perm[:half]), np.sort(perm[half:])
    a_parts, b_parts = [], []
    for cls in (-1, 1):
        idx = np.flatnonzero(f.labels == cls)
        idx = idx[rng.permutation(idx.size)]
        half = idx.size // 2
        a_parts.append(idx[:half])
        b_parts.append(idx[half:])
    return np.sort(np.concatenate(a_parts)), np.sort(np.concatenate(b_parts))


def split_half_delta(f: FeatureMatrix, n_splits: int = DEFAULT_SPLITS, seed=0) -> DeltaEstimate:
    """Split-half error proxy: mean over splits of 0.5 * ||Gamma_A - Gamma_B||_op.

    Each split draws its own generator from ``SeedSequence([seed, split_index])``.
    """
    if f.n < 4:
        raise TooFewSamples(f"split-half estimate needs n >= 4, got {f.n}")
    if n_splits < 1:
        raise ValueError(f"n_splits must be >= 1, got {n_splits}")
    per_split = []
    for i in range(n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        a, b = _split_indices(f, rng)
        if a.size == 0 or b.size == 0:
            raise TooFewSamples("a split half is empty")
        diff = _moment(f.rows[a]) - _moment(f.rows[b])
        per_split.append(0.5 * operator_norm(diff))
    return DeltaEstimate(float(np.mean(per_split)), "split_half", n_splits, tuple(per_split))


def exact_delta(est: FisherEstimate, population: FisherEstimate) -> DeltaEstimate:
    if est.dim != population.dim:
        raise ShapeError(f"dimension mismatch: {est.dim} vs {population.dim}")
    value = operator_norm(est.matrix - population.matrix)
    return DeltaEstimate(value, "exact", 0, (value,))


def eigengap(dec: SpectralDecomposition, k: int) -> float:
    """lambda_k - lambda_{k+1}, clamped at zero."""
    if not 1 <= k < dec.dim:
        raise InvalidRank(f"k must satisfy 1 <= k < d={dec.dim}, got {k}")
    return max(0.0, float(dec.eigenvalues[k - 1] - dec.eigenvalues[k]))


def ridge_regularize(m, rho: float) -> SymmetricOperator:
    if rho < 0:
        raise InvalidRidge(f"ridge must be >= 0, got {rho}")
    op = as_operator(m)
    if rho == 0:
        return op
    return SymmetricOperator(np.asarray(op.entries) + rho * np.eye(op.dim))
