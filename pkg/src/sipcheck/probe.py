"""Linear probes restricted to a subspace."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, ShapeError, SingularScatter, TooFewSamples
from .fisher import FeatureMatrix
from .spectral import Subspace, procrustes_align

__all__ = [
    "Probe",
    "fit_direction",
    "score",
    "classify",
    "disagreement_risk",
    "margin_samples",
    "plug_in_probe",
]

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class Probe:
    """Score s(h) = a^T S^T h + bias for a unit direction a in subspace coordinates."""

    subspace: Subspace
    direction: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.direction, dtype=float).reshape(-1)
        if a.shape[0] != self.subspace.rank:
            raise ShapeError(f"direction has length {a.shape[0]}, subspace rank is {self.subspace.rank}")
        norm = np.linalg.norm(a)
        if norm == 0.0:
            raise ValueError("probe direction must be non-zero")
        if abs(norm - 1.0) > 1e-10:
            a = a / norm
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "direction", a)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def weights(self) -> np.ndarray:
        """The equivalent ambient weight vector S a."""
        return self.subspace.basis @ self.direction


def _rows(f) -> np.ndarray:
    return f.rows if isinstance(f, FeatureMatrix) else np.atleast_2d(np.asarray(f, dtype=float))


def fit_direction(f: FeatureMatrix, s: Subspace, ridge: float = DEFAULT_RIDGE) -> Probe:
    """Ridge-regularized Fisher discriminant on the projected rows S^T h."""
    if f.labels is None:
        raise DegenerateLabels("fit_direction needs labels")
    if f.d != s.ambient_dim:
        raise ShapeError(f"features have d={f.d}, subspace lives in {s.ambient_dim}")
    pos = f.labels == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        raise DegenerateLabels("both classes must be present")
    g = f.rows @ s.basis
    mu_p = g[pos].mean(axis=0)
    mu_n = g[neg].mean(axis=0)
    centered = np.concatenate([g[pos] - mu_p, g[neg] - mu_n])
    scatter = centered.T @ centered / f.n
    scatter = scatter + ridge * np.eye(s.rank)
    lam = np.linalg.eigvalsh(scatter)
    if lam[0] <= np.finfo(float).eps * max(lam[-1], 1.0) * s.rank:
        raise SingularScatter("within-class scatter is singular; use ridge > 0")
    a = np.linalg.solve(scatter, mu_p - mu_n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise DegenerateLabels("class means coincide inside the subspace")
    a /= norm
    return Probe(s, a, float(-a @ (mu_p + mu_n) / 2.0))


def score(p: Probe, f) -> np.ndarray:
    x = _rows(f)
    if x.shape[1] != p.subspace.ambient_dim:
        raise ShapeError(f"features have d={x.shape[1]}, probe expects {p.subspace.ambient_dim}")
    return (x @ p.subspace.basis) @ p.direction + p.bias


def classify(p: Probe, f) -> np.ndarray:
    """sign(score) with score == 0 mapped to +1."""
    return np.where(score(p, f) >= 0.0, 1, -1).astype(np.int8)


def disagreement_risk(p: Probe, q: Probe, f) -> float:
    x = _rows(f)
    if x.shape[0] == 0:
        raise TooFewSamples("disagreement risk needs at least one row")
    return float(np.mean(classify(p, x) != classify(q, x)))


def margin_samples(p: Probe, f) -> np.ndarray:
    return np.abs(score(p, f))


def plug_in_probe(reference: Probe, estimated: Subspace) -> Probe:
    """Reuse the reference direction on an estimated subspace.

    The estimated basis is first rotated onto the reference basis with the
    Procrustes factor, so the same coefficient vector is meaningful in both.
    """
    q = procrustes_align(reference.subspace, estimated)
    aligned = Subspace(estimated.basis @ q.T, warnings=estimated.warnings)
    return Probe(aligned, reference.direction, reference.bias)
