"""Dense symmetric spectral computations.

Eigendecomposition (LAPACK or an in-house Householder + implicit QL solver),
operator norms, top-k subspaces, principal angles, Procrustes alignment and a
randomized range finder for large operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentDegenerate,
    InvalidInput,
    InvalidRank,
    ShapeError,
)

__all__ = [
    "SymmetricOperator",
    "SpectralDecomposition",
    "Subspace",
    "PrincipalAngles",
    "as_operator",
    "eigh",
    "operator_norm",
    "top_k_subspace",
    "sin_theta",
    "procrustes_align",
    "randomized_range",
    "randomized_eigh",
]

DEGENERATE_GAP_TOL = 1e-12
QL_MAX_DIM = 64
_POWER_RTOL = 1e-10
_POWER_MAXITER = 10_000
_POWER_RESTART_SEED = 20_240_517


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _require_finite(a: np.ndarray, what: str = "matrix") -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{what} has non-finite entries")


@dataclass(frozen=True)
class SymmetricOperator:
    """A real symmetric ``dim x dim`` matrix, symmetrized as (M + M^T)/2."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ShapeError(f"expected a non-empty square matrix, got shape {m.shape}")
        _require_finite(m)
        object.__setattr__(self, "entries", _frozen(0.5 * (m + m.T)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def as_operator(m) -> SymmetricOperator:
    if isinstance(m, SymmetricOperator):
        return m
    return SymmetricOperator(np.asarray(m, dtype=float))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in descending order; column i of ``eigenvectors`` pairs with value i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _frozen(self.eigenvectors))

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class Subspace:
    """Orthonormal ``d x k`` basis. ``warnings`` carries non-fatal conditions
    such as a degenerate eigengap at the rank cut."""

    basis: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2 or b.shape[1] < 1 or b.shape[1] >= b.shape[0]:
            raise InvalidRank(f"subspace basis must be d x k with 1 <= k < d, got {b.shape}")
        object.__setattr__(self, "basis", _frozen(b))

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def degenerate(self) -> bool:
        return any(w.startswith("DegenerateGap") for w in self.warnings)


@dataclass(frozen=True)
class PrincipalAngles:
    sines: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sines", _frozen(self.sines))

    @property
    def sin_theta_max(self) -> float:
        return float(self.sines[0])


# --------------------------------------------------------------------------
# eigensolvers


def _householder_tridiagonal(a: np.ndarray):
    """Reduce symmetric ``a`` to tridiagonal form T = Q^T a Q.

    Returns (diag, offdiag, Q) where offdiag[i] couples rows i and i+1.
    """
    n = a.shape[0]
    a = a.copy()
    q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1:, k]
        tail = float(np.dot(x[1:], x[1:]))
        if tail == 0.0:
            continue
        norm_x = math.sqrt(x[0] * x[0] + tail)
        alpha = -math.copysign(norm_x, x[0])
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        # a <- H a H with H = I - 2 v v^T acting on indices k+1:
        a[k + 1:, :] -= 2.0 * np.outer(v, v @ a[k + 1:, :])
        a[:, k + 1:] -= 2.0 * np.outer(a[:, k + 1:] @ v, v)
        q[:, k + 1:] -= 2.0 * np.outer(q[:, k + 1:] @ v, v)
    return np.diag(a).copy(), np.diag(a, -1).copy(), q


def _tridiagonal_ql(d: np.ndarray, off: np.ndarray, z: np.ndarray):
    """Implicit-shift QL iteration on a symmetric tridiagonal matrix.

    Rotations are accumulated into the columns of ``z`` in a fixed sweep
    order, so results depend only on the input bits.
    """
    n = d.shape[0]
    d = d.copy()
    z = z.copy()
    e = np.zeros(n)
    e[: n - 1] = off
    eps = np.finfo(float).eps
    f = 0.0
    tst1 = 0.0
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1 and abs(e[m]) > eps * tst1:
            m += 1
        if m > l:
            for _ in range(60 * n):
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = math.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2:] -= h
                f += h

                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = math.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    zi = z[:, i].copy()
                    zi1 = z[:, i + 1].copy()
                    z[:, i + 1] = s * zi + c * zi1
                    z[:, i] = c * zi - s * zi1
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
            else:  # pragma: no cover - QL converges in a handful of sweeps
                raise ArithmeticError("implicit QL failed to converge")
        d[l] += f
        e[l] = 0.0
    return d, z


def _orient(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive (lowest index on ties)."""
    vecs = vecs.copy()
    mags = np.abs(vecs)
    peak = mags.max(axis=0)
    for j in range(vecs.shape[1]):
        i = int(np.flatnonzero(mags[:, j] >= peak[j] * (1.0 - 1e-9))[0])
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def eigh(m, method: str = "auto") -> SpectralDecomposition:
    """Eigendecomposition of a symmetric operator, eigenvalues descending.

    ``method="ql"`` uses the in-house Householder tridiagonalization followed
    by implicit QL; ``method="lapack"`` uses ``numpy.linalg.eigh``; ``"auto"``
    picks QL up to ``QL_MAX_DIM`` and LAPACK beyond. All routes are
    deterministic for identical input and share the sign convention.
    """
    op = as_operator(m)
    a = np.array(op.entries)
    if method == "auto":
        method = "ql" if op.dim <= QL_MAX_DIM else "lapack"
    if method == "lapack":
        vals, vecs = np.linalg.eigh(a)
    elif method == "ql":
        if a.shape[0] == 1:
            vals, vecs = a[0].copy(), np.ones((1, 1))
        else:
            diag, off, q = _householder_tridiagonal(a)
            vals, vecs = _tridiagonal_ql(diag, off, q)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(-vals, kind="stable")
    return SpectralDecomposition(vals[order], _orient(vecs[:, order]))


def _power_norm(m: np.ndarray) -> float:
    mtm = m.T @ m
    x = np.zeros(m.shape[1])
    x[0] = 1.0
    rng = None
    est = 0.0
    for _ in range(_POWER_MAXITER):
        y = mtm @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            if rng is None:
                # e1 lies in the null space; retry from a fixed random start
                rng = np.random.default_rng(_POWER_RESTART_SEED)
                x = rng.standard_normal(m.shape[1])
                x /= np.linalg.norm(x)
                continue
            return 0.0
        x = y / ny
        new = float(x @ mtm @ x)
        if abs(new - est) <= _POWER_RTOL * abs(new):
            est = new
            break
        est = new
    return math.sqrt(max(est, 0.0))


def operator_norm(m) -> float:
    """Largest singular value.

    Exactly symmetric input goes through the symmetric eigenvalue routine
    (max |lambda|); anything else uses power iteration on M^T M.
    """
    if isinstance(m, SymmetricOperator):
        a = np.asarray(m.entries)
    else:
        a = np.asarray(m, dtype=float)
        if a.ndim != 2:
            raise ShapeError(f"expected a matrix, got shape {a.shape}")
        _require_finite(a)
    if a.size == 0:
        return 0.0
    if a.shape[0] == a.shape[1] and np.array_equal(a, a.T):
        vals = np.linalg.eigvalsh(a)
        return float(max(abs(vals[0]), abs(vals[-1])))
    return _power_norm(a)


def top_k_subspace(dec: SpectralDecomposition, k: int) -> Subspace:
    d = dec.dim
    if not 1 <= k < d:
        raise InvalidRank(f"k must satisfy 1 <= k < d={d}, got {k}")
    lam = dec.eigenvalues
    warn: tuple[str, ...] = ()
    if lam[k - 1] - lam[k] <= DEGENERATE_GAP_TOL * max(1.0, abs(lam[0])):
        warn = (f"DegenerateGap: lambda_{k} == lambda_{k + 1} ({lam[k - 1]:.6g})",)
    return Subspace(dec.eigenvectors[:, :k], warnings=warn)


def _basis(s) -> np.ndarray:
    return s.basis if isinstance(s, Subspace) else np.asarray(s, dtype=float)


def sin_theta(a, b) -> PrincipalAngles:
    """Sines of the principal angles between two equal-rank subspaces.

    Cosines come from the singular values of A^T B. Angles below 45 degrees
    take their sines from the singular values of (I - A A^T) B instead, which
    keeps full relative precision for nearly aligned subspaces.
    """
    ab, bb = _basis(a), _basis(b)
    if ab.shape != bb.shape:
        raise ShapeError(f"subspace shapes differ: {ab.shape} vs {bb.shape}")
    cos = np.clip(np.linalg.svd(ab.T @ bb, compute_uv=False), 0.0, 1.0)
    sines = np.sort(np.sqrt(np.maximum(0.0, 1.0 - cos * cos)))[::-1]
    small = sines < math.sqrt(0.5)
    if np.any(small):
        resid = bb - ab @ (ab.T @ bb)
        direct = np.sort(np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0))[::-1]
        sines = np.where(small, direct, sines)
    sines = np.sort(sines)[::-1]
    return PrincipalAngles(sines)


def procrustes_align(u, u_hat) -> np.ndarray:
    """Orthogonal k x k factor Q of the polar decomposition of U^T U_hat.

    Q minimizes ||U_hat - U Q||_F; the aligned estimate is U_hat Q^T.
    """
    ub, vb = _basis(u), _basis(u_hat)
    if ub.shape != vb.shape:
        raise ShapeError(f"subspace shapes differ: {ub.shape} vs {vb.shape}")
    w, s, zt = np.linalg.svd(ub.T @ vb)
    if s[-1] < 1e-12:
        raise AlignmentDegenerate(f"U^T U_hat is rank deficient (sigma_min={s[-1]:.3g})")
    return w @ zt


def randomized_eigh(m, k: int, oversample: int = 8, power_iters: int = 4, seed=0):
    """Top-k eigenpairs via a randomized range finder and Rayleigh-Ritz.

    Returns ``(eigenvalues, basis)`` with eigenvalues descending.
    """
    op = as_operator(m)
    a = np.asarray(op.entries)
    d = op.dim
    if k < 1 or oversample < 0 or k + oversample > d:
        raise InvalidRank(f"need 1 <= k and k + oversample <= d ({k} + {oversample} > {d})")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((d, k + oversample))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        q, _ = np.linalg.qr(a @ q)
        q, _ = np.linalg.qr(a @ q)
    small = q.T @ a @ q
    vals, vecs = np.linalg.eigh(0.5 * (small + small.T))
    order = np.argsort(-vals, kind="stable")[:k]
    basis = _orient(q @ vecs[:, order])
    return vals[order], basis


def randomized_range(m, k: int, oversample: int = 8, power_iters: int = 4, seed=0) -> Subspace:
    _, basis = randomized_eigh(m, k, oversample=oversample, power_iters=power_iters, seed=seed)
    return Subspace(basis)
