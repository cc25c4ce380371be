"""Stability verdicts, concentration envelopes, margin fits, risk bounds and tail checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DegenerateMargins,
    InfeasibleGap,
    InvalidConfidence,
    InvalidInput,
    TooFewSamples,
)
from .fisher import FeatureMatrix, FisherEstimate
from .spectral import operator_norm

__all__ = [
    "SipVerdict",
    "ConcentrationParams",
    "MarginFit",
    "TailReport",
    "SampleComplexity",
    "sip_verdict",
    "bernstein_bound",
    "estimate_concentration_params",
    "estimate_kappa",
    "risk_bound",
    "clamp_probability",
    "sample_complexity",
    "empirical_n_min",
    "heavy_tail_check",
    "hill_estimator",
    "sample_kurtosis",
]

SQRT2_PLUS_1 = 1.0 + math.sqrt(2.0)
R_FLOOR = 1e-300
DEFAULT_KURT_THRESHOLD = 9.0
DEFAULT_HILL_FRACTION = 0.1
HILL_HEAVY_INDEX = 4.0
MIN_TAIL_SAMPLES = 50
MIN_MARGIN_SAMPLES = 50


@dataclass(frozen=True)
class SipVerdict:
    delta: float
    gap: float
    ratio: float
    passed: bool


def _check_nonneg(name: str, x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x < 0:
        raise InvalidInput(f"{name} must be finite and >= 0, got {x}")
    return x


def sip_verdict(delta: float, gap: float) -> SipVerdict:
    """Pass iff delta < gap (strict). A zero gap always fails with ratio = inf."""
    delta = _check_nonneg("delta", delta)
    gap = _check_nonneg("gap", gap)
    ratio = delta / gap if gap > 0 else math.inf
    return SipVerdict(delta, gap, ratio, delta < gap)


@dataclass(frozen=True)
class ConcentrationParams:
    """Matrix-Bernstein inputs: variance proxy v, almost-sure bound R, dimension d."""

    v: float
    R: float
    d: int
    delta_conf: float = 0.1
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta_conf < 1.0:
            raise InvalidConfidence(f"confidence parameter must lie in (0, 1), got {self.delta_conf}")
        if self.v < 0 or not self.R > 0 or self.d < 1:
            raise InvalidInput(f"invalid concentration parameters v={self.v}, R={self.R}, d={self.d}")

    @property
    def log_term(self) -> float:
        return math.log(2.0 * self.d / self.delta_conf)


def bernstein_bound(p: ConcentrationParams, n: int) -> float:
    """t(delta) = sqrt(2 v L / n) + 2 R L / (3 n) with L = log(2d/delta)."""
    if not 0.0 < p.delta_conf < 1.0:
        raise InvalidConfidence(f"confidence parameter must lie in (0, 1), got {p.delta_conf}")
    if n < 1:
        raise TooFewSamples(f"n must be >= 1, got {n}")
    log_term = p.log_term
    return math.sqrt(2.0 * p.v * log_term / n) + 2.0 * p.R * log_term / (3.0 * n)


def estimate_concentration_params(
    f: FeatureMatrix, fisher: FisherEstimate, delta_conf: float = 0.1
) -> ConcentrationParams:
    """Plug-in v and R around the reference operator ``fisher``.

    v = ||(1/n) sum_i Y_i^2||_op with Y_i = h_i h_i^T - Gamma, which expands to
    (1/n) sum_i |h_i|^2 h_i h_i^T - Gh G - G Gh + G^2 (Gh the sample moment).
    R = B^2 + ||Gamma||_op, B the clip radius when set, else the max row norm.
    """
    if f.n < 1:
        raise TooFewSamples("no rows")
    x = f.rows
    g_ref = fisher.matrix
    sq = np.einsum("ij,ij->i", x, x)
    m4 = (x * sq[:, None]).T @ x / f.n
    gh = x.T @ x / f.n
    var = m4 - gh @ g_ref - g_ref @ gh + g_ref @ g_ref
    v = operator_norm(0.5 * (var + var.T))
    b = fisher.clip_radius if fisher.clip_radius is not None else float(np.sqrt(sq.max()))
    r = b * b + operator_norm(g_ref)
    degenerate = r <= 0.0
    return ConcentrationParams(v, max(r, R_FLOOR), f.d, delta_conf, degenerate)


@dataclass(frozen=True)
class MarginFit:
    kappa: float
    C: float
    fit_range: tuple[float, float]
    r_squared: float


def estimate_kappa(margins, grid_size: int = 20) -> MarginFit:
    """Least-squares fit of log P(|s| <= t) = log C + kappa log t.

    The grid is geometric over [5th, 50th] percentile of the margins, where
    the small-t margin condition is meant to hold.
    """
    m = np.sort(np.abs(np.asarray(margins, dtype=float).reshape(-1)))
    if m.size < MIN_MARGIN_SAMPLES:
        raise TooFewSamples(f"need >= {MIN_MARGIN_SAMPLES} margins, got {m.size}")
    if m[0] == m[-1]:
        raise DegenerateMargins("all margins are identical")
    t_lo, t_hi = np.percentile(m, [5.0, 50.0])
    if t_lo <= 0.0:
        positive = m[m > 0.0]
        t_lo = positive[0] if positive.size else 0.0
    if not 0.0 < t_lo < t_hi:
        raise DegenerateMargins(f"margin fit range [{t_lo}, {t_hi}] is empty")
    t = np.geomspace(t_lo, t_hi, grid_size)
    cdf = np.searchsorted(m, t, side="right") / m.size
    lx, ly = np.log(t), np.log(cdf)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    if not slope > 0:
        raise DegenerateMargins(f"fitted margin exponent is not positive ({slope:.3g})")
    return MarginFit(float(slope), float(math.exp(intercept)), (float(t_lo), float(t_hi)), min(max(r2, 0.0), 1.0))


def risk_bound(delta: float, gap: float, B: float, kappa: float, C: float) -> float:
    """C * ((1 + sqrt 2) * B * min(1, delta/gap))^kappa, unclamped."""
    delta = _check_nonneg("delta", delta)
    gap = _check_nonneg("gap", gap)
    if delta == 0.0 and gap > 0.0:
        return 0.0
    ratio = 1.0 if gap == 0.0 else min(1.0, delta / gap)
    return float(C * (SQRT2_PLUS_1 * B * ratio) ** kappa)


def clamp_probability(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class SampleComplexity:
    n_var: int
    n_gap: int
    n_min: int
    n_var_exact: float
    n_gap_exact: float
    empirical_n_min: Optional[int]


def empirical_n_min(gap: float, p: ConcentrationParams, target: float = 0.5, budget: int = 10**12) -> Optional[int]:
    """Smallest n <= budget with bernstein_bound(p, n) / gap <= target, else None."""
    if not gap > 0:
        raise InfeasibleGap("gap must be positive")
    if bernstein_bound(p, budget) / gap > target:
        return None
    lo, hi = 1, budget
    while lo < hi:
        mid = (lo + hi) // 2
        if bernstein_bound(p, mid) / gap <= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def sample_complexity(gap: float, p: ConcentrationParams, budget: int = 10**12) -> SampleComplexity:
    """n_var = (2R^2 / 9v) L and n_gap = (32 v / gap^2) L, L = log(2d/delta)."""
    if not gap > 0:
        raise InfeasibleGap(f"sample complexity needs gap > 0, got {gap}")
    if not p.v > 0:
        raise InvalidInput("variance proxy v must be positive")
    log_term = p.log_term
    n_var_x = 2.0 * p.R ** 2 / (9.0 * p.v) * log_term
    n_gap_x = 32.0 * p.v / gap ** 2 * log_term
    n_var, n_gap = math.ceil(n_var_x), math.ceil(n_gap_x)
    return SampleComplexity(
        n_var, n_gap, max(n_var, n_gap), n_var_x, n_gap_x, empirical_n_min(gap, p, budget=budget)
    )


@dataclass(frozen=True)
class TailReport:
    kurtosis: float
    hill_index: float
    heavy: bool
    kurt_threshold: float = DEFAULT_KURT_THRESHOLD


def sample_kurtosis(x) -> np.ndarray:
    """Per-column m4 / m2^2 (Gaussian = 3); constant columns give nan."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean(axis=0)
    m2 = np.mean(c ** 2, axis=0)
    m4 = np.mean(c ** 4, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(m2 > 0, m4 / np.where(m2 > 0, m2, 1.0) ** 2, np.nan)


def hill_estimator(values, fraction: float = DEFAULT_HILL_FRACTION) -> float:
    """Hill tail-index estimate from the top ceil(fraction * n) order statistics."""
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    k = min(max(1, math.ceil(fraction * v.size)), v.size - 1)
    threshold = v[k]
    if threshold <= 0:
        return math.inf
    logs = np.log(v[:k] / threshold)
    mean = float(logs.mean())
    return math.inf if mean <= 0 else 1.0 / mean


def heavy_tail_check(
    f: FeatureMatrix,
    kurt_threshold: float = DEFAULT_KURT_THRESHOLD,
    hill_fraction: float = DEFAULT_HILL_FRACTION,
) -> TailReport:
    if f.n < MIN_TAIL_SAMPLES:
        raise TooFewSamples(f"tail check needs n >= {MIN_TAIL_SAMPLES}, got {f.n}")
    kurt = sample_kurtosis(f.rows)
    kmax = float(np.nanmax(kurt)) if np.any(np.isfinite(kurt)) else math.nan
    hill = hill_estimator(np.linalg.norm(f.rows, axis=1), hill_fraction)
    heavy = bool((math.isfinite(kmax) and kmax > kurt_threshold) or hill < HILL_HEAVY_INDEX)
    return TailReport(kmax, hill, heavy, kurt_threshold)
