"""Two-class Gaussian / Student-t mixtures with exact population quantities.

Data model: Y uniform on {-1, +1}, h = Y mu + eps with mu = m e_1 and eps
centred with diagonal scale Sigma. For Gaussian noise Gamma = mu mu^T + Sigma;
for multivariate Student-t noise eps = sqrt(nu / W) zeta (W ~ chi2(nu),
zeta ~ N(0, Sigma)) so Gamma = mu mu^T + nu / (nu - 2) Sigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateGap, InfiniteVariance, InvalidRank, InvalidSeries
from .fisher import FeatureMatrix, FisherEstimate, empirical_fisher
from .probe import Probe
from .spectral import SymmetricOperator, eigh, top_k_subspace

__all__ = [
    "SyntheticConfig",
    "ExperimentSeries",
    "population_fisher",
    "noise_covariance",
    "sample",
    "bayes_probe",
    "task_seed",
    "summarize",
    "sweet_spot",
    "gaussian_margin_cdf",
    "SubspaceExperiment",
    "PhaseExperiment",
    "ClippingSweep",
    "ScalingExperiment",
    "subspace_point",
    "run_subspace_experiment",
    "knee_point",
    "calibrate_phase_config",
    "run_phase_experiment",
    "run_clipping_sweep",
    "run_scaling_experiment",
    "margin_tail_curve",
]


@dataclass(frozen=True)
class SyntheticConfig:
    family: str = "gaussian"
    d: int = 10
    k: int = 1
    mean_scale: float = 1.0
    scale_spectrum: Sequence[float] = ()
    nu: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "student_t":
            if self.nu is None or not self.nu > 2:
                raise InfiniteVariance(f"Student-t needs nu > 2 for a finite Fisher operator, got {self.nu}")
        if not 1 <= self.k < self.d:
            raise InvalidRank(f"need 1 <= k < d, got k={self.k}, d={self.d}")
        spec = tuple(float(s) for s in self.scale_spectrum) or (1.0,) * self.d
        if len(spec) != self.d:
            raise ValueError(f"scale_spectrum has length {len(spec)}, expected d={self.d}")
        if any(s <= 0 for s in spec):
            raise ValueError("scale_spectrum entries must be positive")
        if any(a < b for a, b in zip(spec, spec[1:])):
            raise ValueError("scale_spectrum must be non-increasing")
        if self.mean_scale < 0:
            raise ValueError("mean_scale must be >= 0")
        object.__setattr__(self, "scale_spectrum", spec)

    @property
    def mean(self) -> np.ndarray:
        mu = np.zeros(self.d)
        mu[0] = self.mean_scale
        return mu

    @property
    def variance_factor(self) -> float:
        """E[nu / W] for Student-t noise, 1 for Gaussian."""
        return 1.0 if self.family == "gaussian" else self.nu / (self.nu - 2.0)

    def replace(self, **changes) -> "SyntheticConfig":
        fields = dict(
            family=self.family, d=self.d, k=self.k, mean_scale=self.mean_scale,
            scale_spectrum=self.scale_spectrum, nu=self.nu, seed=self.seed,
        )
        fields.update(changes)
        return SyntheticConfig(**fields)


@dataclass(frozen=True)
class ExperimentSeries:
    x: np.ndarray
    y_mean: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    n_seeds: int
    label: str = ""
    per_seed: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.x, self.y_mean, self.y_lo, self.y_hi)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise InvalidSeries("series arrays must be 1-D with equal lengths")
        for name, a in zip(("x", "y_mean", "y_lo", "y_hi"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.per_seed is not None:
            ps = np.asarray(self.per_seed, dtype=float)
            ps.setflags(write=False)
            object.__setattr__(self, "per_seed", ps)

    def __len__(self) -> int:
        return self.x.shape[0]


def noise_covariance(cfg: SyntheticConfig) -> np.ndarray:
    """Covariance of eps (the Student-t variance factor included)."""
    return cfg.variance_factor * np.diag(cfg.scale_spectrum)


def population_fisher(cfg: SyntheticConfig) -> FisherEstimate:
    mu = cfg.mean
    gamma = np.outer(mu, mu) + noise_covariance(cfg)
    return FisherEstimate(SymmetricOperator(gamma), n_used=0)


def task_seed(master: int, *keys: int) -> np.random.SeedSequence:
    """Seed for one task, a pure function of the master seed and the task indices."""
    return np.random.SeedSequence([int(master), *(int(k) for k in keys)])


def sample(cfg: SyntheticConfig, n: int, seed=None) -> FeatureMatrix:
    """Draw n labelled rows. ``seed`` defaults to ``cfg.seed``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    y = rng.integers(0, 2, size=n) * 2 - 1
    z = rng.standard_normal((n, cfg.d)) * np.sqrt(np.asarray(cfg.scale_spectrum))
    if cfg.family == "student_t":
        w = rng.chisquare(cfg.nu, size=n)
        z *= np.sqrt(cfg.nu / w)[:, None]
    z[:, 0] += y * cfg.mean_scale
    return FeatureMatrix(z, y)


def bayes_probe(cfg: SyntheticConfig) -> Probe:
    """Direction a proportional to (U^T Sigma U)^-1 U^T mu inside the top-k population subspace."""
    dec = eigh(population_fisher(cfg).operator)
    sub = top_k_subspace(dec, cfg.k)
    if sub.degenerate:
        raise DegenerateGap(f"population Fisher operator has no gap at k={cfg.k}")
    u = sub.basis
    a = np.linalg.solve(u.T @ noise_covariance(cfg) @ u, u.T @ cfg.mean)
    if np.linalg.norm(a) == 0.0:
        raise DegenerateGap("class mean has no component in the top-k subspace")
    return Probe(sub, a, 0.0)


def gaussian_margin_cdf(cfg: SyntheticConfig, t) -> np.ndarray:
    """P(|s*| <= t) for the Gaussian family, where s* given Y is normal."""
    if cfg.family != "gaussian":
        raise ValueError("closed-form margin law is only available for the Gaussian family")
    p = bayes_probe(cfg)
    w = p.weights
    loc = float(w @ cfg.mean)
    sd = math.sqrt(float(w @ noise_covariance(cfg) @ w))
    t = np.asarray(t, dtype=float)
    # both classes give the same law for |s*| by symmetry
    return ndtr((t - loc) / sd) - ndtr((-t - loc) / sd)


def summarize(x, values, label: str = "", lo_pct: float = 10.0, hi_pct: float = 90.0) -> ExperimentSeries:
    """Aggregate a (grid, seeds) array into mean and 10th/90th percentile bands."""
    v = np.asarray(values, dtype=float)
    mean = v.mean(axis=1)
    lo = np.minimum(np.percentile(v, lo_pct, axis=1), mean)
    hi = np.maximum(np.percentile(v, hi_pct, axis=1), mean)
    return ExperimentSeries(np.asarray(x, dtype=float), mean, lo, hi, v.shape[1], label, per_seed=v)


def sweet_spot(series: ExperimentSeries):
    """(q*, value): argmin of the mean curve, ties toward the smaller q."""
    if len(series) == 0:
        raise InvalidSeries("empty series")
    if len(series) < 3:
        raise InvalidSeries("sweet-spot search needs at least 3 grid points")
    y = series.y_mean
    best = np.flatnonzero(y == np.nanmin(y))
    i = int(best[np.argmin(series.x[best])])
    return float(series.x[i]), float(y[i])


# --------------------------------------------------------------------------
# experiment runners

DEFAULT_SEEDS = 100
DEFAULT_N_GRID = tuple(range(100, 1001, 100))
PHASE_N_GRID = tuple(range(100, 1001, 50))
SCALING_N_GRID = (100, 200, 400, 800, 1600, 3200)
CLIP_Q_GRID = tuple(float(q) for q in 1.0 - np.geomspace(0.60, 0.005, 24))
PHASE_TARGET_N = 500
DEFAULT_EVAL_SIZE = 20_000
_EVAL_KEY = 2**31 - 1
_PILOT_KEY = 2**31 - 2


@dataclass(frozen=True)
class SubspaceExperiment:
    scatter: ExperimentSeries  # x = Delta/gap, y = sin theta, one entry per draw
    sin_by_n: ExperimentSeries
    ratio_by_n: ExperimentSeries
    violations: int


@dataclass(frozen=True)
class PhaseExperiment:
    risk: ExperimentSeries
    ratio: ExperimentSeries
    knee: float
    gap: float


@dataclass(frozen=True)
class ClippingSweep:
    ratio: ExperimentSeries
    sin_theta: ExperimentSeries
    q_star: float
    per_seed_argmin: np.ndarray


@dataclass(frozen=True)
class ScalingExperiment:
    slope: float
    series: ExperimentSeries


def _population(cfg: SyntheticConfig):
    from .fisher import eigengap

    pop = population_fisher(cfg)
    dec = eigh(pop.operator)
    sub = top_k_subspace(dec, cfg.k)
    return pop, sub, eigengap(dec, cfg.k)


def subspace_point(population: FisherEstimate, estimate: FisherEstimate, k: int):
    """(Delta / gap, sin theta_max) for one estimate against the population operator."""
    from .fisher import eigengap, exact_delta
    from .spectral import sin_theta

    dec = eigh(population.operator)
    gap = eigengap(dec, k)
    delta = exact_delta(estimate, population).value
    s = sin_theta(top_k_subspace(dec, k), top_k_subspace(eigh(estimate.operator), k)).sin_theta_max
    return (delta / gap if gap > 0 else math.inf), s


def run_subspace_experiment(cfg: SyntheticConfig, n_grid=DEFAULT_N_GRID, seeds: int = DEFAULT_SEEDS) -> SubspaceExperiment:
    from .fisher import exact_delta
    from .spectral import sin_theta

    pop, sub, gap = _population(cfg)
    if gap <= 0:
        raise DegenerateGap("population Fisher operator has no gap")
    ratios = np.empty((len(n_grid), seeds))
    sines = np.empty_like(ratios)
    for gi, n in enumerate(n_grid):
        for si in range(seeds):
            est = empirical_fisher(sample(cfg, int(n), task_seed(cfg.seed, gi, si)))
            ratios[gi, si] = exact_delta(est, pop).value / gap
            sines[gi, si] = sin_theta(sub, top_k_subspace(eigh(est.operator), cfg.k)).sin_theta_max
    flat_r, flat_s = ratios.ravel(), sines.ravel()
    scatter = ExperimentSeries(flat_r, flat_s, flat_s, flat_s, 1, "sin_theta_vs_ratio")
    violations = int(np.sum(flat_s > flat_r + 1e-8))
    return SubspaceExperiment(
        scatter,
        summarize(n_grid, sines, "sin_theta_vs_n"),
        summarize(n_grid, ratios, "ratio_vs_n"),
        violations,
    )


def knee_point(x, y) -> float:
    """Knee of a monotone curve: the point farthest from the chord joining the
    endpoints after rescaling both axes to [0, 1] (maximum-curvature proxy)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InvalidSeries("knee detection needs at least 3 points")
    xs = (x - x[0]) / (x[-1] - x[0])
    span = y[-1] - y[0]
    if span == 0:
        return float(x[0])
    ys = (y - y[0]) / span
    return float(x[int(np.argmax(np.abs(ys - xs)))])


def calibrate_phase_config(
    cfg: SyntheticConfig, n_target: int = PHASE_TARGET_N, delta_conf: float = 0.1
) -> SyntheticConfig:
    """Solve for the mean scale at which the population gap equals the Bernstein
    envelope at ``n_target`` (plug-in v, R from a pilot draw of that size)."""
    from scipy.optimize import brentq

    from .diagnostics import bernstein_bound, estimate_concentration_params

    def mismatch(m: float) -> float:
        c = cfg.replace(mean_scale=m)
        pop, _, gap = _population(c)
        pilot = sample(c, n_target, task_seed(cfg.seed, _PILOT_KEY))
        p = estimate_concentration_params(pilot, pop, delta_conf)
        return gap - bernstein_bound(p, n_target)

    hi = 1.0
    while mismatch(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("could not bracket the phase calibration")
    m = brentq(mismatch, 1e-3, hi, xtol=1e-10)
    return cfg.replace(mean_scale=float(m))


def run_phase_experiment(
    cfg: SyntheticConfig,
    n_grid=PHASE_N_GRID,
    seeds: int = DEFAULT_SEEDS,
    n_eval: int = DEFAULT_EVAL_SIZE,
) -> PhaseExperiment:
    """Disagreement risk of the plug-in probe against the population Bayes probe, versus n.

    Risk is measured on one fixed evaluation draw shared by all grid points.
    """
    from .fisher import exact_delta
    from .probe import disagreement_risk, plug_in_probe

    pop, _, gap = _population(cfg)
    ref = bayes_probe(cfg)
    evaluation = sample(cfg, n_eval, task_seed(cfg.seed, _EVAL_KEY))
    risk = np.empty((len(n_grid), seeds))
    ratio = np.empty_like(risk)
    for gi, n in enumerate(n_grid):
        for si in range(seeds):
            est = empirical_fisher(sample(cfg, int(n), task_seed(cfg.seed, gi, si)))
            u_hat = top_k_subspace(eigh(est.operator), cfg.k)
            risk[gi, si] = disagreement_risk(ref, plug_in_probe(ref, u_hat), evaluation)
            ratio[gi, si] = exact_delta(est, pop).value / gap
    risk_s = summarize(n_grid, risk, "disagreement_risk_vs_n")
    return PhaseExperiment(risk_s, summarize(n_grid, ratio, "ratio_vs_n"), knee_point(n_grid, risk_s.y_mean), gap)


def run_clipping_sweep(
    cfg: SyntheticConfig,
    q_grid=CLIP_Q_GRID,
    n: int = PHASE_TARGET_N,
    seeds: int = DEFAULT_SEEDS,
    mode: str = "norm_clip",
    n_splits: int = 8,
) -> ClippingSweep:
    """Per seed: one draw, clipped at every q; record split-half ratio and sin theta."""
    from .fisher import clip_features, eigengap, split_half_delta
    from .spectral import sin_theta

    _, sub, _ = _population(cfg)
    ratio = np.empty((len(q_grid), seeds))
    sines = np.empty_like(ratio)
    for si in range(seeds):
        draw = sample(cfg, n, task_seed(cfg.seed, si))
        for qi, q in enumerate(q_grid):
            clipped, radius = clip_features(draw, q, mode)
            dec = eigh(empirical_fisher(clipped).operator)
            gap = eigengap(dec, cfg.k)
            delta = split_half_delta(clipped, n_splits, seed=si).value
            ratio[qi, si] = delta / gap if gap > 0 else math.inf
            sines[qi, si] = sin_theta(sub, top_k_subspace(dec, cfg.k)).sin_theta_max
    ratio_s = summarize(q_grid, ratio, "ratio_vs_q")
    q_star, _ = sweet_spot(ratio_s)
    return ClippingSweep(ratio_s, summarize(q_grid, sines, "sin_theta_vs_q"), q_star, np.argmin(ratio, axis=0))


def run_scaling_experiment(cfg: SyntheticConfig, n_grid=SCALING_N_GRID, seeds: int = DEFAULT_SEEDS) -> ScalingExperiment:
    """Least-squares slope of log(mean exact Delta) against log n."""
    from .fisher import exact_delta

    if len(n_grid) < 5:
        raise InvalidSeries("scaling fit needs at least 5 sample sizes")
    pop = population_fisher(cfg)
    deltas = np.empty((len(n_grid), seeds))
    for gi, n in enumerate(n_grid):
        for si in range(seeds):
            est = empirical_fisher(sample(cfg, int(n), task_seed(cfg.seed, gi, si)))
            deltas[gi, si] = exact_delta(est, pop).value
    series = summarize(n_grid, deltas, "delta_vs_n")
    slope = np.polyfit(np.log(np.asarray(n_grid, dtype=float)), np.log(series.y_mean), 1)[0]
    return ScalingExperiment(float(slope), series)


def margin_tail_curve(cfg: SyntheticConfig, t_grid, n_mc: int = 100_000) -> ExperimentSeries:
    """P(|s*| <= t) for the Bayes probe: closed form for Gaussian noise,
    Monte Carlo (with a 95% binomial band) otherwise."""
    from .probe import margin_samples

    t = np.asarray(t_grid, dtype=float)
    if cfg.family == "gaussian":
        y = gaussian_margin_cdf(cfg, t)
        return ExperimentSeries(t, y, y, y, 0, "margin_cdf_exact")
    m = np.sort(margin_samples(bayes_probe(cfg), sample(cfg, n_mc, task_seed(cfg.seed, _EVAL_KEY))))
    y = np.searchsorted(m, t, side="right") / m.size
    half = 1.96 * np.sqrt(y * (1.0 - y) / m.size)
    return ExperimentSeries(t, y, np.clip(y - half, 0, 1), np.clip(y + half, 0, 1), 1, "margin_cdf_mc")
