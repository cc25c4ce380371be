import math

import numpy as np
import pytest
from scipy.special import ndtr

from sipcheck.errors import DegenerateGap, InfiniteVariance, InvalidRank, InvalidSeries
from sipcheck.fisher import clip_features, eigengap, empirical_fisher, exact_delta, split_half_delta
from sipcheck.probe import classify, margin_samples
from sipcheck.spectral import eigh, operator_norm, top_k_subspace
from sipcheck.synthetic import (
    ExperimentSeries,
    SyntheticConfig,
    bayes_probe,
    knee_point,
    margin_tail_curve,
    population_fisher,
    run_clipping_sweep,
    run_phase_experiment,
    run_scaling_experiment,
    run_subspace_experiment,
    sample,
    subspace_point,
    summarize,
    sweet_spot,
    task_seed,
)


def mc_relative_error(cfg, n=1_000_000, seed=0):
    pop = population_fisher(cfg)
    est = empirical_fisher(sample(cfg, n, seed))
    return operator_norm(est.matrix - pop.matrix) / operator_norm(pop.matrix)


# ------------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(InfiniteVariance):
        SyntheticConfig("student_t", nu=2.0)
    with pytest.raises(InfiniteVariance):
        SyntheticConfig("student_t")
    with pytest.raises(InvalidRank):
        SyntheticConfig(d=3, k=3)
    with pytest.raises(ValueError):
        SyntheticConfig(d=3, scale_spectrum=(1.0, 2.0, 0.5))
    with pytest.raises(ValueError):
        SyntheticConfig(d=3, scale_spectrum=(1.0, 1.0))
    with pytest.raises(ValueError):
        SyntheticConfig(family="laplace")
    assert SyntheticConfig(d=4).scale_spectrum == (1.0,) * 4


# ------------------------------------------------------- population Fisher

def test_population_no_signal():
    cfg = SyntheticConfig(d=3, mean_scale=0.0, scale_spectrum=(2.0, 1.0, 0.5))
    assert np.array_equal(population_fisher(cfg).matrix, np.diag([2.0, 1.0, 0.5]))
    assert population_fisher(cfg).n_used == 0


def test_population_gaussian_example():
    cfg = SyntheticConfig(d=2, mean_scale=1.0, scale_spectrum=(0.5, 0.25))
    pop = population_fisher(cfg)
    assert np.allclose(pop.matrix, np.diag([1.5, 0.25]))
    assert eigengap(eigh(pop.operator), 1) == pytest.approx(1.25)
    assert mc_relative_error(cfg) < 0.01


def test_population_student_t_example():
    cfg = SyntheticConfig("student_t", d=3, mean_scale=1.0, nu=4.0)
    pop = population_fisher(cfg)
    assert np.allclose(pop.matrix, np.outer(cfg.mean, cfg.mean) + 2 * np.eye(3))
    assert mc_relative_error(cfg, seed=1) < 0.01


# ------------------------------------------------------------------ sample

def test_sample_deterministic():
    cfg = SyntheticConfig("student_t", d=4, nu=3.0, seed=9)
    a, b = sample(cfg, 50), sample(cfg, 50)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(sample(cfg, 50, 1).rows, a.rows)
    with pytest.raises(ValueError):
        sample(cfg, 0)


def test_sample_mean_and_balance():
    cfg = SyntheticConfig(d=3, mean_scale=0.7, scale_spectrum=(1.0, 0.5, 0.25))
    n = 1_000_000
    f = sample(cfg, n, 3)
    hy = f.rows * f.labels[:, None]
    se = hy.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(hy.mean(axis=0) - cfg.mean) <= 3 * se)
    assert abs(np.sum(f.labels == 1) - n / 2) <= 3 * math.sqrt(n)


def test_task_seed_pure():
    a = np.random.default_rng(task_seed(1, 2, 3)).random()
    b = np.random.default_rng(task_seed(1, 2, 3)).random()
    c = np.random.default_rng(task_seed(1, 3, 2)).random()
    assert a == b != c


# -------------------------------------------------------------- Bayes probe

def test_bayes_probe_axis_aligned():
    cfg = SyntheticConfig(d=4, mean_scale=2.0, scale_spectrum=(1.0, 0.5, 0.5, 0.25))
    p = bayes_probe(cfg)
    assert np.allclose(p.weights, [1, 0, 0, 0], atol=1e-12)
    assert p.direction[0] == pytest.approx(1.0) and p.bias == 0.0


def test_bayes_probe_scale_invariance():
    base = SyntheticConfig(d=3, k=2, mean_scale=0.5, scale_spectrum=(3.0, 2.0, 1.0))
    scaled = base.replace(scale_spectrum=tuple(4.0 * s for s in base.scale_spectrum), mean_scale=1.0)
    x = np.random.default_rng(0).standard_normal((200, 3)) * 2
    assert np.array_equal(classify(bayes_probe(base), x), classify(bayes_probe(scaled), x))


def test_bayes_probe_matches_grid_search():
    # k = 2 subspace; the Gaussian risk of sign(a^T U^T h) has the closed form
    # Phi(-a^T U^T mu / sqrt(a^T U^T Sigma U a))
    cfg = SyntheticConfig(d=3, k=2, mean_scale=1.2, scale_spectrum=(1.0, 0.8, 0.3))
    p = bayes_probe(cfg)
    u = p.subspace.basis
    sig = np.diag(cfg.scale_spectrum)
    angles = np.linspace(0, 2 * np.pi, 20_001)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    w = dirs @ u.T
    risk = ndtr(-(w @ cfg.mean) / np.sqrt(np.einsum("ij,jk,ik->i", w, sig, w)))
    best = dirs[np.argmin(risk)]
    assert abs(best @ p.direction) == pytest.approx(1.0, abs=1e-6)


def test_bayes_probe_degenerate_gap():
    with pytest.raises(DegenerateGap):
        bayes_probe(SyntheticConfig(d=3, mean_scale=0.0))


# ---------------------------------------------------------- series helpers

def test_series_invariants():
    with pytest.raises(InvalidSeries):
        ExperimentSeries([1, 2], [1, 2, 3], [1, 2, 3], [1, 2, 3], 1)
    s = summarize([1, 2], np.random.default_rng(0).random((2, 30)))
    assert np.all(s.y_lo <= s.y_mean) and np.all(s.y_mean <= s.y_hi)
    assert s.n_seeds == 30


def test_sweet_spot_examples():
    s = ExperimentSeries([0.4, 0.7, 0.9], [3, 1, 2], [3, 1, 2], [3, 1, 2], 1)
    assert sweet_spot(s)[0] == 0.7
    flat = ExperimentSeries([0.4, 0.7, 0.9], [1, 1, 1], [1, 1, 1], [1, 1, 1], 1)
    assert sweet_spot(flat)[0] == 0.4
    with pytest.raises(InvalidSeries):
        sweet_spot(ExperimentSeries([], [], [], [], 0))
    with pytest.raises(InvalidSeries):
        sweet_spot(ExperimentSeries([0.1, 0.2], [1, 2], [1, 2], [1, 2], 1))


def test_knee_point():
    x = np.arange(1, 11, dtype=float)
    y = np.exp(-x)  # sharp elbow near the left end
    # normalized chord distances peak at x = 3 (0.643 vs 0.521 at x = 2)
    assert knee_point(x, y) == 3.0
    with pytest.raises(InvalidSeries):
        knee_point([1, 2], [1, 0])


# ------------------------------------------------------------------ runners

def test_subspace_experiment_below_diagonal():
    cfg = SyntheticConfig("student_t", d=5, k=2, mean_scale=1.25, nu=5.0, scale_spectrum=np.linspace(1, 0.25, 5))
    r = run_subspace_experiment(cfg, (100, 300), seeds=10)
    assert r.violations == 0
    assert np.all(r.scatter.y_mean <= r.scatter.x + 1e-8)
    assert len(r.scatter) == 20


def test_subspace_large_n_near_origin():
    cfg = SyntheticConfig(d=5, mean_scale=1.5)
    r = run_subspace_experiment(cfg, (100_000,), seeds=3)
    assert np.all(r.scatter.x < 0.05) and np.all(r.scatter.y_mean < 0.05)


def test_subspace_zero_delta_injection():
    cfg = SyntheticConfig(d=4, mean_scale=1.0)
    pop = population_fisher(cfg)
    ratio, s = subspace_point(pop, pop, 1)
    assert ratio == 0.0 and s == 0.0


def test_runners_deterministic():
    cfg = SyntheticConfig(d=4, mean_scale=1.0, seed=3)
    a = run_subspace_experiment(cfg, (100, 200), seeds=4)
    b = run_subspace_experiment(cfg, (100, 200), seeds=4)
    assert np.array_equal(a.scatter.x, b.scatter.x)
    assert np.array_equal(a.sin_by_n.y_mean, b.sin_by_n.y_mean)


def test_phase_risk_decreases():
    cfg = SyntheticConfig(d=10, mean_scale=1.0)
    r = run_phase_experiment(cfg, (100, 500, 1000), seeds=100, n_eval=5000)
    assert r.risk.y_mean[-1] < r.risk.y_mean[0]


def test_phase_risk_vanishes_for_large_n():
    cfg = SyntheticConfig(d=5, mean_scale=2.0)
    r = run_phase_experiment(cfg, (100, 1000, 100_000), seeds=5, n_eval=5000)
    assert r.risk.y_mean[-1] < 0.01


def test_clipping_q_one_is_the_unclipped_pipeline():
    cfg = SyntheticConfig("student_t", d=5, mean_scale=1.5, nu=3.0)
    r = run_clipping_sweep(cfg, (0.5, 0.9, 1.0), n=300, seeds=3)
    for si in range(3):
        f = sample(cfg, 300, task_seed(cfg.seed, si))
        clipped, _ = clip_features(f, 1.0)
        assert clipped is f
        dec = eigh(empirical_fisher(f).operator)
        expected = split_half_delta(f, 8, seed=si).value / eigengap(dec, 1)
        assert r.ratio.per_seed[2, si] == expected


def test_clipping_gaussian_flat():
    cfg = SyntheticConfig(d=10, mean_scale=1.5)
    r = run_clipping_sweep(cfg, seeds=40)
    level = r.ratio.y_mean.mean()
    assert (r.ratio.y_mean.max() - r.ratio.y_mean.min()) < 0.15 * level


def test_scaling_homogeneity():
    base = SyntheticConfig(d=4, mean_scale=0.0, scale_spectrum=(1.0, 0.8, 0.5, 0.2))
    twice = base.replace(scale_spectrum=tuple(2 * s for s in base.scale_spectrum))
    grid = (100, 200, 400, 800, 1600)
    a = run_scaling_experiment(base, grid, seeds=5)
    b = run_scaling_experiment(twice, grid, seeds=5)
    assert np.allclose(b.series.y_mean, 2 * a.series.y_mean, rtol=1e-10)
    assert b.slope == pytest.approx(a.slope, abs=1e-10)
    with pytest.raises(InvalidSeries):
        run_scaling_experiment(base, (100, 200, 400), seeds=2)


# ----------------------------------------------------------------- margins

def test_margin_curve_at_zero():
    g = SyntheticConfig(d=4, mean_scale=1.0)
    t = SyntheticConfig("student_t", d=4, mean_scale=1.0, nu=3.0)
    assert margin_tail_curve(g, [0.0]).y_mean[0] == 0.0
    assert margin_tail_curve(t, [0.0]).y_mean[0] == 0.0


def test_margin_curve_matches_monte_carlo():
    cfg = SyntheticConfig(d=4, mean_scale=1.0, scale_spectrum=(0.8, 0.6, 0.4, 0.2))
    grid = np.linspace(0, 4, 81)
    curve = margin_tail_curve(cfg, grid)
    m = np.sort(margin_samples(bayes_probe(cfg), sample(cfg, 1_000_000, 5)))
    emp = np.searchsorted(m, grid, side="right") / m.size
    assert np.max(np.abs(curve.y_mean - emp)) <= 0.01
    assert np.all(np.diff(curve.y_mean) >= 0)


def test_margin_student_t_heavier_near_zero():
    # Matched noise covariance (Sigma scaled by (nu - 2) / nu). The ordering
    # near zero is set by the noise densities at distance m from the mean;
    # the heavier t tail dominates once m exceeds about 2.8 noise sd.
    nu = 3.0
    g = SyntheticConfig(d=4, mean_scale=3.5)
    t = SyntheticConfig("student_t", d=4, mean_scale=3.5, nu=nu, scale_spectrum=((nu - 2) / nu,) * 4)
    grid = [0.05, 0.1, 0.2]
    tc = margin_tail_curve(t, grid)
    gc = margin_tail_curve(g, grid)
    assert np.all(tc.y_lo >= gc.y_mean)
    assert np.all(np.diff(tc.y_mean) >= 0)


def test_margin_student_t_lighter_near_zero_for_weak_signal():
    nu = 3.0
    g = SyntheticConfig(d=4, mean_scale=1.0)
    t = SyntheticConfig("student_t", d=4, mean_scale=1.0, nu=nu, scale_spectrum=((nu - 2) / nu,) * 4)
    grid = [0.05, 0.1, 0.2]
    assert np.all(margin_tail_curve(t, grid).y_hi <= margin_tail_curve(g, grid).y_mean)
