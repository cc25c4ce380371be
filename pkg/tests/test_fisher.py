import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sipcheck.errors import (
    InvalidInput,
    InvalidQuantile,
    InvalidRank,
    InvalidRidge,
    LabelError,
    ShapeError,
    TooFewSamples,
)
from sipcheck.fisher import (
    FeatureMatrix,
    FisherEstimate,
    clip_features,
    eigengap,
    empirical_fisher,
    exact_delta,
    quantile,
    ridge_regularize,
    split_half_delta,
)
from sipcheck.spectral import SymmetricOperator, eigh
from sipcheck.synthetic import SyntheticConfig, population_fisher, sample


def fm(rows, labels=None):
    return FeatureMatrix(np.asarray(rows, dtype=float), labels)


# ---------------------------------------------------------------- types

def test_feature_matrix_validation():
    with pytest.raises(ShapeError):
        fm([[1.0]])
    with pytest.raises(ShapeError):
        fm([1.0, 2.0])
    with pytest.raises(InvalidInput):
        fm([[1.0, np.nan]])
    with pytest.raises(LabelError):
        fm([[1.0, 0.0]], [0])
    with pytest.raises(ShapeError):
        fm([[1.0, 0.0]], [1, -1])
    f = fm([[1.0, 0.0], [0.0, 1.0]], [1, -1])
    assert (f.n, f.d) == (2, 2)
    assert f.labels.dtype == np.int8


def test_fisher_estimate_rejects_non_psd():
    with pytest.raises(InvalidInput):
        FisherEstimate(SymmetricOperator(np.diag([1.0, -0.1])), n_used=1)
    with pytest.raises(InvalidRidge):
        FisherEstimate(SymmetricOperator(np.eye(2)), n_used=1, ridge=-1.0)


# ---------------------------------------------------------- empirical_fisher

def test_empirical_fisher_examples():
    assert np.array_equal(empirical_fisher(fm([[1, 0]])).matrix, [[1, 0], [0, 0]])
    assert np.allclose(empirical_fisher(fm([[1, 0], [0, 1]])).matrix, 0.5 * np.eye(2))


def test_empirical_fisher_outer_product_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    oracle = sum(np.outer(r, r) for r in x) / 5
    est = empirical_fisher(fm(x))
    assert np.allclose(est.matrix, oracle, atol=1e-14)
    assert est.n_used == 5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(2, 8), st.integers(0, 10_000))
def test_empirical_fisher_psd_and_permutation_invariant(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) * rng.exponential(size=d)
    a = empirical_fisher(fm(x)).matrix
    b = empirical_fisher(fm(x[rng.permutation(n)])).matrix
    assert np.allclose(a, b, atol=1e-12 * max(1.0, np.abs(a).max()))
    lam = np.linalg.eigvalsh(a)
    assert lam[0] >= -1e-10 * max(lam[-1], 1e-300)


# ------------------------------------------------------------- clipping

def test_quantile_is_linear_interpolation():
    assert quantile([1.0, 2.0, 10.0], 0.5) == 2.0
    assert quantile([1.0, 2.0, 10.0], 0.75) == 6.0


def test_clip_noop_at_q_one():
    rng = np.random.default_rng(1)
    f = fm(rng.standard_normal((20, 3)))
    out, b = clip_features(f, 1.0)
    assert np.array_equal(out.rows, f.rows)
    assert b == pytest.approx(np.linalg.norm(f.rows, axis=1).max())


def test_clip_equal_norms_unchanged():
    x = np.array([[3.0, 4.0], [0.0, 5.0], [5.0, 0.0], [-4.0, 3.0]])
    for q in (0.1, 0.5, 0.9):
        out, b = clip_features(fm(x), q)
        assert np.array_equal(out.rows, x)
        assert b == 5.0


def test_clip_hand_computed_quantile():
    x = np.array([[1.0, 0.0], [0.0, 2.0], [6.0, 8.0]])
    out, b = clip_features(fm(x), 0.5)
    assert b == 2.0
    assert np.allclose(out.rows[2], [1.2, 1.6])
    assert np.array_equal(out.rows[:2], x[:2])


@pytest.mark.parametrize("q", [0.0, -0.1, 1.01])
def test_clip_rejects_bad_quantile(q):
    with pytest.raises(InvalidQuantile):
        clip_features(fm([[1, 0], [0, 1]]), q)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 60), st.integers(2, 6), st.floats(0.05, 1.0), st.integers(0, 10_000))
def test_norm_clip_bounds_and_reclip(n, d, q, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(3, size=(n, d))
    out, b = clip_features(fm(x), q)
    assert np.all(np.linalg.norm(out.rows, axis=1) <= b)
    again, b2 = clip_features(out, q)
    # the quantile of the clipped norms can only move down
    assert b2 <= b
    assert np.all(np.linalg.norm(again.rows, axis=1) <= b2)


@pytest.mark.parametrize("n,q", [(11, 0.5), (21, 0.8), (41, 0.75), (101, 0.9)])
def test_norm_clip_idempotent_on_order_statistics(n, q):
    # when (n - 1) q is an integer the quantile is an order statistic, which
    # the clipped sample still contains, so clipping twice equals clipping once
    rng = np.random.default_rng(n)
    out, b = clip_features(fm(rng.standard_t(3, size=(n, 4))), q)
    again, b2 = clip_features(out, q)
    assert b2 == pytest.approx(b, rel=1e-15)
    assert np.allclose(again.rows, out.rows, rtol=1e-14, atol=0)


def test_winsorize_band():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((200, 3))
    out, b = clip_features(fm(x), 0.8, "winsorize")
    lo = np.quantile(x, (1 - 0.8) / 2, axis=0)
    hi = np.quantile(x, (1 + 0.8) / 2, axis=0)
    assert np.all(out.rows >= lo) and np.all(out.rows <= hi)
    assert b == pytest.approx(np.linalg.norm(out.rows, axis=1).max())
    inside = (x >= lo) & (x <= hi)
    assert np.array_equal(out.rows[inside], x[inside])


# ----------------------------------------------------------- split-half

def test_split_half_zero_for_identical_rows():
    f = fm(np.tile([1.0, 2.0, 3.0], (10, 1)), [1, -1] * 5)
    assert split_half_delta(f, 4, seed=1).value == 0.0


def test_split_half_deterministic():
    rng = np.random.default_rng(3)
    f = fm(rng.standard_normal((50, 4)), rng.choice([-1, 1], 50))
    a, b = split_half_delta(f, 8, seed=5), split_half_delta(f, 8, seed=5)
    assert a.per_split == b.per_split
    assert a.value == pytest.approx(np.mean(a.per_split), rel=1e-15)
    assert a.method == "split_half" and a.n_splits == 8


def test_split_half_too_few():
    with pytest.raises(TooFewSamples):
        split_half_delta(fm(np.eye(3)), 2)


def test_split_half_stratified_by_label():
    # class +1 rows are e1, class -1 rows are e2; stratified halves are
    # identical whenever each class has an even count
    x = np.array([[1.0, 0.0]] * 6 + [[0.0, 1.0]] * 4)
    y = np.array([1] * 6 + [-1] * 4)
    assert split_half_delta(fm(x, y), 8, seed=0).value == 0.0
    assert split_half_delta(fm(x), 8, seed=0).value > 0.0


def test_split_half_tracks_true_error():
    cfg = SyntheticConfig("gaussian", d=5, k=1, mean_scale=1.0)
    pop = population_fisher(cfg)
    proxy, truth = [], []
    for s in range(100):
        f = sample(cfg, 200, s)
        proxy.append(split_half_delta(f, 8, seed=s).value)
        truth.append(exact_delta(empirical_fisher(f), pop).value)
    ratio = np.mean(proxy) / np.mean(truth)
    assert 1 / 3 <= ratio <= 3


def test_split_half_shrinks_with_n():
    cfg = SyntheticConfig("gaussian", d=5, k=1)
    small = np.median([split_half_delta(sample(cfg, 400, s), seed=s).value for s in range(30)])
    large = np.median([split_half_delta(sample(cfg, 6400, s), seed=s).value for s in range(30)])
    assert large < small


# -------------------------------------------------------- exact, gap, ridge

def test_exact_delta_examples():
    pop = FisherEstimate(SymmetricOperator(np.diag([2.0, 1.0])), 0)
    assert exact_delta(pop, pop).value == 0.0
    est = FisherEstimate(SymmetricOperator(np.diag([2.5, 1.0])), 10)
    d = exact_delta(est, pop)
    assert d.value == pytest.approx(0.5) and d.method == "exact"
    with pytest.raises(ShapeError):
        exact_delta(est, FisherEstimate(SymmetricOperator(np.eye(3)), 0))


def test_exact_delta_svd_oracle():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 30, 4))
    ea, eb = empirical_fisher(fm(a)), empirical_fisher(fm(b))
    oracle = np.linalg.svd(ea.matrix - eb.matrix, compute_uv=False)[0]
    assert exact_delta(ea, eb).value == pytest.approx(oracle, rel=1e-8)


def test_eigengap_examples():
    assert eigengap(eigh(np.diag([3.0, 1.0])), 1) == 2.0
    assert eigengap(eigh(np.eye(4)), 2) == 0.0
    assert eigengap(eigh(np.diag([5.0, 4.0, 1.0])), 2) == 3.0
    with pytest.raises(InvalidRank):
        eigengap(eigh(np.eye(3)), 3)


def test_ridge_examples():
    m = SymmetricOperator(np.diag([3.0, 1.0]))
    assert ridge_regularize(m, 0.0) is m
    r = ridge_regularize(m, 0.5)
    assert np.array_equal(r.entries, np.diag([3.5, 1.5]))
    assert eigengap(eigh(r), 1) == eigengap(eigh(m), 1)
    with pytest.raises(InvalidRidge):
        ridge_regularize(m, -0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.floats(0.0, 5.0), st.integers(0, 10_000))
def test_ridge_shifts_spectrum(d, rho, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    m = SymmetricOperator(a + a.T)
    before, after = eigh(m), eigh(ridge_regularize(m, rho))
    assert np.allclose(after.eigenvalues, before.eigenvalues + rho, atol=1e-10)
    for k in range(1, d):
        assert eigengap(after, k) == pytest.approx(eigengap(before, k), abs=1e-10)


def test_all_zero_features_have_zero_gap():
    f = fm(np.zeros((10, 3)))
    dec = eigh(empirical_fisher(f).operator)
    assert eigengap(dec, 1) == 0.0
