"""The end-to-end diagnose pipeline and its JSON report."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import formats
from .diagnostics import (
    MIN_MARGIN_SAMPLES,
    MIN_TAIL_SAMPLES,
    MarginFit,
    SipVerdict,
    TailReport,
    bernstein_bound,
    estimate_concentration_params,
    estimate_kappa,
    heavy_tail_check,
    risk_bound,
    sample_complexity,
    sip_verdict,
)
from .errors import DegenerateLabels, DegenerateMargins, InvalidRank, SingularScatter, SipError, TooFewSamples
from .fisher import (
    FeatureMatrix,
    FisherEstimate,
    clip_features,
    empirical_fisher,
    eigengap,
    ridge_regularize,
    split_half_delta,
)
from .probe import DEFAULT_RIDGE, classify, fit_direction, margin_samples
from .spectral import (
    DEGENERATE_GAP_TOL,
    Subspace,
    eigh,
    randomized_eigh,
    top_k_subspace,
)
from .synthetic import CLIP_Q_GRID, ExperimentSeries, sweet_spot

__all__ = ["SipReport", "DiagnoseResult", "diagnose", "report_dict", "emit_report", "RANDOMIZED_THRESHOLD"]

RANDOMIZED_THRESHOLD = 512
N_FOLDS = 5


@dataclass(frozen=True)
class SipReport:
    layer_tag: str
    d: int
    k: int
    n: int
    q_star: Optional[float]
    ridge: float
    gap_hat: float
    delta_hat: float
    ratio: float
    verdict: SipVerdict
    kappa_hat: Optional[MarginFit]
    tail: TailReport
    n_min: dict
    bernstein_t: float
    risk_bound: Optional[float]
    probe_accuracy: Optional[float]
    warnings: tuple = ()


@dataclass(frozen=True)
class DiagnoseResult:
    report: SipReport
    spectrum: ExperimentSeries
    clip_sweep: Optional[ExperimentSeries] = None


@contextmanager
def _step(n: int):
    """Re-raise package errors with the pipeline step that produced them."""
    try:
        yield
    except SipError as e:
        if str(e).startswith("step "):
            raise
        raise type(e)(f"step {n}: {type(e).__name__}: {e}") from e


def _decompose(op, k: int, seed: int):
    """Full spectrum for moderate d, top k+1 eigenpairs by randomized range otherwise."""
    d = op.dim
    if d <= RANDOMIZED_THRESHOLD:
        dec = eigh(op)
        return dec, top_k_subspace(dec, k), eigengap(dec, k), dec.eigenvalues
    vals, vecs = randomized_eigh(op, k + 1, seed=seed)
    gap = max(0.0, float(vals[k - 1] - vals[k]))
    warn = ()
    if gap <= DEGENERATE_GAP_TOL * max(1.0, abs(vals[0])):
        warn = (f"DegenerateGap: lambda_{k} - lambda_{k + 1} = {gap:.3g}",)
    return None, Subspace(vecs[:, :k], warn), gap, vals


def _ratio(delta: float, gap: float) -> float:
    return delta / gap if gap > 0 else math.inf


def _clip_sweep(f: FeatureMatrix, k: int, mode: str, splits: int, seed: int) -> ExperimentSeries:
    means, los, his = [], [], []
    for q in CLIP_Q_GRID:
        clipped, _ = clip_features(f, q, mode)
        _, _, gap, _ = _decompose(empirical_fisher(clipped).operator, k, seed)
        per = np.asarray(split_half_delta(clipped, splits, seed).per_split)
        r = per / gap if gap > 0 else np.full(per.shape, math.inf)
        means.append(float(r.mean()))
        los.append(float(r.min()))
        his.append(float(r.max()))
    return ExperimentSeries(CLIP_Q_GRID, means, los, his, splits, "ratio_vs_q")


def _probe_accuracy(f: FeatureMatrix, k: int, ridge: float) -> float:
    """Held-out accuracy over a fixed 5-fold split (fold = row index mod 5)."""
    fold = np.arange(f.n) % N_FOLDS
    correct = 0
    for j in range(N_FOLDS):
        train, test = f.take(fold != j), f.take(fold == j)
        sub = top_k_subspace(eigh(empirical_fisher(train).operator), k)
        p = fit_direction(train, sub, ridge)
        correct += int(np.sum(classify(p, test) == test.labels))
    return correct / f.n


def diagnose(
    f: FeatureMatrix,
    k: int,
    clip_quantile: Optional[float] = None,
    auto_clip: bool = False,
    clip_mode: str = "norm_clip",
    ridge: float = 0.0,
    splits: int = 8,
    seed: int = 0,
    delta_conf: float = 0.1,
    layer_tag: str = "",
) -> DiagnoseResult:
    """Run the stability diagnostic on one feature matrix.

    Steps: 1 tail check, 2 clipping, 3 Fisher estimate and spectrum, 4 gap,
    5 split-half error, 6 verdict, 7 clipping sweep (inside step 2 when
    auto-clipping), 8 sample complexity and margin analysis, 9 report.
    """
    warnings: list[str] = []
    if not 1 <= k < f.d:
        raise InvalidRank(f"step 0: InvalidRank: need 1 <= k < d={f.d}, got k={k}")
    if f.n < 4:
        raise TooFewSamples(f"step 0: TooFewSamples: need n >= 4, got {f.n}")

    with _step(1):
        if f.n >= MIN_TAIL_SAMPLES:
            tail = heavy_tail_check(f)
        else:
            tail = TailReport(math.nan, math.nan, False)
            warnings.append(f"tail check skipped: needs n >= {MIN_TAIL_SAMPLES}")

    sweep = None
    q_star = None
    with _step(2):
        if clip_quantile is not None:
            q_star = float(clip_quantile)
        elif auto_clip and tail.heavy:
            with _step(7):
                sweep = _clip_sweep(f, k, clip_mode, splits, seed)
                q_star, _ = sweet_spot(sweep)
        if q_star is not None:
            work, radius = clip_features(f, q_star, clip_mode)
        else:
            work, radius = f, None

    with _step(3):
        est = empirical_fisher(work, clip_radius=radius)
        op = ridge_regularize(est.operator, ridge)
        est = FisherEstimate(op, est.n_used, radius, ridge)
        _, sub, gap, spectrum = _decompose(op, k, seed)

    with _step(4):
        warnings.extend(sub.warnings)

    with _step(5):
        delta = split_half_delta(work, splits, seed).value

    with _step(6):
        verdict = sip_verdict(delta, gap)

    with _step(8):
        params = estimate_concentration_params(work, est, delta_conf)
        if params.degenerate:
            warnings.append("concentration bound R is zero; floored")
        bern = bernstein_bound(params, work.n)
        n_min = {"n_var": None, "n_gap": None, "n_min": None, "empirical_n_min": None}
        if gap > 0 and params.v > 0:
            sc = sample_complexity(gap, params)
            n_min = {"n_var": sc.n_var, "n_gap": sc.n_gap, "n_min": sc.n_min, "empirical_n_min": sc.empirical_n_min}
            if sc.empirical_n_min is None:
                warnings.append("empirical n_min exceeds the search budget")
        else:
            warnings.append("sample complexity undefined: gap or variance proxy is zero")

        kappa = risk = acc = None
        if work.labels is not None:
            p_ridge = max(ridge, DEFAULT_RIDGE)
            b = radius if radius is not None else float(np.linalg.norm(work.rows, axis=1).max())
            try:
                probe = fit_direction(work, sub, p_ridge)
                if work.n >= MIN_MARGIN_SAMPLES:
                    try:
                        kappa = estimate_kappa(margin_samples(probe, work))
                    except DegenerateMargins as e:
                        warnings.append(f"margin fit failed: {e}")
                else:
                    warnings.append(f"margin fit skipped: needs n >= {MIN_MARGIN_SAMPLES}")
                if kappa is not None:
                    risk = risk_bound(delta, gap, b, kappa.kappa, kappa.C)
                if work.n >= N_FOLDS * 2:
                    acc = _probe_accuracy(work, k, p_ridge)
            except (DegenerateLabels, SingularScatter) as e:
                warnings.append(f"probe analysis skipped: {type(e).__name__}: {e}")

    report = SipReport(
        layer_tag=layer_tag,
        d=f.d,
        k=k,
        n=f.n,
        q_star=q_star,
        ridge=float(ridge),
        gap_hat=gap,
        delta_hat=delta,
        ratio=_ratio(delta, gap),
        verdict=verdict,
        kappa_hat=kappa,
        tail=tail,
        n_min=n_min,
        bernstein_t=bern,
        risk_bound=risk,
        probe_accuracy=acc,
        warnings=tuple(warnings),
    )
    idx = np.arange(1, len(spectrum) + 1)
    spec_series = ExperimentSeries(idx, spectrum, spectrum, spectrum, 1, "spectrum")
    return DiagnoseResult(report, spec_series, sweep)


def report_dict(report: SipReport) -> dict:
    """Report as an ordered, JSON-ready mapping. Non-finite values become null
    and are noted under ``warnings``."""
    v = report.verdict
    kap = report.kappa_hat
    body = {
        "layer_tag": report.layer_tag,
        "d": report.d,
        "k": report.k,
        "n": report.n,
        "q_star": report.q_star,
        "ridge": report.ridge,
        "gap_hat": report.gap_hat,
        "delta_hat": report.delta_hat,
        "ratio": report.ratio,
        "verdict": {"delta": v.delta, "gap": v.gap, "ratio": v.ratio, "passed": v.passed},
        "kappa_hat": None if kap is None else {
            "kappa": kap.kappa, "C": kap.C, "fit_range": list(kap.fit_range), "r_squared": kap.r_squared,
        },
        "tail": {
            "kurtosis": report.tail.kurtosis,
            "hill_index": report.tail.hill_index,
            "heavy": report.tail.heavy,
            "kurt_threshold": report.tail.kurt_threshold,
        },
        "n_min": dict(report.n_min),
        "bernstein_t": report.bernstein_t,
        "risk_bound": report.risk_bound,
        "probe_accuracy": report.probe_accuracy,
    }
    warnings = list(report.warnings)
    body = formats.sanitize(body, warnings)
    body["warnings"] = warnings
    return body


def emit_report(report: SipReport, path) -> None:
    formats.write_text(path, formats.dumps_json(report_dict(report)))
