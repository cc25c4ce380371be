"""Command-line entry point.

    sipcheck diagnose --input feats.csv --k 2 --report out.json
    sipcheck experiment scaling --config scaling.toml --out-dir runs/scaling
    sipcheck generate --config gauss.toml --n 500 --out feats.f32bin

Exit codes: 0 stability check passed, 1 failed, 2 usage / input / format error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats, synthetic
from .errors import ConfigError, SipError, UsageError
from .pipeline import diagnose, emit_report, report_dict

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
EXPERIMENTS = ("subspace", "phase", "clipping", "scaling", "margins")

_MODEL_KEYS = {"family", "d", "k", "mean_scale", "scale_spectrum", "nu", "seed"}

# per-experiment defaults; model keys override the SyntheticConfig defaults
_DEFAULTS = {
    "subspace": {"mean_scale": 1.5, "seeds": 100, "n_grid": list(synthetic.DEFAULT_N_GRID)},
    "phase": {
        "seeds": 100, "n_grid": list(synthetic.PHASE_N_GRID), "calibrate": True,
        "n_target": synthetic.PHASE_TARGET_N, "delta_conf": 0.1, "n_eval": synthetic.DEFAULT_EVAL_SIZE,
    },
    "clipping": {
        "family": "student_t", "nu": 3.0, "mean_scale": 1.5, "seeds": 100,
        "q_grid": list(synthetic.CLIP_Q_GRID), "n": synthetic.PHASE_TARGET_N,
        "clip_mode": "norm_clip", "n_splits": 8,
    },
    "scaling": {"seeds": 100, "n_grid": list(synthetic.SCALING_N_GRID)},
    "margins": {"t_grid": [round(0.1 * i, 10) for i in range(31)], "n_mc": 100_000},
    "generate": {},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sipcheck", description="Spectral stability diagnostics for learned representations.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("diagnose", help="run the stability check on a feature file")
    p.add_argument("--input", required=True, help="feature file (csv or f32bin)")
    p.add_argument("--format", choices=formats.FORMATS, default=None, help="input format (default: from extension)")
    p.add_argument("--k", type=int, required=True, help="subspace rank")
    clip = p.add_mutually_exclusive_group()
    clip.add_argument("--clip-quantile", type=float, default=None, help="clip rows at this quantile")
    clip.add_argument("--auto-clip", action="store_true", help="sweep clipping quantiles when tails are heavy")
    p.add_argument("--clip-mode", choices=("norm_clip", "winsorize"), default="norm_clip")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--splits", type=int, default=8, help="split-half repetitions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta-conf", type=float, default=0.1, help="failure probability for the concentration bound")
    p.add_argument("--layer-tag", default="", help="free-form label copied into the report")
    p.add_argument("--report", default=None, help="write the JSON report here (default: stdout)")
    p.add_argument("--series-dir", default=None, help="write spectrum / sweep CSVs here")

    p = sub.add_parser("experiment", help="run a synthetic experiment")
    p.add_argument("name", help="one of: " + ", ".join(EXPERIMENTS))
    p.add_argument("--config", default=None, help="key = value config file (TOML)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("generate", help="export a synthetic feature file")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=formats.FORMATS, default=None)
    return parser


def _infer_format(path: str, fmt: Optional[str]) -> str:
    if fmt:
        return fmt
    return "csv" if Path(path).suffix.lower() == ".csv" else "f32bin"


def resolve_config(name: str, raw: Optional[dict] = None):
    """Merge a parsed config with defaults. Returns ``(SyntheticConfig, options)``."""
    if name not in _DEFAULTS:
        raise UsageError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    merged = dict(_DEFAULTS[name])
    merged.update(raw or {})
    allowed = _MODEL_KEYS | set(_DEFAULTS[name])
    unknown = sorted(set(merged) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {name}: {unknown}")
    model = {k: merged.pop(k) for k in list(merged) if k in _MODEL_KEYS}
    for key in ("d", "k", "seed"):
        if key in model and (not isinstance(model[key], int) or isinstance(model[key], bool)):
            raise ConfigError(f"{key} must be an integer")
    try:
        cfg = synthetic.SyntheticConfig(**model)
    except (TypeError, ValueError, SipError) as e:
        raise ConfigError(f"invalid model config: {e}") from None
    for key in ("seeds", "n", "n_target", "n_eval", "n_splits", "n_mc"):
        if key in merged and (not isinstance(merged[key], int) or isinstance(merged[key], bool) or merged[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")
    for key in ("n_grid", "q_grid", "t_grid"):
        if key in merged:
            g = merged[key]
            if not isinstance(g, list) or not g or not all(isinstance(v, (int, float)) for v in g):
                raise ConfigError(f"{key} must be a non-empty list of numbers")
    if "n_grid" in merged and not all(isinstance(v, int) and v >= 1 for v in merged["n_grid"]):
        raise ConfigError("n_grid entries must be positive integers")
    if "q_grid" in merged and not all(0 < v <= 1 for v in merged["q_grid"]):
        raise ConfigError("q_grid entries must lie in (0, 1]")
    return cfg, merged


def _config_record(cfg: synthetic.SyntheticConfig, opts: dict) -> dict:
    rec = {
        "family": cfg.family, "d": cfg.d, "k": cfg.k, "mean_scale": cfg.mean_scale,
        "scale_spectrum": list(cfg.scale_spectrum), "nu": cfg.nu, "seed": cfg.seed,
    }
    rec.update(opts)
    return rec


def run_experiment(name: str, cfg: synthetic.SyntheticConfig, opts: dict, out_dir) -> dict:
    """Run one experiment, write its series and manifest, return the manifest."""
    out = Path(out_dir)
    series, stats = {}, {}
    if name == "subspace":
        r = synthetic.run_subspace_experiment(cfg, opts["n_grid"], opts["seeds"])
        series = {"sin_theta_vs_ratio": r.scatter, "sin_theta_vs_n": r.sin_by_n, "ratio_vs_n": r.ratio_by_n}
        stats = {"points": len(r.scatter), "violations": r.violations}
    elif name == "phase":
        if opts["calibrate"]:
            cfg = synthetic.calibrate_phase_config(cfg, opts["n_target"], opts["delta_conf"])
        r = synthetic.run_phase_experiment(cfg, opts["n_grid"], opts["seeds"], opts["n_eval"])
        series = {"risk_vs_n": r.risk, "ratio_vs_n": r.ratio}
        stats = {"knee": r.knee, "gap": r.gap, "mean_scale": cfg.mean_scale}
    elif name == "clipping":
        r = synthetic.run_clipping_sweep(cfg, opts["q_grid"], opts["n"], opts["seeds"], opts["clip_mode"], opts["n_splits"])
        series = {"ratio_vs_q": r.ratio, "sin_theta_vs_q": r.sin_theta}
        q25, q75 = np.percentile(r.per_seed_argmin, [25, 75])
        stats = {"q_star": r.q_star, "argmin_iqr_steps": float(q75 - q25)}
    elif name == "scaling":
        r = synthetic.run_scaling_experiment(cfg, opts["n_grid"], opts["seeds"])
        series = {"delta_vs_n": r.series}
        stats = {"slope": r.slope}
    elif name == "margins":
        series = {"margin_cdf": synthetic.margin_tail_curve(cfg, opts["t_grid"], opts["n_mc"])}
    else:
        raise UsageError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    files = [formats.write_series(s, out, key) for key, s in series.items()]
    manifest = {"experiment": name, "config": _config_record(cfg, opts), "series": files, "stats": stats}
    warnings: list = []
    manifest = formats.sanitize(manifest, warnings)
    if warnings:
        manifest["warnings"] = warnings
    formats.write_text(out / "manifest.json", formats.dumps_json(manifest))
    return manifest


def _cmd_diagnose(args) -> int:
    fmt = _infer_format(args.input, args.format)
    f = formats.ingest_features(args.input, fmt)
    result = diagnose(
        f, args.k,
        clip_quantile=args.clip_quantile, auto_clip=args.auto_clip, clip_mode=args.clip_mode,
        ridge=args.ridge, splits=args.splits, seed=args.seed,
        delta_conf=args.delta_conf, layer_tag=args.layer_tag,
    )
    rep = result.report
    if args.series_dir:
        formats.write_series(result.spectrum, args.series_dir, "spectrum")
        if result.clip_sweep is not None:
            formats.write_series(result.clip_sweep, args.series_dir, "clip_sweep")
    if args.report:
        emit_report(rep, args.report)
        status = "PASS" if rep.verdict.passed else "FAIL"
        print(f"{status}: delta_hat={rep.delta_hat:.6g} gap_hat={rep.gap_hat:.6g} ratio={rep.ratio:.6g}")
    else:
        sys.stdout.write(formats.dumps_json(report_dict(rep)))
    return EXIT_PASS if rep.verdict.passed else EXIT_FAIL


def _load(path: Optional[str]) -> dict:
    return formats.load_config(path) if path else {}


def _cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; expected one of {EXPERIMENTS}")
    cfg, opts = resolve_config(args.name, _load(args.config))
    manifest = run_experiment(args.name, cfg, opts, args.out_dir)
    print(f"{args.name}: wrote {len(manifest['series'])} series to {args.out_dir}")
    return EXIT_PASS


def _cmd_generate(args) -> int:
    cfg, _ = resolve_config("generate", _load(args.config))
    f = synthetic.sample(cfg, args.n, args.seed)
    formats.export_features(f, args.out, _infer_format(args.out, args.format))
    return EXIT_PASS


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"diagnose": _cmd_diagnose, "experiment": _cmd_experiment, "generate": _cmd_generate}[args.command]
    try:
        return handler(args)
    except SipError as e:
        print(f"sipcheck: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
