"""Command-line front end.

Subcommands: gen-weights, gen-corpus, sweep, adaptive, analyze. Each reads a
JSON experiment config (--config) and accepts the overrides --seed,
--out-dir, --policy, --lambda, --shallow-depth, --max-new. Exit codes:
0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .engine import emit_trace
from .errors import (
    CapacityError,
    ConfigError,
    CorpusParseError,
    CorpusValidationError,
    ParameterError,
    WeightFileError,
)
from .harness import (
    ExperimentConfig,
    config_from_dict,
    make_toy_corpus,
    run_adaptive,
    run_analysis,
    run_sweep,
    save_corpus,
)
from .model import init_weights, save_weights

SWEEP_COLUMNS = [
    "policy",
    "param",
    "rouge_l",
    "exact_match",
    "token_agreement",
    "mean_output_length",
    "sa",
    "ca",
    "ffn",
    "lm_head",
    "weighted_cost",
    "cost_vs_full",
    "cost_vs_never_exit",
    "copied_entries",
]
THRESHOLD_COLUMNS = ["policy", "target_pct", "lambda", "rouge_l", "full_rouge_l"]
ADAPTIVE_COLUMNS = ["sentence", "record_id", "lambda"]

_EPILOG = (
    "CSV column order is fixed: sweep_results.csv has "
    + ", ".join(SWEEP_COLUMNS)
    + "; quality_thresholds.csv has "
    + ", ".join(THRESHOLD_COLUMNS)
    + "; adaptive_lambda.csv has "
    + ", ".join(ADAPTIVE_COLUMNS)
    + ". The FREE_DECODE_THREADS environment variable caps concurrent decode sessions."
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def _load_config(path: str, args: argparse.Namespace) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    config = config_from_dict(raw)

    model = config.model
    if args.seed is not None:
        config.seed = args.seed
        model = dataclasses.replace(model, seed=args.seed)
    if args.shallow_depth is not None:
        model = dataclasses.replace(model, shallow_depth=args.shallow_depth)
    config.model = model
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.max_new is not None:
        config.max_new = args.max_new
    if args.policy is not None:
        config.policies = [p for p in config.policies if p.kind == args.policy]
        if not config.policies:
            raise ConfigError(f"config has no policy of kind {args.policy!r}")
    if args.threshold is not None:
        replaced = []
        seen = set()
        for p in config.policies:
            if p.kind in ("conventional", "shallow_deep"):
                if p.kind not in seen:
                    replaced.append(dataclasses.replace(p, threshold=args.threshold))
                    seen.add(p.kind)
            else:
                replaced.append(p)
        config.policies = replaced
    return config


def _ensure_out_dir(config: ExperimentConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


def cmd_gen_weights(config: ExperimentConfig) -> int:
    out = _ensure_out_dir(config)
    weights = init_weights(config.model)
    path = os.path.join(out, "weights.bin")
    save_weights(weights, path)
    print(f"wrote {path} (checksum {weights.checksum():#010x})")
    return 0


def cmd_gen_corpus(config: ExperimentConfig) -> int:
    out = _ensure_out_dir(config)
    weights = config.load_weights()
    corpus = make_toy_corpus(
        weights, config.model, config.seed, config.corpus_size, config.max_new, config.eos_id
    )
    path = os.path.join(out, "corpus.jsonl")
    save_corpus(corpus, path)
    print(f"wrote {path} ({len(corpus)} records)")
    return 0


def cmd_sweep(config: ExperimentConfig) -> int:
    out = _ensure_out_dir(config)
    result = run_sweep(config)
    results_path = os.path.join(out, "sweep_results.csv")
    write_csv(results_path, SWEEP_COLUMNS, result.rows)
    write_csv(
        os.path.join(out, "quality_thresholds.csv"), THRESHOLD_COLUMNS, result.quality_thresholds
    )
    with open(os.path.join(out, "traces.jsonl"), "w", encoding="utf-8") as fh:
        for trace in result.traces:
            emit_trace(trace, fh)
    print(f"wrote {results_path} ({len(result.rows)} rows)")
    return 0


def cmd_adaptive(config: ExperimentConfig) -> int:
    out = _ensure_out_dir(config)
    result = run_adaptive(config)
    write_csv(os.path.join(out, "adaptive_lambda.csv"), ADAPTIVE_COLUMNS, result.trajectory)
    report = {
        "final_lambda": result.final_threshold,
        "calibration_sentences": result.calibration_sentences,
        "calibration_samples": result.calibration_samples,
        "quality": result.quality_row,
    }
    with open(os.path.join(out, "adaptive_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "estimator.txt"), "w", encoding="utf-8") as fh:
        fh.write(result.estimator_dump + "\n")
    with open(os.path.join(out, "adaptive_traces.jsonl"), "w", encoding="utf-8") as fh:
        for trace in result.traces:
            emit_trace(trace, fh)
    print(f"final lambda {result.final_threshold:.3f} after {result.calibration_sentences} sentences")
    return 0


def cmd_analyze(config: ExperimentConfig) -> int:
    out = _ensure_out_dir(config)
    report = run_analysis(config)
    for name, sub in report.items():
        path = os.path.join(out, f"analysis_{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(sub, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "gen-weights": cmd_gen_weights,
    "gen-corpus": cmd_gen_corpus,
    "sweep": cmd_sweep,
    "adaptive": cmd_adaptive,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exitlab",
        description="Early-exit decoding experiments on a toy transformer.",
        epilog=_EPILOG,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog=_EPILOG)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override experiment and model seed")
        p.add_argument("--out-dir", default=None, help="override output directory")
        p.add_argument("--policy", default=None, help="restrict to one policy kind")
        p.add_argument(
            "--lambda",
            dest="threshold",
            type=float,
            default=None,
            help="replace threshold grids with a single value",
        )
        p.add_argument(
            "--shallow-depth", type=int, default=None, help="override the shallow model depth"
        )
        p.add_argument("--max-new", type=int, default=None, help="override max new tokens")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config, args)
        return COMMANDS[args.command](config)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CorpusParseError, CorpusValidationError, WeightFileError, CapacityError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
