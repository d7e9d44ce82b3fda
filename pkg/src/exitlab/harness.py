"""Experiment harness: corpus ingestion, policy sweeps, adaptive-threshold
runs, and the analysis battery.

Every report row is derived from per-token decode traces, so reports can be
recomputed from the emitted trace files. Identical (config, seed) pairs give
byte-identical result tables; wall-clock times never enter them. Records of a
non-adaptive run may be decoded concurrently (the ``FREE_DECODE_THREADS``
environment variable caps the session count); the adaptive run is an ordered
stream by contract.
"""

from __future__ import annotations

import dataclasses
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import ThresholdEstimator
from .engine import (
    DecodeTrace,
    ExitPolicy,
    decode_full,
    decode_oracle,
    decode_shallow_deep,
    decode_shallow_deep_state_copy,
    run_policy,
)
from .errors import ConfigError, CorpusParseError, CorpusValidationError
from .metrics import (
    CostReport,
    cost_breakdown,
    default_op_weights,
    quality_report,
    rouge_l,
    token_agreement,
)
from .model import (
    HiddenRecord,
    ModelConfig,
    Weights,
    init_weights,
    kd_dyna_map,
    load_weights,
)

THREADS_ENV_VAR = "FREE_DECODE_THREADS"

QUALITY_TARGETS = (99, 95, 90)
ANALYSIS_NAMES = (
    "oracle",
    "static",
    "cost",
    "spd_vs_sc",
    "shallow_depth",
    "calibration_size",
    "kd_map",
)


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    prompt: tuple[int, ...]
    reference: tuple[int, ...]


@dataclass
class Corpus:
    records: list[CorpusRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def prompts(self) -> list[list[int]]:
        return [list(r.prompt) for r in self.records]

    def references(self) -> list[list[int]]:
        return [list(r.reference) for r in self.records]


def _validate_record(record: CorpusRecord, vocab_size: int):
    if not record.prompt:
        raise CorpusValidationError(f"record {record.id!r}: empty prompt")
    for name, ids in (("prompt", record.prompt), ("reference", record.reference)):
        for t in ids:
            if not 0 <= t < vocab_size:
                raise CorpusValidationError(
                    f"record {record.id!r}: {name} token {t} outside vocabulary of {vocab_size}"
                )


def load_corpus(path: str, vocab_size: int) -> Corpus:
    """Parse a line-JSON corpus file and validate ids against the vocabulary."""
    corpus = Corpus()
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                record = CorpusRecord(
                    id=str(raw["id"]),
                    prompt=tuple(int(t) for t in raw["prompt"]),
                    reference=tuple(int(t) for t in raw["reference"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusParseError(line_number, str(exc)) from exc
            _validate_record(record, vocab_size)
            corpus.records.append(record)
    if not corpus.records:
        warnings.warn(f"corpus file {path} is empty", stacklevel=2)
    return corpus


def save_corpus(corpus: Corpus, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            json.dump(
                {"id": r.id, "prompt": list(r.prompt), "reference": list(r.reference)},
                fh,
                separators=(",", ":"),
            )
            fh.write("\n")


def make_toy_corpus(
    weights: Weights,
    config: ModelConfig,
    seed: int,
    size: int,
    max_new: int,
    eos_id: int | None = 0,
    min_prompt: int = 3,
    max_prompt: int = 8,
) -> Corpus:
    """Seeded prompts with references produced by full-depth decoding, so
    quality-versus-full comparisons have signal by construction."""
    if size < 1:
        raise ConfigError("corpus size must be at least 1")
    rng = np.random.default_rng(seed)
    low = 1 if eos_id == 0 else 0
    corpus = Corpus()
    for i in range(size):
        length = int(rng.integers(min_prompt, max_prompt + 1))
        prompt = [int(t) for t in rng.integers(low, config.vocab_size, size=length)]
        reference, _ = decode_full(prompt, weights, config, max_new, eos_id)
        corpus.records.append(
            CorpusRecord(id=f"toy-{i:04d}", prompt=tuple(prompt), reference=tuple(reference))
        )
    return corpus


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass
class EstimatorSettings:
    initial_threshold: float = 0.9
    posterior_condition: float = 0.4
    update_fraction: float = 0.03


@dataclass
class ExperimentConfig:
    """One experiment: a model, a corpus source, policies, and outputs."""

    model: ModelConfig
    policies: list[ExitPolicy]
    max_new: int = 16
    eos_id: int | None = 0
    weights_file: str | None = None
    corpus_path: str | None = None
    corpus_size: int = 32
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    analyses: list[str] = field(default_factory=lambda: list(ANALYSIS_NAMES))
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not self.policies:
            raise ConfigError("at least one policy is required")
        if self.max_new < 1:
            raise ConfigError("max_new must be at least 1")
        if not 0.0 < self.estimator.update_fraction <= 1.0:
            raise ConfigError("estimator update_fraction must be in (0, 1]")
        for name in self.analyses:
            if name not in ANALYSIS_NAMES:
                raise ConfigError(f"unknown analysis {name!r}; known: {ANALYSIS_NAMES}")

    def load_weights(self) -> Weights:
        if self.weights_file is not None:
            return load_weights(self.weights_file)
        return init_weights(self.model)

    def load_corpus(self, weights: Weights) -> Corpus:
        if self.corpus_path is not None:
            return load_corpus(self.corpus_path, self.model.vocab_size)
        return make_toy_corpus(
            weights, self.model, self.seed, self.corpus_size, self.max_new, self.eos_id
        )


def expand_policies(raw_policies: list[dict]) -> list[ExitPolicy]:
    """Expand policy grid entries like {"policy": "static", "k": [2, 4]}."""
    if not raw_policies:
        raise ConfigError("policy list is empty")
    out: list[ExitPolicy] = []
    for entry in raw_policies:
        kind = entry.get("policy")
        if kind == "full":
            out.append(ExitPolicy.full())
        elif kind == "oracle":
            out.append(ExitPolicy.oracle())
        elif kind == "static":
            ks = entry.get("k")
            ks = ks if isinstance(ks, list) else [ks]
            if not ks or any(k is None for k in ks):
                raise ConfigError("static policy needs a 'k' grid")
            out.extend(ExitPolicy.static(int(k)) for k in ks)
        elif kind in ("conventional", "shallow_deep"):
            lams = entry.get("lambda")
            lams = lams if isinstance(lams, list) else [lams]
            if not lams or any(l is None for l in lams):
                raise ConfigError(f"{kind} policy needs a 'lambda' grid")
            maker = ExitPolicy.conventional if kind == "conventional" else ExitPolicy.shallow_deep
            out.extend(maker(float(lam)) for lam in lams)
        else:
            raise ConfigError(f"unknown policy {kind!r}")
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON document."""
    try:
        model_raw = dict(raw["model"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config needs a 'model' object: {exc}") from exc
    if "allowed_exit_layers" in model_raw and model_raw["allowed_exit_layers"] is not None:
        model_raw["allowed_exit_layers"] = tuple(model_raw["allowed_exit_layers"])
    try:
        model = ModelConfig(**model_raw)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}") from exc

    corpus_raw = raw.get("corpus", {})
    est_raw = raw.get("estimator", {})
    try:
        estimator = EstimatorSettings(
            initial_threshold=float(est_raw.get("initial_threshold", 0.9)),
            posterior_condition=float(est_raw.get("posterior_condition", 0.4)),
            update_fraction=float(est_raw.get("update_fraction", 0.03)),
        )
        return ExperimentConfig(
            model=model,
            policies=expand_policies(raw.get("policies", [{"policy": "full"}])),
            max_new=int(raw.get("max_new", 16)),
            eos_id=raw.get("eos_id", 0),
            weights_file=raw.get("weights_file"),
            corpus_path=corpus_raw.get("path"),
            corpus_size=int(corpus_raw.get("size", 32)),
            estimator=estimator,
            analyses=list(raw.get("analyses", ANALYSIS_NAMES)),
            out_dir=str(raw.get("out_dir", "out")),
            seed=int(raw.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad experiment config: {exc}") from exc


# ---------------------------------------------------------------------------
# Decoding over a corpus
# ---------------------------------------------------------------------------


def _thread_count() -> int:
    value = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        return 1


def decode_corpus(
    policy: ExitPolicy,
    corpus: Corpus,
    weights: Weights,
    config: ModelConfig,
    max_new: int,
    eos_id: int | None,
) -> tuple[list[list[int]], list[DecodeTrace], list[dict]]:
    """Decode every record under one policy; results stay in record order."""

    def one(record: CorpusRecord):
        tokens, trace, extras = run_policy(
            policy, list(record.prompt), weights, config, max_new, eos_id
        )
        trace.record_id = record.id
        trace.params = dict(trace.params)
        return tokens, trace, extras

    threads = _thread_count()
    if threads > 1 and policy.adaptive is None:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, corpus.records))
    else:
        results = [one(r) for r in corpus.records]
    outputs = [r[0] for r in results]
    traces = [r[1] for r in results]
    extras = [r[2] for r in results]
    return outputs, traces, extras


# ---------------------------------------------------------------------------
# Policy sweep
# ---------------------------------------------------------------------------


def _policy_param(policy: ExitPolicy) -> float | int | str:
    if policy.kind == "static":
        return policy.depth
    if policy.kind in ("conventional", "shallow_deep") and policy.threshold is not None:
        return policy.threshold
    if policy.adaptive is not None:
        return "adaptive"
    return ""


@dataclass
class SweepResult:
    rows: list[dict]
    quality_thresholds: list[dict]
    traces: list[DecodeTrace]
    baseline_outputs: list[list[int]]
    baseline_cost: CostReport
    never_exit_cost: CostReport


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """Decode the corpus under every policy point and tabulate quality/cost.

    The full-depth baseline is decoded once and cached for the whole sweep.
    Costs are reported under two normalizations: against the plain full
    model, and against the shallow-deep policy run in never-exit mode (same
    layer work as full plus the shallow confidence checks).
    """
    weights = config.load_weights()
    corpus = config.load_corpus(weights)
    profile = default_op_weights(config.model.vocab_size, config.model.d_model)

    full_outputs, full_traces, _ = decode_corpus(
        ExitPolicy.full(), corpus, weights, config.model, config.max_new, config.eos_id
    )
    baseline_cost = cost_breakdown(full_traces, profile)
    never_outputs, never_traces, _ = decode_corpus(
        ExitPolicy.shallow_deep(1.1), corpus, weights, config.model, config.max_new, config.eos_id
    )
    never_exit_cost = cost_breakdown(never_traces, profile, baseline=baseline_cost)

    rows: list[dict] = []
    all_traces: list[DecodeTrace] = []
    by_policy_rouge: dict[str, list[tuple[float, float]]] = {}
    for policy in config.policies:
        if policy.kind == "full":
            outputs, traces = full_outputs, full_traces
        else:
            outputs, traces, _ = decode_corpus(
                policy, corpus, weights, config.model, config.max_new, config.eos_id
            )
        quality = quality_report(outputs, corpus.references(), full_outputs)
        cost = cost_breakdown(traces, profile, baseline=baseline_cost)
        vs_never = cost.weighted / never_exit_cost.weighted if never_exit_cost.weighted else None
        row = {
            "policy": policy.kind,
            "param": _policy_param(policy),
            "rouge_l": quality.rouge_l,
            "exact_match": quality.exact_match,
            "token_agreement": quality.token_agreement,
            "mean_output_length": quality.mean_output_length,
            "sa": cost.sa,
            "ca": cost.ca,
            "ffn": cost.ffn,
            "lm_head": cost.lm_head,
            "weighted_cost": cost.weighted,
            "cost_vs_full": cost.normalized_cost,
            "cost_vs_never_exit": vs_never,
            "copied_entries": sum(t.copied_entries for t in traces),
        }
        rows.append(row)
        all_traces.extend(traces)
        if policy.kind in ("conventional", "shallow_deep") and policy.threshold is not None:
            by_policy_rouge.setdefault(policy.kind, []).append(
                (policy.threshold, quality.rouge_l)
            )

    full_rouge = quality_report(full_outputs, corpus.references()).rouge_l
    thresholds: list[dict] = []
    for kind, pairs in sorted(by_policy_rouge.items()):
        pairs = sorted(pairs)
        for target in QUALITY_TARGETS:
            floor = full_rouge * target / 100.0
            hit = next((lam for lam, r in pairs if r >= floor), None)
            hit_rouge = next((r for lam, r in pairs if r >= floor), None)
            thresholds.append(
                {
                    "policy": kind,
                    "target_pct": target,
                    "lambda": hit,
                    "rouge_l": hit_rouge,
                    "full_rouge_l": full_rouge,
                }
            )

    rows.sort(key=lambda r: (r["policy"], str(r["param"])))
    return SweepResult(
        rows=rows,
        quality_thresholds=thresholds,
        traces=all_traces,
        baseline_outputs=full_outputs,
        baseline_cost=baseline_cost,
        never_exit_cost=never_exit_cost,
    )


# ---------------------------------------------------------------------------
# Adaptive run
# ---------------------------------------------------------------------------


@dataclass
class AdaptiveResult:
    trajectory: list[dict]
    final_threshold: float
    calibration_sentences: int
    calibration_samples: int
    estimator_dump: str
    quality_row: dict
    traces: list[DecodeTrace]


def run_adaptive(config: ExperimentConfig) -> AdaptiveResult:
    """Estimate the exit threshold on the stream's first sentences, then
    decode the remainder with it frozen.

    Calibration sentences use the final buffer flush so every one of their
    tokens contributes a (confidence, agreement) sample; the threshold is
    refit after each sentence and the per-sentence trajectory is recorded.
    """
    weights = config.load_weights()
    corpus = config.load_corpus(weights)
    if len(corpus) == 0:
        raise ConfigError("adaptive run needs a non-empty corpus")
    n_cal = max(1, round(config.estimator.update_fraction * len(corpus)))
    estimator = ThresholdEstimator(
        initial_threshold=config.estimator.initial_threshold,
        zeta=config.estimator.posterior_condition,
        update_limit=n_cal,
    )

    outputs: list[list[int]] = []
    traces: list[DecodeTrace] = []
    trajectory: list[dict] = []
    for index, record in enumerate(corpus.records):
        calibrating = index < n_cal
        tokens, trace, samples = decode_shallow_deep(
            list(record.prompt),
            weights,
            config.model,
            estimator,
            config.max_new,
            config.eos_id,
            calibration_flush=calibrating,
        )
        trace.record_id = record.id
        trace.params = {"lambda": estimator.threshold, "adaptive": True}
        outputs.append(tokens)
        traces.append(trace)
        if calibrating:
            lam = estimator.update(samples)
            trajectory.append({"sentence": index, "record_id": record.id, "lambda": lam})

    profile = default_op_weights(config.model.vocab_size, config.model.d_model)
    full_outputs, full_traces, _ = decode_corpus(
        ExitPolicy.full(), corpus, weights, config.model, config.max_new, config.eos_id
    )
    baseline_cost = cost_breakdown(full_traces, profile)
    quality = quality_report(outputs, corpus.references(), full_outputs)
    # Mixed per-sentence thresholds: normalize the policy label for costing.
    for t in traces:
        t.params = {"adaptive": True}
    cost = cost_breakdown(traces, profile, baseline=baseline_cost)
    quality_row = {
        "policy": "shallow_deep_adaptive",
        "final_lambda": estimator.threshold,
        "rouge_l": quality.rouge_l,
        "exact_match": quality.exact_match,
        "token_agreement": quality.token_agreement,
        "mean_output_length": quality.mean_output_length,
        "sa": cost.sa,
        "ca": cost.ca,
        "ffn": cost.ffn,
        "lm_head": cost.lm_head,
        "cost_vs_full": cost.normalized_cost,
    }
    return AdaptiveResult(
        trajectory=trajectory,
        final_threshold=estimator.threshold,
        calibration_sentences=n_cal,
        calibration_samples=len(estimator.samples),
        estimator_dump=estimator.dump(),
        quality_row=quality_row,
        traces=traces,
    )


# ---------------------------------------------------------------------------
# Analyses
# ---------------------------------------------------------------------------


def simulate_shallow_deep_ops(
    confidences: list[float], threshold: float, num_layers: int, shallow_depth: int
) -> dict:
    """Replay the buffering policy over a fixed confidence sequence.

    Pure arithmetic: exit iff confidence >= threshold, flush on a non-exit.
    Used to check op-count monotonicity without re-decoding.
    """
    pending = 0
    flush_sizes: list[int] = []
    for c in confidences:
        if c >= threshold:
            pending += 1
        else:
            flush_sizes.append(pending + 1)
            pending = 0
    n = len(confidences)
    f = sum(flush_sizes)
    return {
        "sa": n * shallow_depth + f * (num_layers - shallow_depth),
        "lm_head": n + f,
        "flush_sizes": flush_sizes,
    }


def _analysis_oracle(config, weights, corpus, full_outputs) -> dict:
    outputs, traces, extras = decode_corpus(
        ExitPolicy.oracle(), corpus, weights, config.model, config.max_new, config.eos_id
    )
    cosines, exit_layers = [], []
    for e in extras:
        cosines.extend(e["oracle_stats"].cosines)
        exit_layers.extend(e["oracle_stats"].exit_layers)
    histogram = {
        str(layer): exit_layers.count(layer) for layer in range(1, config.model.num_layers + 1)
    }
    quality = quality_report(outputs, corpus.references(), full_outputs)
    full_quality = quality_report(full_outputs, corpus.references())
    return {
        "mean_cosine": float(np.mean(cosines)),
        "mean_exit_layer": float(np.mean(exit_layers)),
        "exit_layer_histogram": histogram,
        "rouge_l": quality.rouge_l,
        "full_rouge_l": full_quality.rouge_l,
        "quality_delta": quality.rouge_l - full_quality.rouge_l,
        "token_agreement_with_full": quality.token_agreement,
        "copied_entries": sum(t.copied_entries for t in traces),
    }


def _analysis_static(config, weights, corpus, full_outputs) -> dict:
    reference_len = float(np.mean([len(r.reference) for r in corpus.records]))
    rows = []
    for depth in range(1, config.model.num_layers + 1):
        outputs, _, _ = decode_corpus(
            ExitPolicy.static(depth), corpus, weights, config.model, config.max_new, config.eos_id
        )
        quality = quality_report(outputs, corpus.references(), full_outputs)
        rows.append(
            {
                "k": depth,
                "rouge_l": quality.rouge_l,
                "mean_output_length": quality.mean_output_length,
                "overlong": quality.mean_output_length > 1.5 * reference_len,
            }
        )
    return {"reference_mean_length": reference_len, "rows": rows}


def _analysis_cost(config, weights, corpus, full_outputs, baseline_cost) -> dict:
    profile = default_op_weights(config.model.vocab_size, config.model.d_model)
    rows = []
    for policy in (
        ExitPolicy.full(),
        ExitPolicy.conventional(0.9),
        ExitPolicy.conventional(0.7),
        ExitPolicy.conventional(0.5),
    ):
        outputs, traces, _ = decode_corpus(
            policy, corpus, weights, config.model, config.max_new, config.eos_id
        )
        cost = cost_breakdown(traces, profile, baseline=baseline_cost)
        quality = quality_report(outputs, corpus.references(), full_outputs)
        rows.append(
            {
                "policy": policy.label(),
                "sa": cost.sa,
                "ca": cost.ca,
                "ffn": cost.ffn,
                "lm_head": cost.lm_head,
                "cost_vs_full": cost.normalized_cost,
                "copied_entries": sum(t.copied_entries for t in traces),
                "rouge_l": quality.rouge_l,
            }
        )
    return {"op_weights": profile, "rows": rows}


def _analysis_spd_vs_sc(config, weights, corpus, full_outputs) -> dict:
    """Parallel deep passes versus state copying on the same two-exit module."""
    rows = []
    for lam in (0.9, 0.7, 0.5, 0.3, 0.1):
        spd_outputs, spd_traces = [], []
        sc_outputs, sc_traces = [], []
        for record in corpus.records:
            tokens, trace, _ = decode_shallow_deep(
                list(record.prompt), weights, config.model, lam, config.max_new, config.eos_id
            )
            spd_outputs.append(tokens)
            spd_traces.append(trace)
            tokens, trace = decode_shallow_deep_state_copy(
                list(record.prompt), weights, config.model, lam, config.max_new, config.eos_id
            )
            sc_outputs.append(tokens)
            sc_traces.append(trace)
        spd_quality = quality_report(spd_outputs, corpus.references(), full_outputs)
        sc_quality = quality_report(sc_outputs, corpus.references(), full_outputs)
        rows.append(
            {
                "lambda": lam,
                "spd_token_agreement": spd_quality.token_agreement,
                "sc_token_agreement": sc_quality.token_agreement,
                "spd_rouge_l": spd_quality.rouge_l,
                "sc_rouge_l": sc_quality.rouge_l,
                "spd_copied_entries": sum(t.copied_entries for t in spd_traces),
                "sc_copied_entries": sum(t.copied_entries for t in sc_traces),
            }
        )
    return {"rows": rows}


def _analysis_shallow_depth(config, weights, corpus, full_outputs, baseline_cost) -> dict:
    profile = default_op_weights(config.model.vocab_size, config.model.d_model)
    depths = sorted(
        {
            max(1, config.model.num_layers // 4),
            config.model.num_layers // 2,
            max(1, 3 * config.model.num_layers // 4),
        }
    )
    rows = []
    for depth in depths:
        model = config.model.with_shallow_depth(depth)
        for lam in (0.7, 0.5, 0.3):
            outputs, traces = [], []
            for record in corpus.records:
                tokens, trace, _ = decode_shallow_deep(
                    list(record.prompt), weights, model, lam, config.max_new, config.eos_id
                )
                outputs.append(tokens)
                traces.append(trace)
            quality = quality_report(outputs, corpus.references(), full_outputs)
            cost = cost_breakdown(traces, profile, baseline=baseline_cost)
            rows.append(
                {
                    "shallow_depth": depth,
                    "lambda": lam,
                    "rouge_l": quality.rouge_l,
                    "token_agreement": quality.token_agreement,
                    "cost_vs_full": cost.normalized_cost,
                }
            )
    return {"rows": rows}


def _analysis_calibration_size(config, weights, corpus) -> dict:
    rows = []
    for fraction in (0.03, 0.1, 1.0):
        sub = dataclasses.replace(
            config,
            estimator=dataclasses.replace(config.estimator, update_fraction=fraction),
        )
        result = run_adaptive(sub)
        rows.append(
            {
                "fraction": fraction,
                "final_lambda": result.final_threshold,
                "calibration_sentences": result.calibration_sentences,
                "calibration_samples": result.calibration_samples,
                "rouge_l": result.quality_row["rouge_l"],
                "cost_vs_full": result.quality_row["cost_vs_full"],
            }
        )
    return {"rows": rows}


def _analysis_kd_map(config, weights, corpus) -> dict:
    """Monotone alignment of shallow layers onto deep layers from recorded
    full-depth hidden states."""
    record = HiddenRecord()
    sample = corpus.records[: min(4, len(corpus.records))]
    for rec in sample:
        decode_full(
            list(rec.prompt), weights, config.model, config.max_new, config.eos_id,
            hidden_record=record,
        )
    deep_states = [record.layer_states(layer) for layer in range(1, config.model.num_layers + 1)]
    shallow_states = deep_states[: config.model.shallow_depth]
    mapping, mean_mse = kd_dyna_map(shallow_states, deep_states)
    return {
        "mapping": [m + 1 for m in mapping],
        "mean_layer_mse": mean_mse,
        "monotone": all(mapping[i] <= mapping[i + 1] for i in range(len(mapping) - 1)),
    }


def run_analysis(config: ExperimentConfig, analyses: list[str] | None = None) -> dict:
    """Run the requested analyses (all known ones by default)."""
    names = list(analyses) if analyses is not None else list(config.analyses)
    for name in names:
        if name not in ANALYSIS_NAMES:
            raise ConfigError(f"unknown analysis {name!r}; known: {ANALYSIS_NAMES}")
    weights = config.load_weights()
    corpus = config.load_corpus(weights)
    profile = default_op_weights(config.model.vocab_size, config.model.d_model)
    full_outputs, full_traces, _ = decode_corpus(
        ExitPolicy.full(), corpus, weights, config.model, config.max_new, config.eos_id
    )
    baseline_cost = cost_breakdown(full_traces, profile)

    report: dict[str, dict] = {}
    for name in names:
        if name == "oracle":
            report[name] = _analysis_oracle(config, weights, corpus, full_outputs)
        elif name == "static":
            report[name] = _analysis_static(config, weights, corpus, full_outputs)
        elif name == "cost":
            report[name] = _analysis_cost(config, weights, corpus, full_outputs, baseline_cost)
        elif name == "spd_vs_sc":
            report[name] = _analysis_spd_vs_sc(config, weights, corpus, full_outputs)
        elif name == "shallow_depth":
            report[name] = _analysis_shallow_depth(
                config, weights, corpus, full_outputs, baseline_cost
            )
        elif name == "calibration_size":
            report[name] = _analysis_calibration_size(config, weights, corpus)
        elif name == "kd_map":
            report[name] = _analysis_kd_map(config, weights, corpus)
    return report
