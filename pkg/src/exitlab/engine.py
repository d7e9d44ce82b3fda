"""Decoding policies over the toy decoder.

Five strategies share one session layout: full-depth greedy decoding, static
depth-k exiting, conventional per-layer exiting with state copying, oracle
exiting, and the shallow-deep policy with synchronized parallel decoding.
Each run emits a DecodeTrace with per-token exit layers, confidences, and
per-component operation counts; op counts are the deterministic latency
proxy, wall times are recorded but informational.

Greedy argmax decoding only; ties break toward the lowest token id. One
decode call is one sequential session; sessions over the same immutable
Weights may run concurrently.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .calibration import CalibrationSample, ThresholdEstimator
from .errors import CapacityError, ConfigError, DimensionError, InputError
from .metrics import cosine
from .model import (
    KVCache,
    HiddenRecord,
    ModelConfig,
    Weights,
    build_encoder_memory,
    confidence,
    embed,
    forward_layer,
    lm_head,
    state_copy,
)

POLICY_KINDS = ("full", "static", "conventional", "oracle", "shallow_deep")


@dataclass(frozen=True)
class ExitPolicy:
    """Which decoding strategy to run, with its parameters.

    ``threshold`` above 1 means "never exit". ``adaptive`` attaches a
    ThresholdEstimator whose current threshold is read at the start of each
    sequence.
    """

    kind: str
    depth: int | None = None
    threshold: float | None = None
    adaptive: ThresholdEstimator | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.threshold is not None and self.threshold < 0.0:
            raise ConfigError("threshold must be non-negative")

    @classmethod
    def full(cls) -> "ExitPolicy":
        return cls(kind="full")

    @classmethod
    def static(cls, depth: int) -> "ExitPolicy":
        return cls(kind="static", depth=depth)

    @classmethod
    def conventional(cls, threshold: float) -> "ExitPolicy":
        return cls(kind="conventional", threshold=threshold)

    @classmethod
    def oracle(cls) -> "ExitPolicy":
        return cls(kind="oracle")

    @classmethod
    def shallow_deep(
        cls, threshold: float | None = None, adaptive: ThresholdEstimator | None = None
    ) -> "ExitPolicy":
        if threshold is None and adaptive is None:
            raise ConfigError("shallow_deep needs a threshold or an estimator")
        return cls(kind="shallow_deep", threshold=threshold, adaptive=adaptive)

    def label(self) -> str:
        if self.kind == "static":
            return f"static(k={self.depth})"
        if self.kind == "conventional":
            return f"conventional(lambda={self.threshold})"
        if self.kind == "shallow_deep":
            if self.adaptive is not None:
                return "shallow_deep(adaptive)"
            return f"shallow_deep(lambda={self.threshold})"
        return self.kind


@dataclass
class TokenRecord:
    """One emitted token: where it exited, how confident, what it cost."""

    token: int
    position: int
    exit_layer: int
    confidence: float
    shallow_token: int
    deep_token: int | None = None
    sa: int = 0
    ca: int = 0
    ffn: int = 0
    lm_head: int = 0
    wall_ns: int = 0
    cosine: float | None = None


@dataclass
class DecodeTrace:
    """Per-sequence evidence: token records plus flush and provenance totals."""

    policy: str
    params: dict = field(default_factory=dict)
    prompt_len: int = 0
    tokens: list[TokenRecord] = field(default_factory=list)
    flush_sizes: list[int] = field(default_factory=list)
    copied_entries: int = 0
    prefill_sa: int = 0
    prefill_ca: int = 0
    prefill_ffn: int = 0
    record_id: str | None = None

    def token_ids(self) -> list[int]:
        return [r.token for r in self.tokens]

    def op_totals(self) -> dict[str, int]:
        return {
            "sa": sum(r.sa for r in self.tokens),
            "ca": sum(r.ca for r in self.tokens),
            "ffn": sum(r.ffn for r in self.tokens),
            "lm_head": sum(r.lm_head for r in self.tokens),
        }

    def wall_total_ns(self) -> int:
        return sum(r.wall_ns for r in self.tokens)


@dataclass
class PendingEntry:
    position: int
    hidden: np.ndarray
    shallow_token: int
    confidence: float
    record: TokenRecord | None


class PendingBuffer:
    """Exited positions whose deep-layer key/value states are still pending."""

    def __init__(self):
        self.entries: list[PendingEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, entry: PendingEntry):
        if self.entries and entry.position != self.entries[-1].position + 1:
            raise ConfigError(
                f"pending positions must stay contiguous: {self.entries[-1].position} then {entry.position}"
            )
        self.entries.append(entry)

    def drain(self) -> list[PendingEntry]:
        out, self.entries = self.entries, []
        return out


@dataclass
class OracleStats:
    """Per-token oracle evidence: exit layer, cosine to the final hidden, and
    the argmax observed at every probed checkpoint (final layer included)."""

    exit_layers: list[int] = field(default_factory=list)
    cosines: list[float] = field(default_factory=list)
    probe_argmaxes: list[dict[int, int]] = field(default_factory=list)

    def mean_cosine(self) -> float:
        return float(np.mean(self.cosines)) if self.cosines else 1.0

    def mean_exit_layer(self) -> float:
        return float(np.mean(self.exit_layers)) if self.exit_layers else 0.0


class _Session:
    """State for one sequence: cache, encoder memory, prefill bookkeeping."""

    def __init__(self, weights: Weights, config: ModelConfig, prompt: Sequence[int], max_new: int):
        if len(prompt) == 0:
            raise InputError("prompt must be non-empty")
        if max_new < 1:
            raise InputError("max_new must be at least 1")
        if len(prompt) + max_new > config.max_positions:
            raise CapacityError(
                f"prompt of {len(prompt)} plus {max_new} new tokens exceeds "
                f"max_positions {config.max_positions}"
            )
        self.weights = weights
        self.config = config
        self.prompt = list(prompt)
        self.cache = KVCache(config)
        self.memory = build_encoder_memory(weights, prompt) if config.use_cross_attention else None

    def prefill(self, trace: DecodeTrace, depth: int):
        """Run all prompt positions but the last through layers 1..depth.

        The last prompt position is left to the generation loop so that every
        emitted token accounts for exactly one position's layer work.
        """
        n = len(self.prompt) - 1
        if n == 0:
            return
        h = np.stack([embed(self.weights, t, p) for p, t in enumerate(self.prompt[:n])])
        positions = list(range(n))
        for layer in range(1, depth + 1):
            h = forward_layer(self.weights, layer, h, self.cache, positions, self.memory)
        trace.prefill_sa += n * depth
        trace.prefill_ffn += n * depth
        if self.config.use_cross_attention:
            trace.prefill_ca += n * depth

    def run_layers(self, h: np.ndarray, positions: list[int], lo: int, hi: int) -> np.ndarray:
        """Layers lo..hi (inclusive) over a batch, layer by layer."""
        for layer in range(lo, hi + 1):
            h = forward_layer(self.weights, layer, h, self.cache, positions, self.memory)
        return h


def _argmax(probs: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest token id on ties.
    return int(np.argmax(probs))


def _count_layer_ops(record: TokenRecord, layers: int, cross: bool):
    record.sa += layers
    record.ffn += layers
    if cross:
        record.ca += layers


def decode_full(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    max_new: int,
    eos_id: int | None = None,
    hidden_record: HiddenRecord | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Greedy decoding through all layers for every token."""
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(policy="full", prompt_len=len(prompt))
    session.prefill(trace, config.num_layers)
    cross = config.use_cross_attention

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        for layer in range(1, config.num_layers + 1):
            h = session.run_layers(h, [position], layer, layer)
            if hidden_record is not None:
                hidden_record.store(position, layer, h[0])
        probs = lm_head(weights, h[0])
        conf = confidence(probs, config.confidence_measure)
        y = _argmax(probs)
        record = TokenRecord(
            token=y,
            position=position,
            exit_layer=config.num_layers,
            confidence=conf,
            shallow_token=y,
            deep_token=y,
            lm_head=1,
        )
        _count_layer_ops(record, config.num_layers, cross)
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace


def decode_static(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    depth: int,
    max_new: int,
    eos_id: int | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Classify every token after exactly ``depth`` layers; deeper layers never run."""
    if not 1 <= depth <= config.num_layers:
        raise ConfigError(f"static depth {depth} outside [1, {config.num_layers}]")
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(policy="static", params={"k": depth}, prompt_len=len(prompt))
    session.prefill(trace, depth)
    cross = config.use_cross_attention

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        h = session.run_layers(h, [position], 1, depth)
        probs = lm_head(weights, h[0])
        conf = confidence(probs, config.confidence_measure)
        y = _argmax(probs)
        record = TokenRecord(
            token=y,
            position=position,
            exit_layer=depth,
            confidence=conf,
            shallow_token=y,
            lm_head=1,
        )
        _count_layer_ops(record, depth, cross)
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace


def decode_conventional(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    threshold: float,
    max_new: int,
    eos_id: int | None = None,
    allowed_exit_layers: Sequence[int] | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Per-layer early exiting with state copying.

    Each token walks the layers in order; at every exit checkpoint the shared
    classifier is evaluated (one lm_head op per check) and the token exits at
    the first checkpoint whose confidence reaches the threshold. The final
    layer is always a checkpoint, so a token that never fires is emitted
    there. Skipped layers' key/value entries come from state copying.
    """
    if threshold < 0.0:
        raise ConfigError("threshold must be non-negative")
    if allowed_exit_layers is None:
        checkpoints = config.exit_layers()
    else:
        checkpoints = tuple(sorted(set(allowed_exit_layers) | {config.num_layers}))
        if any(not 1 <= a <= config.num_layers for a in checkpoints):
            raise ConfigError(f"exit layers outside [1, {config.num_layers}]")
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(
        policy="conventional", params={"lambda": threshold}, prompt_len=len(prompt)
    )
    session.prefill(trace, config.num_layers)
    cross = config.use_cross_attention
    final = config.num_layers

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        record = TokenRecord(token=-1, position=position, exit_layer=final, confidence=0.0, shallow_token=-1)
        exit_layer = final
        probs = None
        for layer in range(1, final + 1):
            h = session.run_layers(h, [position], layer, layer)
            if layer in checkpoints:
                probs = lm_head(weights, h[0])
                record.lm_head += 1
                conf = confidence(probs, config.confidence_measure)
                if conf >= threshold or layer == final:
                    exit_layer = layer
                    record.confidence = conf
                    break
        y = _argmax(probs)
        record.token = y
        record.shallow_token = y
        record.exit_layer = exit_layer
        record.deep_token = y if exit_layer == final else None
        _count_layer_ops(record, exit_layer, cross)
        if exit_layer < final:
            state_copy(weights, session.cache, position, exit_layer, h[0])
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace


def decode_oracle(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    max_new: int,
    eos_id: int | None = None,
    allowed_exit_layers: Sequence[int] | None = None,
) -> tuple[list[int], DecodeTrace, OracleStats]:
    """Exit each token at the earliest checkpoint whose prediction already
    matches the final layer's.

    The full forward pass always runs (the final prediction is the reference),
    then the cache above the chosen exit layer is replaced by state-copied
    entries before decoding continues, emulating what generation under the
    oracle would have left behind. Records the cosine similarity between the
    exit-layer and final-layer hidden states per token.
    """
    if allowed_exit_layers is None:
        checkpoints = config.exit_layers()
    else:
        checkpoints = tuple(sorted(set(allowed_exit_layers) | {config.num_layers}))
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(policy="oracle", prompt_len=len(prompt))
    session.prefill(trace, config.num_layers)
    cross = config.use_cross_attention
    final = config.num_layers
    stats = OracleStats()

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        per_layer: list[np.ndarray] = []
        for layer in range(1, final + 1):
            h = session.run_layers(h, [position], layer, layer)
            per_layer.append(h[0])
        final_probs = lm_head(weights, per_layer[-1])
        lm_ops = 1
        y = _argmax(final_probs)
        exit_layer = final
        probes = {final: y}
        for layer in checkpoints:
            if layer == final:
                break
            lm_ops += 1
            probes[layer] = _argmax(lm_head(weights, per_layer[layer - 1]))
            if probes[layer] == y:
                exit_layer = layer
                break
        cos = cosine(per_layer[exit_layer - 1], per_layer[-1]) if exit_layer < final else 1.0
        if exit_layer < final:
            session.cache.rollback_above(position, exit_layer)
            state_copy(weights, session.cache, position, exit_layer, per_layer[exit_layer - 1])
        record = TokenRecord(
            token=y,
            position=position,
            exit_layer=exit_layer,
            confidence=confidence(final_probs, config.confidence_measure),
            shallow_token=y,
            deep_token=y,
            lm_head=lm_ops,
            cosine=cos,
        )
        _count_layer_ops(record, final, cross)
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        stats.exit_layers.append(exit_layer)
        stats.cosines.append(cos)
        stats.probe_argmaxes.append(probes)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace, stats


def _resolve_threshold(threshold: float | ThresholdEstimator | None) -> float:
    if isinstance(threshold, ThresholdEstimator):
        return threshold.threshold
    if threshold is None:
        raise ConfigError("shallow-deep decoding needs a threshold or an estimator")
    if threshold < 0.0:
        raise ConfigError("threshold must be non-negative")
    return float(threshold)


def decode_shallow_deep(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    threshold: float | ThresholdEstimator,
    max_new: int,
    eos_id: int | None = None,
    calibration_flush: bool = False,
) -> tuple[list[int], DecodeTrace, list[CalibrationSample]]:
    """Shallow-deep decoding with synchronized parallel deep passes.

    Every new position runs the shallow layers and is scored once by the
    shared classifier. Confident tokens are emitted immediately and stack up
    in the pending buffer; when a token is not confident enough, all pending
    positions plus the current one go through the deep layers together, layer
    by layer, producing exact attention-computed key/value states for every
    one of them (nothing is ever state-copied). The current token is emitted
    from the deep prediction; already-emitted tokens are never revised, the
    deep byproduct predictions only produce calibration samples.

    With ``calibration_flush`` a final deep pass drains any leftover buffer
    so that every emitted token of the sequence contributes a calibration
    sample; emissions are unaffected. Without it the trailing buffer is left
    unflushed and its deep-layer work is saved.
    """
    lam = _resolve_threshold(threshold)
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(
        policy="shallow_deep", params={"lambda": lam}, prompt_len=len(prompt)
    )
    session.prefill(trace, config.num_layers)
    cross = config.use_cross_attention
    shallow, final = config.shallow_depth, config.num_layers
    deep_span = final - shallow
    buffer = PendingBuffer()
    samples: list[CalibrationSample] = []

    def flush(entries: list[PendingEntry]) -> list[int]:
        h = np.stack([e.hidden for e in entries])
        positions = [e.position for e in entries]
        h = session.run_layers(h, positions, shallow + 1, final)
        deep_tokens = []
        for row, entry in enumerate(entries):
            deep_y = _argmax(lm_head(weights, h[row]))
            deep_tokens.append(deep_y)
            samples.append(
                CalibrationSample(confidence=entry.confidence, agree=deep_y == entry.shallow_token)
            )
            if entry.record is not None:
                entry.record.deep_token = deep_y
                entry.record.lm_head += 1
                _count_layer_ops(entry.record, deep_span, cross)
        trace.flush_sizes.append(len(entries))
        return deep_tokens

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        h = session.run_layers(h, [position], 1, shallow)
        probs = lm_head(weights, h[0])
        conf = confidence(probs, config.confidence_measure)
        y_shallow = _argmax(probs)
        if conf >= lam:
            record = TokenRecord(
                token=y_shallow,
                position=position,
                exit_layer=shallow,
                confidence=conf,
                shallow_token=y_shallow,
                lm_head=1,
            )
            _count_layer_ops(record, shallow, cross)
            buffer.push(
                PendingEntry(
                    position=position,
                    hidden=h[0].copy(),
                    shallow_token=y_shallow,
                    confidence=conf,
                    record=record,
                )
            )
            y = y_shallow
        else:
            entries = buffer.drain()
            entries.append(
                PendingEntry(
                    position=position,
                    hidden=h[0].copy(),
                    shallow_token=y_shallow,
                    confidence=conf,
                    record=None,
                )
            )
            deep_tokens = flush(entries)
            y = deep_tokens[-1]
            record = TokenRecord(
                token=y,
                position=position,
                exit_layer=final,
                confidence=conf,
                shallow_token=y_shallow,
                deep_token=y,
                lm_head=2,
            )
            _count_layer_ops(record, final, cross)
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1

    if calibration_flush and len(buffer) > 0:
        flush(buffer.drain())
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace, samples


def decode_shallow_deep_state_copy(
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    threshold: float,
    max_new: int,
    eos_id: int | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Shallow-deep exiting with state copying instead of parallel deep passes.

    Same two exit points as :func:`decode_shallow_deep`, but an exited
    token's deep-layer key/value entries are approximated by duplicating its
    shallow hidden state, and a non-exiting token runs the deep layers alone
    over that mixed-provenance cache. Analysis-only counterpart used to
    quantify what synchronized parallel decoding buys.
    """
    lam = _resolve_threshold(threshold)
    session = _Session(weights, config, prompt, max_new)
    trace = DecodeTrace(
        policy="shallow_deep_sc", params={"lambda": lam}, prompt_len=len(prompt)
    )
    session.prefill(trace, config.num_layers)
    cross = config.use_cross_attention
    shallow, final = config.shallow_depth, config.num_layers

    token_in = prompt[-1]
    position = len(prompt) - 1
    tokens: list[int] = []
    for _ in range(max_new):
        t0 = time.perf_counter_ns()
        h = embed(weights, token_in, position).reshape(1, -1)
        h = session.run_layers(h, [position], 1, shallow)
        probs = lm_head(weights, h[0])
        conf = confidence(probs, config.confidence_measure)
        y_shallow = _argmax(probs)
        if conf >= lam:
            state_copy(weights, session.cache, position, shallow, h[0])
            record = TokenRecord(
                token=y_shallow,
                position=position,
                exit_layer=shallow,
                confidence=conf,
                shallow_token=y_shallow,
                lm_head=1,
            )
            _count_layer_ops(record, shallow, cross)
            y = y_shallow
        else:
            h = session.run_layers(h, [position], shallow + 1, final)
            y = _argmax(lm_head(weights, h[0]))
            record = TokenRecord(
                token=y,
                position=position,
                exit_layer=final,
                confidence=conf,
                shallow_token=y_shallow,
                deep_token=y,
                lm_head=2,
            )
            _count_layer_ops(record, final, cross)
        record.wall_ns = time.perf_counter_ns() - t0
        trace.tokens.append(record)
        tokens.append(y)
        if eos_id is not None and y == eos_id:
            break
        token_in = y
        position += 1
    trace.copied_entries = session.cache.copied_count()
    return tokens, trace


def run_policy(
    policy: ExitPolicy,
    prompt: Sequence[int],
    weights: Weights,
    config: ModelConfig,
    max_new: int,
    eos_id: int | None = None,
    calibration_flush: bool = False,
) -> tuple[list[int], DecodeTrace, dict]:
    """Dispatch one decode under ``policy``; extras carry policy-specific outputs."""
    if policy.kind == "full":
        tokens, trace = decode_full(prompt, weights, config, max_new, eos_id)
        return tokens, trace, {}
    if policy.kind == "static":
        tokens, trace = decode_static(prompt, weights, config, policy.depth, max_new, eos_id)
        return tokens, trace, {}
    if policy.kind == "conventional":
        tokens, trace = decode_conventional(
            prompt, weights, config, policy.threshold, max_new, eos_id
        )
        return tokens, trace, {}
    if policy.kind == "oracle":
        tokens, trace, stats = decode_oracle(prompt, weights, config, max_new, eos_id)
        return tokens, trace, {"oracle_stats": stats}
    if policy.kind == "shallow_deep":
        threshold = policy.adaptive if policy.adaptive is not None else policy.threshold
        tokens, trace, samples = decode_shallow_deep(
            prompt, weights, config, threshold, max_new, eos_id, calibration_flush
        )
        return tokens, trace, {"calibration_samples": samples}
    raise ConfigError(f"unknown policy kind {policy.kind!r}")


# ---------------------------------------------------------------------------
# Trace serialization (line-oriented JSON)
# ---------------------------------------------------------------------------


def trace_to_dict(trace: DecodeTrace) -> dict:
    return {
        "policy": trace.policy,
        "params": trace.params,
        "record_id": trace.record_id,
        "prompt_len": trace.prompt_len,
        "flush_sizes": trace.flush_sizes,
        "copied_entries": trace.copied_entries,
        "prefill": {"sa": trace.prefill_sa, "ca": trace.prefill_ca, "ffn": trace.prefill_ffn},
        "totals": trace.op_totals(),
        "tokens": [
            {
                "token": r.token,
                "position": r.position,
                "exit_layer": r.exit_layer,
                "confidence": r.confidence,
                "shallow_token": r.shallow_token,
                "deep_token": r.deep_token,
                "sa": r.sa,
                "ca": r.ca,
                "ffn": r.ffn,
                "lm_head": r.lm_head,
                "wall_ns": r.wall_ns,
                "cosine": r.cosine,
            }
            for r in trace.tokens
        ],
    }


def trace_from_dict(data: dict) -> DecodeTrace:
    trace = DecodeTrace(
        policy=data["policy"],
        params=dict(data.get("params", {})),
        prompt_len=data["prompt_len"],
        flush_sizes=list(data.get("flush_sizes", [])),
        copied_entries=data.get("copied_entries", 0),
        record_id=data.get("record_id"),
    )
    prefill = data.get("prefill", {})
    trace.prefill_sa = prefill.get("sa", 0)
    trace.prefill_ca = prefill.get("ca", 0)
    trace.prefill_ffn = prefill.get("ffn", 0)
    for t in data["tokens"]:
        trace.tokens.append(
            TokenRecord(
                token=t["token"],
                position=t["position"],
                exit_layer=t["exit_layer"],
                confidence=t["confidence"],
                shallow_token=t["shallow_token"],
                deep_token=t.get("deep_token"),
                sa=t["sa"],
                ca=t["ca"],
                ffn=t["ffn"],
                lm_head=t["lm_head"],
                wall_ns=t.get("wall_ns", 0),
                cosine=t.get("cosine"),
            )
        )
    stored = data.get("totals")
    if stored is not None and stored != trace.op_totals():
        raise InputError(f"trace totals {stored} disagree with token records")
    return trace


def emit_trace(trace: DecodeTrace, sink: TextIO):
    """Write one trace as a single JSON line."""
    json.dump(trace_to_dict(trace), sink, separators=(",", ":"))
    sink.write("\n")


def parse_trace(line: str) -> DecodeTrace:
    return trace_from_dict(json.loads(line))
