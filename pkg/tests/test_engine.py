import io

import numpy as np
import pytest

from exitlab.calibration import ThresholdEstimator
from exitlab.engine import (
    ExitPolicy,
    PendingBuffer,
    PendingEntry,
    decode_conventional,
    decode_full,
    decode_oracle,
    decode_shallow_deep,
    decode_shallow_deep_state_copy,
    decode_static,
    emit_trace,
    parse_trace,
    run_policy,
    trace_from_dict,
    trace_to_dict,
)
from exitlab.errors import CapacityError, ConfigError, InputError
from exitlab.model import KVCache, ModelConfig, forward_layer, init_weights, lm_head

from conftest import EOS, seeded_prompts


def test_full_single_step(toy_weights, toy_config):
    tokens, trace = decode_full([5, 6, 7], toy_weights, toy_config, max_new=1)
    assert len(tokens) == 1
    assert trace.tokens[0].sa == toy_config.num_layers
    assert trace.tokens[0].exit_layer == toy_config.num_layers


def test_full_deterministic_replay(toy_weights, toy_config):
    a = decode_full([9, 2, 4], toy_weights, toy_config, max_new=10)
    b = decode_full([9, 2, 4], toy_weights, toy_config, max_new=10)
    assert a[0] == b[0]
    assert [r.confidence for r in a[1].tokens] == [r.confidence for r in b[1].tokens]


def test_full_op_count_identity(toy_weights, toy_config):
    # 7 emitted tokens through 8 layers: SA = FFN = 56, one classifier call each.
    tokens, trace = decode_full([3, 1, 4], toy_weights, toy_config, max_new=7)
    assert len(tokens) == 7
    totals = trace.op_totals()
    assert totals["sa"] == 56
    assert totals["ffn"] == 56
    assert totals["lm_head"] == 7
    assert totals["ca"] == 0


def test_full_capacity_error(toy_weights, toy_config):
    prompt = list(range(1, 60))
    with pytest.raises(CapacityError):
        decode_full(prompt, toy_weights, toy_config, max_new=100)


def test_full_rejects_empty_prompt(toy_weights, toy_config):
    with pytest.raises(InputError):
        decode_full([], toy_weights, toy_config, max_new=1)


def test_cross_attention_counts():
    config = ModelConfig(
        num_layers=4,
        shallow_depth=2,
        d_model=16,
        n_heads=2,
        d_ff=32,
        vocab_size=32,
        max_positions=64,
        use_cross_attention=True,
        seed=3,
    )
    weights = init_weights(config)
    tokens, trace = decode_full([4, 5, 6], weights, config, max_new=5)
    totals = trace.op_totals()
    assert totals["ca"] == len(tokens) * config.num_layers
    assert totals["sa"] == len(tokens) * config.num_layers


def test_static_full_depth_equals_full(toy_weights, toy_config):
    for prompt in seeded_prompts(5, seed=21):
        full_tokens, _ = decode_full(prompt, toy_weights, toy_config, max_new=12, eos_id=EOS)
        static_tokens, _ = decode_static(
            prompt, toy_weights, toy_config, toy_config.num_layers, max_new=12, eos_id=EOS
        )
        assert static_tokens == full_tokens


def test_static_depth_one_sa_count(toy_weights, toy_config):
    tokens, trace = decode_static([2, 3], toy_weights, toy_config, depth=1, max_new=9)
    assert trace.op_totals()["sa"] == len(tokens)
    assert all(r.exit_layer == 1 for r in trace.tokens)


def test_static_depth_out_of_range(toy_weights, toy_config):
    with pytest.raises(ConfigError):
        decode_static([1], toy_weights, toy_config, depth=0, max_new=1)
    with pytest.raises(ConfigError):
        decode_static([1], toy_weights, toy_config, depth=9, max_new=1)


def test_static_lengths_vary_with_depth(toy_weights, toy_config):
    lengths = {}
    for depth in (1, 2, 4, 8):
        total = 0
        for prompt in seeded_prompts(10, seed=33):
            tokens, _ = decode_static(prompt, toy_weights, toy_config, depth, max_new=16, eos_id=EOS)
            total += len(tokens)
        lengths[depth] = total
    assert len(set(lengths.values())) > 1


def test_conventional_never_exit_matches_full(toy_weights, toy_config):
    for prompt in seeded_prompts(5, seed=5):
        full_tokens, full_trace = decode_full(prompt, toy_weights, toy_config, max_new=10, eos_id=EOS)
        conv_tokens, conv_trace = decode_conventional(
            prompt, toy_weights, toy_config, 1.1, max_new=10, eos_id=EOS
        )
        assert conv_tokens == full_tokens
        assert conv_trace.op_totals()["sa"] == full_trace.op_totals()["sa"]
        # One classifier call per checkpoint per token, against full's one per token.
        n_checkpoints = len(toy_config.exit_layers())
        assert conv_trace.op_totals()["lm_head"] == len(conv_tokens) * n_checkpoints


def test_conventional_zero_threshold_exits_at_first_allowed(toy_weights, toy_config):
    config = ModelConfig(
        **{**toy_config.__dict__, "allowed_exit_layers": (3, 5, 8)}
    )
    tokens, trace = decode_conventional([7, 8], toy_weights, config, 0.0, max_new=6)
    assert all(r.exit_layer == 3 for r in trace.tokens)
    assert all(r.lm_head == 1 for r in trace.tokens)


def test_conventional_lm_head_equals_visited_checkpoints(toy_weights, toy_config):
    checkpoints = toy_config.exit_layers()
    for prompt in seeded_prompts(5, seed=6):
        _, trace = decode_conventional(prompt, toy_weights, toy_config, 0.6, max_new=8, eos_id=EOS)
        for record in trace.tokens:
            visited = sum(1 for c in checkpoints if c <= record.exit_layer)
            assert record.lm_head == visited


def test_conventional_state_copy_provenance(toy_weights, toy_config):
    final = toy_config.num_layers
    _, trace = decode_conventional([4, 9, 1], toy_weights, toy_config, 0.5, max_new=10, eos_id=EOS)
    expected = sum(final - r.exit_layer for r in trace.tokens)
    assert trace.copied_entries == expected
    assert expected > 0


def test_oracle_soundness_and_earliest_exit(toy_weights, toy_config):
    checkpoints = toy_config.exit_layers()
    for prompt in seeded_prompts(6, seed=7):
        tokens, trace, stats = decode_oracle(prompt, toy_weights, toy_config, max_new=10, eos_id=EOS)
        for tok, rec, exit_layer, probes in zip(
            tokens, trace.tokens, stats.exit_layers, stats.probe_argmaxes
        ):
            final = toy_config.num_layers
            assert probes[final] == tok
            assert probes[exit_layer] == tok
            assert rec.exit_layer == exit_layer
            assert exit_layer in checkpoints
            # Earliest: every probed checkpoint below the exit disagreed.
            for layer, argmax in probes.items():
                if layer < exit_layer:
                    assert argmax != tok


def test_oracle_exit_at_final_has_cosine_one(toy_weights, toy_config):
    for prompt in seeded_prompts(6, seed=8):
        _, _, stats = decode_oracle(prompt, toy_weights, toy_config, max_new=8, eos_id=EOS)
        for exit_layer, cos in zip(stats.exit_layers, stats.cosines):
            if exit_layer == toy_config.num_layers:
                assert cos == 1.0
            else:
                assert -1.0 <= cos < 1.0


def test_oracle_copies_replace_cache_above_exit(toy_weights, toy_config):
    final = toy_config.num_layers
    found = False
    for prompt in seeded_prompts(10, seed=9):
        _, trace, stats = decode_oracle(prompt, toy_weights, toy_config, max_new=10, eos_id=EOS)
        expected = sum(final - e for e in stats.exit_layers)
        assert trace.copied_entries == expected
        found = found or expected > 0
    assert found


def test_shallow_deep_never_exit_collapses_to_full(toy_weights, toy_config):
    for prompt in seeded_prompts(8, seed=10):
        full_tokens, _ = decode_full(prompt, toy_weights, toy_config, max_new=12, eos_id=EOS)
        sd_tokens, trace, _ = decode_shallow_deep(
            prompt, toy_weights, toy_config, 1.1, max_new=12, eos_id=EOS
        )
        assert sd_tokens == full_tokens
        assert trace.flush_sizes == [1] * len(sd_tokens)


def test_shallow_deep_always_exit_collapses_to_static(toy_weights, toy_config):
    for prompt in seeded_prompts(8, seed=11):
        static_tokens, _ = decode_static(
            prompt, toy_weights, toy_config, toy_config.shallow_depth, max_new=12, eos_id=EOS
        )
        sd_tokens, trace, _ = decode_shallow_deep(
            prompt, toy_weights, toy_config, 0.0, max_new=12, eos_id=EOS
        )
        assert sd_tokens == static_tokens
        assert trace.flush_sizes == []
        # With the calibration flush, emissions still must not change.
        sd_cal, trace_cal, samples = decode_shallow_deep(
            prompt, toy_weights, toy_config, 0.0, max_new=12, eos_id=EOS, calibration_flush=True
        )
        assert sd_cal == static_tokens
        assert trace_cal.flush_sizes == [len(sd_cal)]
        assert len(samples) == len(sd_cal)


def test_shallow_deep_op_count_identity(toy_weights, toy_config):
    shallow, final = toy_config.shallow_depth, toy_config.num_layers
    for lam in (0.3, 0.5, 0.7):
        for prompt in seeded_prompts(4, seed=12):
            tokens, trace, _ = decode_shallow_deep(
                prompt, toy_weights, toy_config, lam, max_new=10, eos_id=EOS
            )
            n = len(tokens)
            f = sum(trace.flush_sizes)
            totals = trace.op_totals()
            assert totals["sa"] == n * shallow + f * (final - shallow)
            assert totals["lm_head"] == n + f


def test_shallow_deep_sa_never_exceeds_full(toy_weights, toy_config):
    for lam in (0.0, 0.4, 0.8, 1.1):
        for prompt in seeded_prompts(4, seed=13):
            # No EOS cutoff so both runs emit the same number of tokens.
            _, full_trace = decode_full(prompt, toy_weights, toy_config, max_new=8)
            _, sd_trace, _ = decode_shallow_deep(prompt, toy_weights, toy_config, lam, max_new=8)
            assert sd_trace.op_totals()["sa"] <= full_trace.op_totals()["sa"]


def test_shallow_deep_provenance_purity(toy_weights, toy_config):
    for lam in (0.0, 0.5, 1.1):
        _, trace, _ = decode_shallow_deep(
            [5, 4, 3], toy_weights, toy_config, lam, max_new=10, calibration_flush=True
        )
        assert trace.copied_entries == 0


def test_shallow_deep_emissions_are_final(toy_weights, toy_config):
    """The deep byproduct prediction never revises an exited token."""
    revised = 0
    for prompt in seeded_prompts(10, seed=14):
        tokens, trace, _ = decode_shallow_deep(
            prompt, toy_weights, toy_config, 0.5, max_new=12, eos_id=EOS, calibration_flush=True
        )
        assert tokens == [r.token for r in trace.tokens]
        for r in trace.tokens:
            if r.exit_layer == toy_config.shallow_depth:
                assert r.token == r.shallow_token
                if r.deep_token is not None and r.deep_token != r.token:
                    revised += 1
    # Disagreements exist, proving the assertion above is not vacuous.
    assert revised > 0


def _forced_exit_threshold(weights, config, prompt, pattern_len=3):
    """A threshold making the first ``pattern_len - 1`` tokens exit and the
    last one not, if this prompt admits one."""
    _, trace, _ = decode_shallow_deep(prompt, weights, config, 0.0, max_new=pattern_len)
    confs = [r.confidence for r in trace.tokens]
    lead, last = min(confs[:-1]), confs[-1]
    if last < lead:
        return (last + lead) / 2.0
    return None


def test_shallow_deep_batched_flush_matches_sequential_replay(toy_weights, toy_config):
    """Deep K/V and hidden states from one batched flush equal those from
    processing the same positions one at a time through the deep layers."""
    shallow, final = toy_config.shallow_depth, toy_config.num_layers
    checked = 0
    for prompt in seeded_prompts(30, seed=15):
        lam = _forced_exit_threshold(toy_weights, toy_config, prompt)
        if lam is None:
            continue
        tokens, trace, samples = decode_shallow_deep(
            prompt, toy_weights, toy_config, lam, max_new=3
        )
        assert trace.flush_sizes == [3]
        assert [r.exit_layer for r in trace.tokens] == [shallow, shallow, final]

        # Sequential replay with the same shallow hidden inputs.
        cache_b = KVCache(toy_config)
        cache_s = KVCache(toy_config)
        start = len(prompt) - 1
        h_prompt = np.stack(
            [
                toy_weights.embedding[t] + toy_weights.pos_embedding[p]
                for p, t in enumerate(prompt[:-1])
            ]
        ).astype(np.float32)
        hiddens = {}
        for cache in (cache_b, cache_s):
            if len(prompt) > 1:
                h = h_prompt.copy()
                for layer in range(1, final + 1):
                    h = forward_layer(toy_weights, layer, h, cache, list(range(start)))
            token_in = prompt[-1]
            rows = []
            for i, emitted in enumerate(tokens):
                h = (
                    toy_weights.embedding[token_in] + toy_weights.pos_embedding[start + i]
                ).reshape(1, -1).astype(np.float32)
                for layer in range(1, shallow + 1):
                    h = forward_layer(toy_weights, layer, h, cache, [start + i])
                rows.append(h[0].copy())
                token_in = emitted
            if cache is cache_b:
                h = np.stack(rows)
                positions = [start, start + 1, start + 2]
                for layer in range(shallow + 1, final + 1):
                    h = forward_layer(toy_weights, layer, h, cache, positions)
                hiddens["batched"] = h
            else:
                outs = []
                for i in range(3):
                    h = rows[i].reshape(1, -1)
                    for layer in range(shallow + 1, final + 1):
                        h = forward_layer(toy_weights, layer, h, cache, [start + i])
                    outs.append(h[0])
                hiddens["sequential"] = np.stack(outs)
        assert np.max(np.abs(hiddens["batched"] - hiddens["sequential"])) <= 1e-6
        for layer in range(shallow + 1, final + 1):
            assert np.max(np.abs(cache_b.keys(layer) - cache_s.keys(layer))) <= 1e-6
            assert np.max(np.abs(cache_b.values(layer) - cache_s.values(layer))) <= 1e-6
        checked += 1
        if checked >= 3:
            break
    assert checked >= 1


def test_shallow_deep_estimator_fallback_uses_initial_threshold(toy_weights, toy_config):
    est = ThresholdEstimator(initial_threshold=0.9, zeta=0.4, update_limit=5)
    prompt = seeded_prompts(1, seed=16)[0]
    with_est, _, _ = decode_shallow_deep(prompt, toy_weights, toy_config, est, max_new=10, eos_id=EOS)
    with_fixed, _, _ = decode_shallow_deep(prompt, toy_weights, toy_config, 0.9, max_new=10, eos_id=EOS)
    assert with_est == with_fixed


def test_shallow_deep_eos_exit_skips_flush(toy_weights, toy_config):
    """A confident shallow EOS ends generation without flushing the buffer."""
    found = False
    for prompt in seeded_prompts(40, seed=17):
        tokens, trace, _ = decode_shallow_deep(
            prompt, toy_weights, toy_config, 0.0, max_new=16, eos_id=EOS
        )
        if tokens[-1] == EOS:
            assert trace.flush_sizes == []
            found = True
            break
    assert found


def test_state_copy_variant_marks_provenance(toy_weights, toy_config):
    tokens, trace = decode_shallow_deep_state_copy(
        [8, 3, 5], toy_weights, toy_config, 0.5, max_new=10, eos_id=EOS
    )
    exited = sum(1 for r in trace.tokens if r.exit_layer == toy_config.shallow_depth)
    span = toy_config.num_layers - toy_config.shallow_depth
    assert trace.copied_entries == exited * span


def test_pending_buffer_requires_contiguity():
    buf = PendingBuffer()
    h = np.zeros(4, dtype=np.float32)
    buf.push(PendingEntry(position=3, hidden=h, shallow_token=1, confidence=0.5, record=None))
    with pytest.raises(ConfigError):
        buf.push(PendingEntry(position=5, hidden=h, shallow_token=1, confidence=0.5, record=None))


def test_exit_policy_validation():
    with pytest.raises(ConfigError):
        ExitPolicy(kind="mystery")
    with pytest.raises(ConfigError):
        ExitPolicy.conventional(-0.5)
    with pytest.raises(ConfigError):
        ExitPolicy.shallow_deep()
    assert ExitPolicy.static(3).label() == "static(k=3)"


def test_run_policy_dispatch(toy_weights, toy_config):
    prompt = [4, 5]
    for policy in (
        ExitPolicy.full(),
        ExitPolicy.static(2),
        ExitPolicy.conventional(0.7),
        ExitPolicy.oracle(),
        ExitPolicy.shallow_deep(0.7),
    ):
        tokens, trace, extras = run_policy(policy, prompt, toy_weights, toy_config, max_new=4)
        assert len(tokens) == 4
        if policy.kind == "oracle":
            assert "oracle_stats" in extras
        if policy.kind == "shallow_deep":
            assert "calibration_samples" in extras


def test_trace_round_trip(toy_weights, toy_config):
    _, trace, _ = decode_shallow_deep(
        [2, 9], toy_weights, toy_config, 0.5, max_new=6, calibration_flush=True
    )
    trace.record_id = "rec-1"
    sink = io.StringIO()
    emit_trace(trace, sink)
    parsed = parse_trace(sink.getvalue())
    assert trace_to_dict(parsed) == trace_to_dict(trace)


def test_trace_totals_consistency_checked_on_parse(toy_weights, toy_config):
    _, trace = decode_full([2, 9], toy_weights, toy_config, max_new=3)
    data = trace_to_dict(trace)
    data["totals"]["sa"] += 1
    with pytest.raises(InputError):
        trace_from_dict(data)


def test_immediate_eos_single_token_trace(toy_weights, toy_config):
    found = False
    for prompt in seeded_prompts(80, seed=18):
        full_tokens, _ = decode_full(prompt, toy_weights, toy_config, max_new=2, eos_id=EOS)
        if full_tokens[0] == EOS:
            tokens, trace = decode_full(prompt, toy_weights, toy_config, max_new=9, eos_id=EOS)
            assert tokens == [EOS]
            assert len(trace.tokens) == 1
            found = True
            break
    assert found
