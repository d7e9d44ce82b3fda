import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exitlab.engine import decode_full, decode_shallow_deep, decode_static
from exitlab.errors import DimensionError, InputError
from exitlab.metrics import (
    cosine,
    cost_breakdown,
    default_op_weights,
    lcs_length,
    quality_report,
    rouge_l,
    token_agreement,
)

from conftest import EOS, seeded_prompts


def test_lcs_identity():
    assert lcs_length([1, 2, 3, 4], [1, 2, 3, 4]) == 4


def test_lcs_disjoint():
    assert lcs_length([1, 2, 3], [4, 5, 6]) == 0


def test_lcs_hand_case():
    assert lcs_length([1, 3, 2, 4], [1, 2, 3, 4]) == 3


def brute_force_lcs(a, b):
    best = 0
    for r in range(len(a) + 1):
        for combo in itertools.combinations(range(len(a)), r):
            sub = [a[i] for i in combo]
            it = iter(b)
            if all(x in it for x in sub):
                best = max(best, len(sub))
    return best


def test_lcs_against_brute_force_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
        b = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
        assert lcs_length(a, b) == brute_force_lcs(a, b)


def test_rouge_identity():
    assert rouge_l([7, 8, 9], [7, 8, 9]) == pytest.approx(1.0)


def test_rouge_disjoint():
    assert rouge_l([1, 2], [3, 4]) == 0.0


def test_rouge_hand_dp_case():
    # LCS([1,2,3],[1,3]) = 2; P = 2/3, R = 1, F1 = 0.8.
    assert rouge_l([1, 2, 3], [1, 3]) == pytest.approx(0.8)


def test_rouge_empty_candidate_and_reference():
    assert rouge_l([], [1, 2]) == 0.0
    with pytest.raises(InputError):
        rouge_l([1], [])


@given(
    st.lists(st.integers(0, 9), min_size=1, max_size=12),
    st.lists(st.integers(0, 9), min_size=1, max_size=12),
)
def test_rouge_symmetric_and_bounded(a, b):
    lhs = rouge_l(a, b)
    rhs = rouge_l(b, a)
    assert lhs == pytest.approx(rhs)
    assert 0.0 <= lhs <= 1.0
    if lhs == pytest.approx(1.0):
        assert a == b


def test_cosine_self_similarity():
    v = np.array([1.0, 2.0, -3.0])
    assert cosine(v, v) == pytest.approx(1.0)


def test_cosine_orthogonal():
    assert cosine([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)


def test_cosine_against_scalar_loop():
    rng = np.random.default_rng(13)
    u = rng.normal(size=24)
    v = rng.normal(size=24)
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = sum(float(a) ** 2 for a in u) ** 0.5
    nv = sum(float(b) ** 2 for b in v) ** 0.5
    assert cosine(u, v) == pytest.approx(dot / (nu * nv), abs=1e-6)


def test_cosine_zero_vector_flagged():
    with pytest.warns(RuntimeWarning):
        assert cosine([0.0, 0.0], [1.0, 2.0]) == 0.0


def test_cosine_length_mismatch():
    with pytest.raises(DimensionError):
        cosine([1.0], [1.0, 2.0])


def test_token_agreement():
    assert token_agreement([1, 2, 3], [1, 2, 3]) == 1.0
    assert token_agreement([1, 2, 3], [1, 9, 3]) == pytest.approx(2 / 3)
    assert token_agreement([1, 2], [1, 2, 3, 4]) == pytest.approx(0.5)
    assert token_agreement([], []) == 1.0


def test_quality_report_perfect_match():
    outs = [[1, 2, 3], [4, 5]]
    report = quality_report(outs, outs)
    assert report.rouge_l == 1.0
    assert report.exact_match == 1.0
    assert report.token_agreement == 1.0
    assert report.mean_output_length == 2.5


def test_cost_breakdown_full_normalizes_to_one(toy_weights, toy_config):
    traces = []
    for prompt in seeded_prompts(4, seed=20):
        _, trace = decode_full(prompt, toy_weights, toy_config, max_new=6, eos_id=EOS)
        traces.append(trace)
    weights_profile = default_op_weights(toy_config.vocab_size, toy_config.d_model)
    report = cost_breakdown(traces, weights_profile)
    assert report.normalized_cost == 1.0
    assert report.sa == sum(len(t.tokens) for t in traces) * toy_config.num_layers


def test_cost_breakdown_static_half_depth_halves_counts(toy_weights, toy_config):
    prompts = seeded_prompts(4, seed=22)
    full_traces, half_traces = [], []
    for prompt in prompts:
        # No EOS cutoff: equal token counts make the halving exact.
        _, tf = decode_full(prompt, toy_weights, toy_config, max_new=6)
        _, th = decode_static(prompt, toy_weights, toy_config, toy_config.num_layers // 2, max_new=6)
        full_traces.append(tf)
        half_traces.append(th)
    profile = default_op_weights(toy_config.vocab_size, toy_config.d_model)
    full_report = cost_breakdown(full_traces, profile)
    half_report = cost_breakdown(half_traces, profile, baseline=full_report)
    assert half_report.sa * 2 == full_report.sa
    assert half_report.ffn * 2 == full_report.ffn
    assert half_report.normalized_cost < 1.0


def test_cost_breakdown_shallow_deep_identity(toy_weights, toy_config):
    traces = []
    for prompt in seeded_prompts(4, seed=23):
        _, trace, _ = decode_shallow_deep(prompt, toy_weights, toy_config, 0.5, max_new=8, eos_id=EOS)
        traces.append(trace)
    profile = default_op_weights(toy_config.vocab_size, toy_config.d_model)
    report = cost_breakdown(traces, profile)
    n = sum(len(t.tokens) for t in traces)
    f = sum(sum(t.flush_sizes) for t in traces)
    shallow, final = toy_config.shallow_depth, toy_config.num_layers
    assert report.sa == n * shallow + f * (final - shallow)
    assert report.lm_head == n + f


def test_cost_breakdown_rejects_mixed_policies(toy_weights, toy_config):
    _, a = decode_full([1, 2], toy_weights, toy_config, max_new=2)
    _, b = decode_static([1, 2], toy_weights, toy_config, 2, max_new=2)
    with pytest.raises(InputError):
        cost_breakdown([a, b], default_op_weights(64, 32))
