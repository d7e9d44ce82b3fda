"""Quality and cost measurement over token sequences and decode traces."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InputError


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Length of the longest common subsequence, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """ROUGE-L F1 over token ids (no stemming, sentence-level LCS)."""
    if not reference:
        raise InputError("reference must be non-empty")
    if not candidate:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def cosine(u, v) -> float:
    """Cosine similarity; zero-length vectors yield 0.0 with a warning."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"cosine expects equal-length vectors, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine of a zero vector is defined as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def token_agreement(candidate: Sequence[int], reference: Sequence[int]) -> float:
    """Positionwise agreement rate, normalized by the longer sequence.

    Equals 1 exactly when both sequences are identical.
    """
    if not candidate and not reference:
        return 1.0
    if not candidate or not reference:
        return 0.0
    matches = sum(1 for x, y in zip(candidate, reference) if x == y)
    return matches / max(len(candidate), len(reference))


@dataclass(frozen=True)
class QualityReport:
    """Corpus-level generation quality of one policy."""

    rouge_l: float
    exact_match: float
    token_agreement: float
    mean_output_length: float


def quality_report(
    candidates: Sequence[Sequence[int]],
    references: Sequence[Sequence[int]],
    baseline_outputs: Sequence[Sequence[int]] | None = None,
) -> QualityReport:
    """Aggregate quality: ROUGE-L against references, exact-match and token
    agreement against the full-model outputs (references if none given)."""
    if len(candidates) != len(references):
        raise InputError("candidates and references must align")
    base = references if baseline_outputs is None else baseline_outputs
    if len(base) != len(candidates):
        raise InputError("baseline outputs must align with candidates")
    rouge = float(np.mean([rouge_l(c, r) for c, r in zip(candidates, references)]))
    exact = float(np.mean([1.0 if list(c) == list(b) else 0.0 for c, b in zip(candidates, base)]))
    agree = float(np.mean([token_agreement(c, b) for c, b in zip(candidates, base)]))
    mean_len = float(np.mean([len(c) for c in candidates]))
    return QualityReport(
        rouge_l=rouge, exact_match=exact, token_agreement=agree, mean_output_length=mean_len
    )


@dataclass(frozen=True)
class CostReport:
    """Summed op counts of one policy plus its op-weighted normalized cost."""

    sa: int
    ca: int
    ffn: int
    lm_head: int
    weighted: float
    normalized_cost: float | None
    wall_time_ns: int


def default_op_weights(vocab_size: int, d_model: int) -> dict[str, float]:
    """Relative per-op costs: attention 1, feed-forward 2, classifier V/d.

    A deterministic stand-in for measured per-op times; the classifier term
    scales with how much wider the vocabulary is than the model.
    """
    return {"sa": 1.0, "ca": 1.0, "ffn": 2.0, "lm_head": vocab_size / d_model}


def cost_breakdown(
    traces: Sequence,
    op_weights: dict[str, float],
    baseline: "CostReport | None" = None,
) -> CostReport:
    """Sum per-token op counts of same-policy traces into a CostReport.

    ``normalized_cost`` divides the op-weighted total by the baseline's
    (normally the full policy on the same corpus); a full-policy breakdown
    without a baseline normalizes to itself, i.e. exactly 1.0.
    """
    if not traces:
        raise InputError("no traces given")
    policies = {t.policy for t in traces}
    if len(policies) > 1:
        raise InputError(f"traces mix policies: {sorted(policies)}")
    totals = {"sa": 0, "ca": 0, "ffn": 0, "lm_head": 0}
    wall = 0
    for t in traces:
        for key, value in t.op_totals().items():
            totals[key] += value
        wall += t.wall_total_ns()
    weighted = sum(totals[k] * op_weights[k] for k in totals)
    if baseline is not None:
        normalized = weighted / baseline.weighted if baseline.weighted > 0 else None
    elif policies == {"full"}:
        normalized = 1.0
    else:
        normalized = None
    return CostReport(
        sa=totals["sa"],
        ca=totals["ca"],
        ffn=totals["ffn"],
        lm_head=totals["lm_head"],
        weighted=weighted,
        normalized_cost=normalized,
        wall_time_ns=wall,
    )
