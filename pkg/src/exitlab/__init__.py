"""Toy-scale early-exit decoding lab.

A small numpy decoder with five exit policies (full, static, conventional
with state copying, oracle, and shallow-deep with synchronized parallel
decoding), a Beta-mixture adaptive threshold estimator, and a benchmark
harness that compares policies by deterministic operation counts and
sequence quality.
"""

from .calibration import (
    BetaMixture,
    CalibrationSample,
    ThresholdEstimator,
    beta_pdf,
    fit_component,
    fit_mixture,
    posterior_agree,
    shapes_from_moments,
    solve_threshold,
)
from .engine import (
    DecodeTrace,
    ExitPolicy,
    OracleStats,
    PendingBuffer,
    TokenRecord,
    decode_conventional,
    decode_full,
    decode_oracle,
    decode_shallow_deep,
    decode_shallow_deep_state_copy,
    decode_static,
    emit_trace,
    parse_trace,
    run_policy,
)
from .metrics import (
    CostReport,
    QualityReport,
    cosine,
    cost_breakdown,
    default_op_weights,
    lcs_length,
    quality_report,
    rouge_l,
    token_agreement,
)
from .model import (
    HiddenRecord,
    KVCache,
    ModelConfig,
    Weights,
    build_encoder_memory,
    confidence,
    forward_layer,
    init_weights,
    kd_dyna_map,
    lm_head,
    load_weights,
    save_weights,
    state_copy,
)

__version__ = "0.1.0"
