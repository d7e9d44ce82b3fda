"""Adaptive exit-threshold estimation from (confidence, agreement) samples.

During parallel decoding every deep pass reveals whether the shallow
prediction matched the deep one. Those pairs are modeled with a two-component
Beta mixture, one component per agreement class, fitted by the moment
formulas below under hard class assignment (the agreement indicator selects
the component; there is no latent-variable EM). Class priors are fixed at
0.5 each, so the posterior depends only on the fitted shapes, never on the
empirical class imbalance. The threshold is the smallest grid point whose
posterior probability of agreement reaches the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimatorFrozenError, InsufficientDataError, ParameterError

# Confidences are clamped away from {0, 1} before fitting; the Beta density
# is singular there.
CONFIDENCE_CLAMP = 1e-4
# Minimum samples per class before a refit replaces the current threshold.
MIN_CLASS_SAMPLES = 10
# Variance cap keeps the moment formulas positive.
VARIANCE_CAP_FRACTION = 0.999
VARIANCE_FLOOR = 1e-9

THRESHOLD_GRID = tuple(i / 1000.0 for i in range(1001))


@dataclass(frozen=True)
class CalibrationSample:
    """One shallow confidence and whether shallow and deep predictions agreed."""

    confidence: float
    agree: bool

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class BetaMixture:
    """Two Beta components: class 1 models agreement, class 0 disagreement.

    Priors are fixed constants p(k=0) = p(k=1) = 0.5 and are therefore not
    stored.
    """

    alpha0: float
    beta0: float
    alpha1: float
    beta1: float

    def __post_init__(self):
        for name in ("alpha0", "beta0", "alpha1", "beta1"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} must be positive")


def beta_pdf(x: float, alpha: float, beta: float) -> float:
    """Beta density at ``x``, computed in log space via lgamma.

    ``x`` is clamped to the open unit interval so integer shapes stay finite
    at the endpoints.
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise ParameterError(f"shape parameters must be positive, got ({alpha}, {beta})")
    x = min(max(float(x), 1e-12), 1.0 - 1e-12)
    log_pdf = (
        math.lgamma(alpha + beta)
        - math.lgamma(alpha)
        - math.lgamma(beta)
        + (alpha - 1.0) * math.log(x)
        + (beta - 1.0) * math.log1p(-x)
    )
    return math.exp(log_pdf)


def shapes_from_moments(mean: float, variance: float) -> tuple[float, float]:
    """Beta shapes whose first two moments match ``mean`` and ``variance``.

    The variance is clamped below ``mean * (1 - mean)`` so both shapes come
    out positive.
    """
    if not 0.0 < mean < 1.0:
        raise ParameterError(f"mean {mean} outside (0, 1)")
    cap = VARIANCE_CAP_FRACTION * mean * (1.0 - mean)
    variance = min(max(variance, VARIANCE_FLOOR), cap)
    alpha = mean * (mean * (1.0 - mean) / variance - 1.0)
    beta = alpha * (1.0 - mean) / mean
    return alpha, beta


def fit_component(confidences) -> tuple[float, float]:
    """Fit one Beta component to the confidences of a single agreement class."""
    c = np.asarray(confidences, dtype=np.float64)
    if c.size < MIN_CLASS_SAMPLES:
        raise InsufficientDataError(
            f"{c.size} samples, need at least {MIN_CLASS_SAMPLES}"
        )
    c = np.clip(c, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
    mean = float(np.mean(c))
    variance = float(np.mean(np.square(c - mean)))
    return shapes_from_moments(mean, variance)


def fit_mixture(samples: list[CalibrationSample]) -> BetaMixture:
    """Fit both components from labeled samples (hard class assignment)."""
    agree = [s.confidence for s in samples if s.agree]
    disagree = [s.confidence for s in samples if not s.agree]
    alpha1, beta1 = fit_component(agree)
    alpha0, beta0 = fit_component(disagree)
    return BetaMixture(alpha0=alpha0, beta0=beta0, alpha1=alpha1, beta1=beta1)


def posterior_agree(lam: float, mixture: BetaMixture) -> float | None:
    """Posterior probability of agreement at confidence ``lam``.

    With both priors at 0.5 this is pdf1 / (pdf0 + pdf1). Returns ``None``
    when both densities underflow to zero, so callers can skip the point.
    """
    p0 = beta_pdf(lam, mixture.alpha0, mixture.beta0)
    p1 = beta_pdf(lam, mixture.alpha1, mixture.beta1)
    total = p0 + p1
    if total == 0.0 or not math.isfinite(total):
        return None
    return p1 / total


def solve_threshold(mixture: BetaMixture, zeta: float) -> tuple[float, bool]:
    """Smallest grid threshold whose agreement posterior reaches ``zeta``.

    The posterior is not assumed monotone, so the grid {0, 0.001, ..., 1.0}
    is scanned in full. Returns ``(1.0, True)`` when no grid point satisfies
    the condition (saturated: never exit).
    """
    if not 0.0 < zeta < 1.0:
        raise ParameterError(f"zeta {zeta} outside (0, 1)")
    for lam in THRESHOLD_GRID:
        post = posterior_agree(lam, mixture)
        if post is not None and post >= zeta:
            return lam, False
    return 1.0, True


@dataclass
class ThresholdEstimator:
    """Streaming estimator state: sample store, current threshold, freeze flag.

    ``update_limit`` is the number of sentences that may update the
    threshold; after that the estimator freezes and rejects further updates.
    """

    initial_threshold: float = 0.9
    zeta: float = 0.4
    update_limit: int = 1
    threshold: float = field(init=False)
    samples: list[CalibrationSample] = field(default_factory=list)
    mixture: BetaMixture | None = field(init=False, default=None)
    sentences_seen: int = 0
    frozen: bool = False
    saturated: bool = False

    def __post_init__(self):
        if not 0.0 <= self.initial_threshold <= 1.0:
            raise ParameterError("initial threshold must be in [0, 1]")
        if self.update_limit < 1:
            raise ParameterError("update_limit must be at least 1")
        self.threshold = self.initial_threshold

    def update(self, sentence_samples: list[CalibrationSample]) -> float:
        """Absorb one sentence's samples and refit if both classes have data.

        Keeps the current threshold when either class is still below the
        minimum sample count. Freezes after ``update_limit`` sentences.
        """
        if self.frozen:
            raise EstimatorFrozenError(
                f"estimator frozen after {self.sentences_seen} sentences"
            )
        self.samples.extend(sentence_samples)
        try:
            self.mixture = fit_mixture(self.samples)
        except InsufficientDataError:
            pass
        else:
            self.threshold, self.saturated = solve_threshold(self.mixture, self.zeta)
        self.sentences_seen += 1
        if self.sentences_seen >= self.update_limit:
            self.frozen = True
        return self.threshold

    def dump(self) -> str:
        """State line: ``alpha0 beta0 alpha1 beta1 lambda n_samples frozen``."""
        if self.mixture is None:
            shapes = (float("nan"),) * 4
        else:
            m = self.mixture
            shapes = (m.alpha0, m.beta0, m.alpha1, m.beta1)
        return "%r %r %r %r %r %d %d" % (
            *shapes,
            self.threshold,
            len(self.samples),
            int(self.frozen),
        )
