"""Token/span uncertainty and temperature calibration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import TokenLogProbs

log = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-6
TEMPERATURE_RANGE = (0.05, 10.0)
GRID_POINTS = 200
GOLDEN_ITERATIONS = 60


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class TokenDistribution:
    """Truncated next-token distribution plus the aggregated tail mass.

    Backends return only the top alternatives; the remaining probability mass
    is folded into one pseudo-token so entropy is not biased low.
    """

    probs: tuple[tuple[str, float], ...]
    tail_mass: float

    def __post_init__(self):
        for token, p in self.probs:
            if not 0.0 <= p <= 1.0:
                raise CalibrationError(f"probability out of range for {token!r}: {p}")
        if not 0.0 <= self.tail_mass <= 1.0:
            raise CalibrationError(f"tail mass out of range: {self.tail_mass}")

    @classmethod
    def from_alternatives(cls, alternatives: Sequence[tuple[str, float]]) -> "TokenDistribution":
        probs = tuple((token, math.exp(lp)) for token, lp in alternatives)
        total = sum(p for _, p in probs)
        return cls(probs=probs, tail_mass=min(max(1.0 - total, 0.0), 1.0))

    @classmethod
    def from_token(cls, token: TokenLogProbs) -> "TokenDistribution":
        alts = token.alternatives if token.alternatives else ((token.token, token.logprob),)
        return cls.from_alternatives(alts)

    def total_mass(self) -> float:
        return sum(p for _, p in self.probs) + self.tail_mass


def token_entropy(dist: TokenDistribution) -> float:
    """Shannon entropy in nats, counting the tail mass as one pseudo-token."""
    mass = dist.total_mass()
    if abs(mass - 1.0) > MASS_TOLERANCE:
        raise CalibrationError(f"distribution mass {mass} deviates from 1 beyond tolerance")
    h = 0.0
    for _, p in dist.probs:
        if p > 0.0:
            h -= p * math.log(p)
    if dist.tail_mass > 0.0:
        h -= dist.tail_mass * math.log(dist.tail_mass)
    return h


def response_entropies(tokens: Sequence[TokenLogProbs]) -> list[float]:
    return [token_entropy(TokenDistribution.from_token(t)) for t in tokens]


def span_confidence(entropies: Sequence[float]) -> float:
    """exp(-mean entropy) over a token span; 1.0 for perfectly certain spans."""
    if not entropies:
        raise CalibrationError("span confidence undefined for an empty span")
    if any(h < 0 for h in entropies):
        raise CalibrationError("entropies must be nonnegative")
    return math.exp(-sum(entropies) / len(entropies))


# ---------------------------------------------------------------------------
# Expected Calibration Error


def _bin_index(confidence: float, bin_count: int) -> int:
    # right-inclusive bins: (0, 1/B], (1/B, 2/B], ...; confidence 0 falls in the first
    idx = math.ceil(confidence * bin_count) - 1
    return min(max(idx, 0), bin_count - 1)


def ece(predictions: Sequence[tuple[float, bool]], bin_count: int = 10) -> float:
    """Expected Calibration Error over equal-width, right-inclusive bins."""
    if not predictions:
        raise CalibrationError("ECE undefined for an empty prediction set")
    if bin_count < 1:
        raise CalibrationError("bin_count must be >= 1")
    sums = [0.0] * bin_count
    hits = [0] * bin_count
    counts = [0] * bin_count
    for confidence, correct in predictions:
        if not 0.0 <= confidence <= 1.0:
            raise CalibrationError(f"confidence out of range: {confidence}")
        b = _bin_index(confidence, bin_count)
        sums[b] += confidence
        hits[b] += int(correct)
        counts[b] += 1
    n = len(predictions)
    total = 0.0
    for b in range(bin_count):
        if counts[b] == 0:
            continue
        acc = hits[b] / counts[b]
        conf = sums[b] / counts[b]
        total += (counts[b] / n) * abs(acc - conf)
    return total


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    accuracy: float
    mean_confidence: float


@dataclass(frozen=True)
class CalibrationModel:
    temperature: float
    bin_count: int
    bins: tuple[CalibrationBin, ...]
    ece: float
    ece_at_unit: float


def _predictions_at(samples: Sequence[tuple[Sequence[float], int]], temperature: float) -> list[tuple[float, bool]]:
    preds: list[tuple[float, bool]] = []
    for scores, correct_index in samples:
        z = np.asarray(scores, dtype=np.float64) / temperature
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        choice = int(np.argmax(p))
        preds.append((float(p[choice]), choice == correct_index))
    return preds


def reliability_bins(predictions: Sequence[tuple[float, bool]], bin_count: int) -> tuple[CalibrationBin, ...]:
    sums = [0.0] * bin_count
    hits = [0] * bin_count
    counts = [0] * bin_count
    for confidence, correct in predictions:
        b = _bin_index(confidence, bin_count)
        sums[b] += confidence
        hits[b] += int(correct)
        counts[b] += 1
    bins = []
    for b in range(bin_count):
        acc = hits[b] / counts[b] if counts[b] else 0.0
        conf = sums[b] / counts[b] if counts[b] else 0.0
        bins.append(CalibrationBin(b / bin_count, (b + 1) / bin_count, counts[b], acc, conf))
    return tuple(bins)


def fit_temperature(
    samples: Sequence[tuple[Sequence[float], int]],
    bin_count: int = 10,
) -> CalibrationModel:
    """Find the temperature minimizing ECE of max-softmax confidences.

    ECE is piecewise constant in T, so a 200-point log-grid scan seeds a
    golden-section search on ln T. Ties prefer T closer to 1, and the result
    never has worse ECE than T = 1.
    """
    if not samples:
        raise CalibrationError("need at least one sample")
    for scores, correct_index in samples:
        if len(scores) < 2:
            raise CalibrationError("score vectors must have length >= 2")
        if not 0 <= correct_index < len(scores):
            raise CalibrationError("correct index out of range")

    degenerate = all(max(s) - min(s) == 0 for s, _ in samples)
    if degenerate:
        log.warning("identical scores in every sample; temperature fixed at 1")
        preds = _predictions_at(samples, 1.0)
        e = ece(preds, bin_count)
        return CalibrationModel(1.0, bin_count, reliability_bins(preds, bin_count), e, e)

    def objective(ln_t: float) -> float:
        return ece(_predictions_at(samples, math.exp(ln_t)), bin_count)

    lo, hi = math.log(TEMPERATURE_RANGE[0]), math.log(TEMPERATURE_RANGE[1])
    grid = list(np.linspace(lo, hi, GRID_POINTS)) + [0.0]

    best_ln = 0.0
    best_val = objective(0.0)
    evaluated: list[tuple[float, float]] = []
    for ln_t in grid:
        val = objective(ln_t)
        evaluated.append((ln_t, val))
        if val < best_val - 1e-15 or (abs(val - best_val) <= 1e-15 and abs(ln_t) < abs(best_ln)):
            best_ln, best_val = ln_t, val

    step = (hi - lo) / (GRID_POINTS - 1)
    a, b = best_ln - step, best_ln + step
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = objective(x1), objective(x2)
    for _ in range(GOLDEN_ITERATIONS):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = objective(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = objective(x2)
        for ln_t, val in ((x1, f1), (x2, f2)):
            if val < best_val - 1e-15 or (abs(val - best_val) <= 1e-15 and abs(ln_t) < abs(best_ln)):
                best_ln, best_val = ln_t, val

    temperature = math.exp(best_ln)
    preds = _predictions_at(samples, temperature)
    return CalibrationModel(
        temperature=temperature,
        bin_count=bin_count,
        bins=reliability_bins(preds, bin_count),
        ece=ece(preds, bin_count),
        ece_at_unit=ece(_predictions_at(samples, 1.0), bin_count),
    )
