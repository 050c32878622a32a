"""Iterative self-refinement driven by execution feedback, with quality-based termination."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

from . import calibrate, policy
from .harness import TIER_FULL_PASS, RewardBreakdown, extract_diff

log = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.5


class BackendUnavailable(Exception):
    pass


@dataclass(frozen=True)
class QualityWeights:
    w_apply: float = 0.2
    w_tests: float = 0.5
    w_conf: float = 0.3

    def __post_init__(self):
        if min(self.w_apply, self.w_tests, self.w_conf) < 0:
            raise ValueError("quality weights must be nonnegative")
        total = self.w_apply + self.w_tests + self.w_conf
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"quality weights must sum to 1, got {total}")


@dataclass(frozen=True)
class RefinementState:
    iteration: int
    patch_text: str
    breakdown: RewardBreakdown
    confidence: float
    quality: float
    critique: str = ""
    feedback: str = ""
    patch_changed: bool = True

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")


def quality_score(breakdown: RewardBreakdown, confidence: float, weights: QualityWeights) -> float:
    """Weighted mix of apply indicator, test pass fraction, and patch confidence."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {confidence}")
    applies = 1.0 if breakdown.applied else 0.0
    tests = breakdown.pass_fraction if breakdown.pass_fraction is not None else 0.0
    if breakdown.applied and breakdown.suite_result is None:
        log.warning("no test results behind this evaluation; test term contributes %s", tests)
    return weights.w_apply * applies + weights.w_tests * tests + weights.w_conf * confidence


def should_stop(history: Sequence[RefinementState], max_iter: int, epsilon: float) -> bool:
    """Stop on full pass, on budget exhaustion, or when quality stops improving."""
    if not history:
        raise ValueError("history must be nonempty")
    latest = history[-1]
    if latest.breakdown.tier == TIER_FULL_PASS:
        return True
    if latest.iteration >= max_iter:
        return True
    if len(history) >= 2 and latest.quality <= history[-2].quality + epsilon:
        return True
    return False


def serialize_feedback(breakdown: RewardBreakdown) -> str:
    lines = [f"tier: {breakdown.tier}", f"reward: {breakdown.reward:.4f}"]
    if breakdown.pass_fraction is not None:
        lines.append(f"pass_fraction: {breakdown.pass_fraction:.4f}")
    if breakdown.detail:
        lines.append(f"detail: {breakdown.detail}")
    if breakdown.suite_result is not None:
        for tid, outcome in breakdown.suite_result.outcomes.items():
            lines.append(f"test {tid}: {outcome}")
    return "\n".join(lines)


def patch_confidence(tokens: Sequence[policy.TokenLogProbs] | None, answer: str) -> float:
    """Mean span confidence over the added lines of a generated diff.

    Tokens are mapped to output lines by character position; generations
    without logprobs fall back to a neutral 0.5.
    """
    if not tokens:
        return DEFAULT_CONFIDENCE
    entropies = calibrate.response_entropies(tokens)
    spans: list[tuple[int, int]] = []
    pos = 0
    for line in answer.split("\n"):
        spans.append((pos, pos + len(line)))
        pos += len(line) + 1
    bounds = []
    tok_pos = 0
    for tok in tokens:
        bounds.append((tok_pos, tok_pos + len(tok.token)))
        tok_pos += len(tok.token)

    line_confidences: list[float] = []
    for (start, end), line in zip(spans, answer.split("\n")):
        if not (line.startswith("+") and not line.startswith("+++")):
            continue
        line_entropies = [
            h for (ts, te), h in zip(bounds, entropies) if ts < end and te > start
        ]
        if line_entropies:
            line_confidences.append(calibrate.span_confidence(line_entropies))
    if not line_confidences:
        return DEFAULT_CONFIDENCE
    return sum(line_confidences) / len(line_confidences)


def _refine_prompt(issue_text: str, patch_text: str, feedback: str) -> str:
    return (
        "The patch below did not fully resolve the issue. Analyze the execution "
        "feedback, critique the patch, then reply with a corrected unified diff.\n\n"
        f"ISSUE:\n{issue_text}\n\n"
        f"CURRENT PATCH:\n{patch_text}\n\n"
        f"EXECUTION FEEDBACK:\n{feedback}\n"
    )


def refine_step(
    issue_text: str,
    state: RefinementState,
    backend: policy.Backend,
    mode: str = policy.THINKING,
) -> tuple[str, str, bool, float]:
    """One critique-and-revise turn; returns (critique, patch, changed, confidence).

    An answer without a parseable diff keeps the previous patch and records
    the critique.
    """
    if not state.feedback:
        raise ValueError("refine_step requires execution feedback on the state")
    request = policy.GenRequest(
        prompt=_refine_prompt(issue_text, state.patch_text, state.feedback),
        mode=mode,
        want_logprobs=True,
    )
    response = policy.generate(request, backend)
    if response.finish == policy.FINISH_ERROR:
        raise BackendUnavailable("refinement backend failed")
    critique = response.reasoning or ""
    diff = extract_diff(response.answer)
    if diff is None:
        log.info("refinement reply carried no parseable diff; keeping previous patch")
        return critique, state.patch_text, False, DEFAULT_CONFIDENCE
    return critique, diff, True, patch_confidence(response.tokens, response.answer)


@dataclass(frozen=True)
class RefineResult:
    best: RefinementState
    history: tuple[RefinementState, ...]


def refine_loop(
    issue_text: str,
    initial_patch: str,
    backend: policy.Backend,
    evaluate: Callable[[str], RewardBreakdown],
    weights: QualityWeights | None = None,
    max_iter: int = 3,
    epsilon: float = 0.01,
    initial_confidence: float = DEFAULT_CONFIDENCE,
    mode: str = policy.THINKING,
) -> RefineResult:
    """Run the refinement loop and return the highest-quality state seen.

    The best state (not the last) is returned, so a regressing final step
    cannot lose an earlier better patch. At most max_iter + 1 evaluations run.
    """
    weights = weights or QualityWeights()
    breakdown = evaluate(initial_patch)
    state = RefinementState(
        iteration=0,
        patch_text=initial_patch,
        breakdown=breakdown,
        confidence=initial_confidence,
        quality=quality_score(breakdown, initial_confidence, weights),
        feedback=serialize_feedback(breakdown),
    )
    history = [state]

    while not should_stop(history, max_iter, epsilon):
        try:
            critique, patch_text, changed, confidence = refine_step(issue_text, history[-1], backend, mode=mode)
        except BackendUnavailable:
            log.warning("backend failed during refinement; terminating with current best")
            break
        breakdown = evaluate(patch_text)
        state = RefinementState(
            iteration=history[-1].iteration + 1,
            patch_text=patch_text,
            breakdown=breakdown,
            confidence=confidence,
            quality=quality_score(breakdown, confidence, weights),
            critique=critique,
            feedback=serialize_feedback(breakdown),
            patch_changed=changed,
        )
        history.append(state)

    best = max(history, key=lambda s: s.quality)
    first_best = next(s for s in history if s.quality == best.quality)
    return RefineResult(best=first_best, history=tuple(history))
