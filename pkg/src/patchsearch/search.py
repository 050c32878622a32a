"""Monte Carlo tree search over statement-level patch actions with execution-tiered rewards."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import policy
from .harness import RewardBreakdown, extract_diff, first_hunk_diff, patch_digest

log = logging.getLogger(__name__)

EvaluateFn = Callable[[str], RewardBreakdown]


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class Action:
    edit_text: str
    prior: float

    def __post_init__(self):
        if not self.edit_text:
            raise ValueError("action edit_text must be nonempty")
        if not (self.prior > 0.0 and math.isfinite(self.prior)):
            raise ValueError(f"prior must be finite and positive, got {self.prior}")


@dataclass
class Edge:
    action: Action
    child: "PatchNode"
    visits: int = 0
    q: float = 0.0


@dataclass
class PatchNode:
    state: tuple[Action, ...] = ()
    visit_count: int = 0
    edges: dict[str, Edge] = field(default_factory=dict)
    terminal: bool = False

    @property
    def depth(self) -> int:
        return len(self.state)

    def partial_patch(self) -> str:
        return "".join(_with_newline(a.edit_text) for a in self.state)


def _with_newline(text: str) -> str:
    return text if text.endswith("\n") else text + "\n"


@dataclass(frozen=True)
class SearchConfig:
    c1: float = 1.4
    beta: float = 1.0
    expansions: int = 3
    iterations: int = 16
    max_depth: int = 4
    simulation_budget: int = 512
    temperature: float = 0.6

    def __post_init__(self):
        if self.c1 <= 0:
            raise ValueError("c1 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        for name in ("expansions", "iterations", "max_depth", "simulation_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")


def uct_value(q: float, parent_visits: int, edge_visits: int, prior: float, cfg: SearchConfig) -> float:
    """Upper-confidence score with a log-prior bias term."""
    if edge_visits <= 0:
        raise SearchError("uct_value requires a visited edge")
    explore = cfg.c1 * math.sqrt(math.log(parent_visits) / edge_visits)
    return q + explore + cfg.beta * math.log(prior)


def select(node: PatchNode, cfg: SearchConfig) -> Edge:
    """Pick the edge maximizing UCT; unvisited edges always outrank visited ones.

    Ties among unvisited edges prefer the higher prior, then insertion order.
    """
    if not node.edges:
        raise SearchError("select on a node without edges; expand first")
    unvisited = [e for e in node.edges.values() if e.visits == 0]
    if unvisited:
        best = unvisited[0]
        for e in unvisited[1:]:
            if e.action.prior > best.action.prior:
                best = e
        return best
    best_edge: Edge | None = None
    best_score = -math.inf
    for e in node.edges.values():
        score = uct_value(e.q, node.visit_count, e.visits, e.action.prior, cfg)
        if score > best_score:
            best_edge, best_score = e, score
    assert best_edge is not None
    return best_edge


# ---------------------------------------------------------------------------
# Expansion


def _expansion_prompt(context: str, node: PatchNode) -> str:
    partial = node.partial_patch()
    prompt = f"{context}\n\nPropose the next edit as a unified diff hunk.\n"
    if partial:
        prompt += f"\nPATCH SO FAR:\n{partial}"
    return prompt


def _hunk_token_logprob_sum(response: policy.GenResponse, hunk_text: str) -> float | None:
    if not response.tokens:
        return None
    start = response.answer.find(hunk_text.rstrip("\n"))
    if start < 0:
        return sum(t.logprob for t in response.tokens)
    end = start + len(hunk_text.rstrip("\n"))
    total = 0.0
    pos = 0
    for tok in response.tokens:
        tok_start, tok_end = pos, pos + len(tok.token)
        pos = tok_end
        if tok_end <= start or tok_start >= end:
            continue
        total += tok.logprob
    return total


def expand(
    node: PatchNode,
    context: str,
    backend: policy.Backend,
    cfg: SearchConfig,
) -> list[Edge]:
    """Sample K continuations, reduce each to its first hunk, and attach deduplicated edges.

    Priors come from returned logprobs when every sample has them (renormalized
    exp-sums), otherwise they are uniform. Duplicate actions merge by summing
    priors, capped at 1. If every sample fails the node becomes terminal.
    """
    prompt = _expansion_prompt(context, node)
    samples: list[tuple[str, float | None]] = []
    for _ in range(cfg.expansions):
        request = policy.GenRequest(
            prompt=prompt,
            mode=policy.NON_THINKING,
            temperature=cfg.temperature,
            want_logprobs=True,
        )
        response = policy.generate(request, backend)
        if response.finish == policy.FINISH_ERROR or not response.answer.strip():
            continue
        hunk = first_hunk_diff(response.answer)
        edit_text = hunk if hunk is not None else response.answer.strip() + "\n"
        samples.append((edit_text, _hunk_token_logprob_sum(response, edit_text)))

    if not samples:
        node.terminal = True
        return []

    if all(lp is not None for _, lp in samples):
        raw = [math.exp(lp) for _, lp in samples]  # type: ignore[arg-type]
        total = sum(raw)
        priors = [r / total for r in raw] if total > 0 else [1.0 / len(samples)] * len(samples)
    else:
        priors = [1.0 / len(samples)] * len(samples)

    merged: dict[str, float] = {}
    for (edit_text, _), prior in zip(samples, priors):
        merged[edit_text] = min(merged.get(edit_text, 0.0) + prior, 1.0)

    new_edges = []
    for edit_text, prior in merged.items():
        if edit_text in node.edges:
            continue
        action = Action(edit_text=edit_text, prior=prior)
        edge = Edge(action=action, child=PatchNode(state=node.state + (action,)))
        node.edges[edit_text] = edge
        new_edges.append(edge)
    return new_edges


# ---------------------------------------------------------------------------
# Simulation and backpropagation


def simulate(
    node: PatchNode,
    context: str,
    backend: policy.Backend,
    evaluate: EvaluateFn,
    budget: int,
) -> tuple[RewardBreakdown, str]:
    """Complete the partial patch greedily and score the assembled candidate."""
    if budget <= 0:
        raise SearchError("simulation budget must be positive")
    prompt = (
        f"{context}\n\nComplete the patch below into a full unified diff. "
        f"Reply with the remaining hunks only (empty if already complete).\n\n"
        f"PATCH SO FAR:\n{node.partial_patch()}"
    )
    request = policy.GenRequest(prompt=prompt, mode=policy.NON_THINKING, temperature=0.0, max_units=budget)
    response = policy.generate(request, backend)
    if response.finish == policy.FINISH_ERROR:
        return RewardBreakdown.invalid("completion failed"), ""
    completion = response.answer.strip()
    if completion:
        extra = extract_diff(completion) or completion + "\n"
        candidate = node.partial_patch() + _with_newline(extra.rstrip("\n"))
    else:
        candidate = node.partial_patch()
    if not candidate.strip():
        return RewardBreakdown.invalid("empty candidate"), ""
    return evaluate(candidate), candidate


def backpropagate(path: Sequence[tuple[PatchNode, Edge]], reward: float) -> None:
    """Incremental-mean value update along a root-to-leaf path.

    Visit counts increment before the mean update, preserving N(s) = sum of
    edge visits at every node on the path.
    """
    if not 0.0 <= reward <= 1.0:
        raise SearchError(f"reward {reward} outside [0, 1]")
    for node, edge in path:
        node.visit_count += 1
        edge.visits += 1
        edge.q += (reward - edge.q) / edge.visits


# ---------------------------------------------------------------------------
# Search loop


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    depth: int
    action_digest: str
    tier: str
    reward: float
    best_so_far: float


@dataclass(frozen=True)
class SearchResult:
    best_patch: str
    best_reward: float
    best_tier: str
    found: bool
    iterations_run: int
    trace: tuple[TraceRecord, ...]
    root: PatchNode


def run_search(
    context: str,
    cfg: SearchConfig,
    backend: policy.Backend,
    evaluate: EvaluateFn,
) -> SearchResult:
    """Iterate select/expand/simulate/backpropagate and return the best candidate found.

    The result is the complete patch with the highest simulation reward, ties
    resolved toward the earliest find. With no complete candidate the result
    is an empty patch flagged as not found.
    """
    root = PatchNode()
    best_patch = ""
    best_reward = -1.0
    best_tier = "invalid"
    trace: list[TraceRecord] = []

    for iteration in range(cfg.iterations):
        node = root
        path: list[tuple[PatchNode, Edge]] = []
        while node.edges and not node.terminal:
            edge = select(node, cfg)
            path.append((node, edge))
            node = edge.child
        if not node.terminal and node.depth < cfg.max_depth:
            expand(node, context, backend, cfg)
            if node.edges:
                edge = select(node, cfg)
                path.append((node, edge))
                node = edge.child

        breakdown, candidate = simulate(node, context, backend, evaluate, cfg.simulation_budget)
        backpropagate(path, breakdown.reward)

        if candidate and breakdown.reward > best_reward:
            best_patch, best_reward, best_tier = candidate, breakdown.reward, breakdown.tier
        trace.append(
            TraceRecord(
                iteration=iteration,
                depth=len(path),
                action_digest=patch_digest(path[-1][1].action.edit_text) if path else "",
                tier=breakdown.tier,
                reward=breakdown.reward,
                best_so_far=max(best_reward, 0.0),
            )
        )

    found = bool(best_patch)
    if not found:
        log.info("search produced no complete candidate in %d iterations", cfg.iterations)
    return SearchResult(
        best_patch=best_patch,
        best_reward=best_reward if found else 0.0,
        best_tier=best_tier if found else "invalid",
        found=found,
        iterations_run=cfg.iterations,
        trace=tuple(trace),
        root=root,
    )


# ---------------------------------------------------------------------------
# Tiered candidate filtering


@dataclass(frozen=True)
class FilterResult:
    candidate: str
    admitted: bool
    breakdown: RewardBreakdown


def tiered_filter(candidates: Sequence[str], evaluate_static: EvaluateFn, evaluate_full: EvaluateFn) -> list[FilterResult]:
    """Gate candidates through static checks; only survivors reach test execution.

    Stage 1 rejects candidates whose content is not even syntactically
    plausible (reward 0.0); stage 2 rejects candidates that do not apply
    (reward 0.2). Survivors are scored by the full evaluator.
    """
    results: list[FilterResult] = []
    for cand in candidates:
        static = evaluate_static(cand)
        if static.tier in ("invalid", "syntax_only"):
            results.append(FilterResult(cand, admitted=False, breakdown=static))
            continue
        results.append(FilterResult(cand, admitted=True, breakdown=evaluate_full(cand)))
    return results
