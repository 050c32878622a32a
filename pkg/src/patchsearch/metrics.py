"""Dataset-level evaluation: resolve/apply rates, Loc@k aggregation, CodeBLEU."""

from __future__ import annotations

import ast
import keyword
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from .localize import loc_at_k

NGRAM_ORDER = 4
KEYWORD_WEIGHT = 5.0
SUBTREE_MIN_DEPTH = 2
COMPONENT_WEIGHT = 0.25

_PYTHON_KEYWORDS = frozenset(keyword.kwlist)


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class InstanceOutcome:
    instance_id: str
    patch_present: bool
    applied: bool
    resolved: bool
    predicted_files: tuple[str, ...] = ()
    gold_files: frozenset[str] = frozenset()
    candidate_patch: str | None = None
    reference_patch: str | None = None

    def __post_init__(self):
        if self.resolved and not self.applied:
            raise MetricsError(f"{self.instance_id}: resolved implies applied")
        if self.applied and not self.patch_present:
            raise MetricsError(f"{self.instance_id}: applied implies a patch")


def resolve_rate(outcomes: Sequence[InstanceOutcome]) -> float:
    """Percentage of resolved instances, to 2 decimals."""
    if not outcomes:
        raise MetricsError("resolve rate undefined for an empty outcome set")
    return round(100.0 * sum(o.resolved for o in outcomes) / len(outcomes), 2)


def apply_rate(outcomes: Sequence[InstanceOutcome]) -> float:
    """Percentage of instances whose patch applied without conflicts, to 2 decimals."""
    if not outcomes:
        raise MetricsError("apply rate undefined for an empty outcome set")
    return round(100.0 * sum(o.applied for o in outcomes) / len(outcomes), 2)


def loc_at_k_rate(outcomes: Sequence[InstanceOutcome], k: int) -> float:
    """Mean top-k localization hit rate over the dataset."""
    if not outcomes:
        raise MetricsError("Loc@k undefined for an empty outcome set")
    hits = [loc_at_k(o.predicted_files, o.gold_files, k) for o in outcomes]
    return sum(hits) / len(hits)


# ---------------------------------------------------------------------------
# CodeBLEU


def tokenize_code(code: str) -> list[str]:
    return re.findall(r"\w+|[^\w\s]", code)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _uniform_weight(_: tuple[str, ...]) -> float:
    return 1.0


def _keyword_weight(gram: tuple[str, ...]) -> float:
    return KEYWORD_WEIGHT if any(tok in _PYTHON_KEYWORDS for tok in gram) else 1.0


def _weighted_bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    weight_fn: Callable[[tuple[str, ...]], float],
) -> float:
    """Smoothed 4-gram precision with brevity penalty; counts weighted by weight_fn."""
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, NGRAM_ORDER + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        matched = sum(min(c, ref[g]) * weight_fn(g) for g, c in cand.items())
        total = sum(c * weight_fn(g) for g, c in cand.items())
        log_sum += math.log((matched + 1.0) / (total + 1.0))  # add-one smoothing
    precision = math.exp(log_sum / NGRAM_ORDER)
    if len(candidate) >= len(reference):
        bp = 1.0
    else:
        bp = math.exp(1.0 - len(reference) / len(candidate))
    return min(max(bp * precision, 0.0), 1.0)


def _subtree_depth(node: ast.AST) -> int:
    children = list(ast.iter_child_nodes(node))
    if not children:
        return 1
    return 1 + max(_subtree_depth(c) for c in children)


def _subtree_shape(node: ast.AST) -> str:
    children = ",".join(_subtree_shape(c) for c in ast.iter_child_nodes(node))
    return f"{type(node).__name__}({children})"


def _subtree_multiset(tree: ast.AST) -> Counter:
    shapes: Counter = Counter()

    def walk(node: ast.AST) -> int:
        children = list(ast.iter_child_nodes(node))
        depth = 1 + max((walk(c) for c in children), default=0)
        if depth >= SUBTREE_MIN_DEPTH:
            shapes[_subtree_shape(node)] += 1
        return depth

    walk(tree)
    return shapes


def _ast_match(candidate: ast.AST, reference: ast.AST) -> float:
    """Fraction of the candidate's depth>=2 subtrees present in the reference (by shape)."""
    cand = _subtree_multiset(candidate)
    ref = _subtree_multiset(reference)
    total = sum(cand.values())
    if total == 0:
        return 1.0 if sum(ref.values()) == 0 else 0.0
    matched = sum(min(c, ref[shape]) for shape, c in cand.items())
    return matched / total


class _NameEventCollector(ast.NodeVisitor):
    """Orders variable definition/use events in source order, names abstracted away."""

    def __init__(self):
        self.events: list[tuple[str, str]] = []  # (name, 'def' | 'use')

    def visit_Name(self, node: ast.Name):
        if isinstance(node.ctx, ast.Load):
            self.events.append((node.id, "use"))
        elif isinstance(node.ctx, (ast.Store, ast.Del)):
            self.events.append((node.id, "def"))
        self.generic_visit(node)

    def visit_arg(self, node: ast.arg):
        self.events.append((node.arg, "def"))
        self.generic_visit(node)

    def visit_FunctionDef(self, node: ast.FunctionDef):
        self.events.append((node.name, "def"))
        self.generic_visit(node)

    def visit_AsyncFunctionDef(self, node: ast.AsyncFunctionDef):
        self.events.append((node.name, "def"))
        self.generic_visit(node)

    def visit_ClassDef(self, node: ast.ClassDef):
        self.events.append((node.name, "def"))
        self.generic_visit(node)


def _def_use_pairs(tree: ast.AST) -> frozenset[tuple[int, int]]:
    """Variable-position def-use pairs, invariant under renaming.

    Each variable is identified by the order of its first definition; each use
    pairs that identifier with the use's ordinal for the variable.
    """
    collector = _NameEventCollector()
    collector.visit(tree)
    var_ids: dict[str, int] = {}
    use_counts: dict[str, int] = {}
    pairs: set[tuple[int, int]] = set()
    for name, kind in collector.events:
        if kind == "def":
            if name not in var_ids:
                var_ids[name] = len(var_ids)
        elif name in var_ids:
            ordinal = use_counts.get(name, 0)
            use_counts[name] = ordinal + 1
            pairs.add((var_ids[name], ordinal))
    return frozenset(pairs)


def _dataflow_match(candidate: ast.AST, reference: ast.AST) -> float:
    cand = _def_use_pairs(candidate)
    ref = _def_use_pairs(reference)
    if not cand and not ref:
        return 1.0
    union = cand | ref
    return len(cand & ref) / len(union)


@dataclass(frozen=True)
class CodeBleuComponents:
    bleu: float
    weighted_bleu: float
    ast_match: float
    dataflow_match: float

    @property
    def total(self) -> float:
        return COMPONENT_WEIGHT * (self.bleu + self.weighted_bleu + self.ast_match + self.dataflow_match)


def code_bleu_components(candidate: str, reference: str) -> CodeBleuComponents:
    """The four CodeBLEU components; unparseable snippets zero the syntactic pair."""
    if not candidate or not reference:
        raise MetricsError("code_bleu requires nonempty snippets")
    cand_tokens = tokenize_code(candidate)
    ref_tokens = tokenize_code(reference)
    bleu = _weighted_bleu(cand_tokens, ref_tokens, _uniform_weight)
    weighted = _weighted_bleu(cand_tokens, ref_tokens, _keyword_weight)
    try:
        cand_tree = ast.parse(candidate)
        ref_tree = ast.parse(reference)
    except SyntaxError:
        return CodeBleuComponents(bleu, weighted, 0.0, 0.0)
    return CodeBleuComponents(
        bleu=bleu,
        weighted_bleu=weighted,
        ast_match=_ast_match(cand_tree, ref_tree),
        dataflow_match=_dataflow_match(cand_tree, ref_tree),
    )


def code_bleu(candidate: str, reference: str) -> float:
    """0.25-weighted combination of lexical, keyword-weighted, AST, and dataflow matches."""
    return code_bleu_components(candidate, reference).total
