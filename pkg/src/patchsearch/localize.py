"""Three-level fault localization: file ranking, function ordering, edit-location proposal."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import policy
from .ingest import FUNCTION, METHOD, Definition, FileOutline, IssueReport, RepoSnapshot

log = logging.getLogger(__name__)

EMBED_DIM = 256
STACK_FRAME_BONUS = 0.2

INSERT = "insert"
REPLACE = "replace"
DELETE = "delete"


class LocalizeError(Exception):
    pass


class EmbedError(Exception):
    """Remote embedding failure; callers fall back to lexical-only scoring."""


def tokenize(text: str) -> list[str]:
    return re.findall(r"\w+", text.lower())


# ---------------------------------------------------------------------------
# Lexical index (BM25)


class LexicalIndex:
    """Inverted index over per-file term frequencies with BM25 scoring."""

    def __init__(self, snapshot: RepoSnapshot, k1: float = 1.2, b: float = 0.75):
        if not snapshot.files:
            raise LocalizeError("cannot index an empty snapshot")
        self.k1 = k1
        self.b = b
        self.paths = [f.path for f in snapshot.files]
        self.term_freqs: dict[str, Counter] = {}
        self.doc_lens: dict[str, int] = {}
        df: Counter = Counter()
        for f in snapshot.files:
            tokens = tokenize(f.content)
            tf = Counter(tokens)
            self.term_freqs[f.path] = tf
            self.doc_lens[f.path] = len(tokens)
            for term in tf:
                df[term] += 1
        self.n_docs = len(self.paths)
        self.avgdl = sum(self.doc_lens.values()) / self.n_docs
        self.idf = {
            term: math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5)) for term, n in df.items()
        }

    def score(self, query_tokens: Sequence[str], path: str) -> float:
        tf = self.term_freqs[path]
        dl = self.doc_lens[path]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl) if self.avgdl > 0 else self.k1
        total = 0.0
        for term in query_tokens:
            f = tf.get(term, 0)
            if f == 0:
                continue
            total += self.idf.get(term, 0.0) * f * (self.k1 + 1.0) / (f + norm)
        return total

    def score_all(self, query: str) -> dict[str, float]:
        tokens = tokenize(query)
        return {path: self.score(tokens, path) for path in self.paths}


def build_lexical_index(snapshot: RepoSnapshot, k1: float = 1.2, b: float = 0.75) -> LexicalIndex:
    return LexicalIndex(snapshot, k1=k1, b=b)


# ---------------------------------------------------------------------------
# Embeddings


class EmbeddingVector:
    """Fixed-dimension dense vector, L2-normalized at construction."""

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float]):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite values")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ValueError("embedding has zero norm")
        self.values = arr / norm

    def cosine(self, other: "EmbeddingVector") -> float:
        return float(np.clip(np.dot(self.values, other.values), -1.0, 1.0))


class Embedder(Protocol):
    def embed(self, text: str) -> EmbeddingVector: ...


class HashedEmbedder:
    """Deterministic mock embedding: hashed character n-grams and word features."""

    def __init__(self, dim: int = EMBED_DIM, ngram: int = 3):
        self.dim = dim
        self.ngram = ngram

    def _features(self, text: str) -> list[str]:
        normalized = " ".join(text.lower().split())
        feats = [f"w:{w}" for w in normalized.split()]
        padded = f" {normalized} "
        feats.extend(padded[i : i + self.ngram] for i in range(max(len(padded) - self.ngram + 1, 0)))
        return feats

    def embed(self, text: str) -> EmbeddingVector:
        acc = np.zeros(self.dim, dtype=np.float64)
        for feat in self._features(text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "big")
            sign = 1.0 if h & 1 == 0 else -1.0
            acc[(h >> 1) % self.dim] += sign
        if not acc.any():
            acc[0] = 1.0
        return EmbeddingVector(acc)


class RemoteEmbedder:
    """Embeddings over the generation backend's transport; failures raise EmbedError."""

    def __init__(self, backend):
        self._backend = backend

    def embed(self, text: str) -> EmbeddingVector:
        try:
            return EmbeddingVector(self._backend.embed_values(text))
        except Exception as exc:
            raise EmbedError(str(exc)) from exc


# ---------------------------------------------------------------------------
# File scoring


@dataclass(frozen=True)
class FileScore:
    path: str
    dense: float
    lexical: float
    alpha: float
    hybrid: float
    bonus: float = 0.0

    def __post_init__(self):
        expected = self.alpha * (self.dense + 1.0) / 2.0 + (1.0 - self.alpha) * self.lexical
        if abs(self.hybrid - expected) > 1e-9:
            raise ValueError("hybrid score does not match its mixing formula")

    @property
    def ranking_score(self) -> float:
        return min(self.hybrid + self.bonus, 1.0)


def _frame_bonus_paths(issue: IssueReport, paths: Sequence[str]) -> set[str]:
    hits: set[str] = set()
    for frame_path, _ in issue.stack_frames:
        for path in paths:
            if frame_path == path or frame_path.endswith("/" + path):
                hits.add(path)
    return hits


def score_files(
    issue: IssueReport,
    snapshot: RepoSnapshot,
    index: LexicalIndex,
    embedder: Embedder | None,
    alpha: float = 0.7,
) -> list[FileScore]:
    """Rank files by the hybrid of rescaled cosine and max-normalized lexical score.

    Paths named in the issue's stack frames receive a +0.2 bonus (clamped to
    1.0). A failing embedder downgrades to lexical-only scoring with a warning.
    """
    if not 0.0 <= alpha <= 1.0:
        raise LocalizeError(f"alpha must be in [0, 1], got {alpha}")
    query = issue.normalized or issue.raw

    raw_lexical = index.score_all(query)
    max_lex = max(raw_lexical.values(), default=0.0)
    lexical = {p: (s / max_lex if max_lex > 0 else 0.0) for p, s in raw_lexical.items()}

    dense: dict[str, float] = {p: 0.0 for p in index.paths}
    effective_alpha = alpha
    if embedder is not None and alpha > 0.0:
        try:
            query_vec = embedder.embed(query)
            for f in snapshot.files:
                dense[f.path] = query_vec.cosine(embedder.embed(f.content))
        except EmbedError as exc:
            log.warning("embedding failed (%s); falling back to lexical-only scoring", exc)
            effective_alpha = 0.0
            dense = {p: 0.0 for p in index.paths}
    elif embedder is None:
        effective_alpha = 0.0

    bonus_paths = _frame_bonus_paths(issue, index.paths)
    scores = [
        FileScore(
            path=p,
            dense=dense[p],
            lexical=lexical[p],
            alpha=effective_alpha,
            hybrid=effective_alpha * (dense[p] + 1.0) / 2.0 + (1.0 - effective_alpha) * lexical[p],
            bonus=STACK_FRAME_BONUS if p in bonus_paths else 0.0,
        )
        for p in index.paths
    ]
    scores.sort(key=lambda s: (-s.ranking_score, s.path))
    return scores


# ---------------------------------------------------------------------------
# Function ordering


@dataclass(frozen=True)
class RankedFunction:
    file: str
    definition: Definition


def rank_functions(
    top_files: Sequence[str],
    outlines: Mapping[str, FileOutline],
) -> list[RankedFunction]:
    """Order functions so callees precede callers (topological over the call graph).

    Cycles are broken by clearing the incoming edges of the node with the
    lowest in-degree; remaining ties fall back to (file order, span start).
    """
    nodes: list[RankedFunction] = []
    for path in top_files:
        outline = outlines.get(path)
        if outline is None:
            raise LocalizeError(f"no outline available for {path}")
        for d in outline.definitions:
            if d.kind in (FUNCTION, METHOD):
                nodes.append(RankedFunction(path, d))

    file_order = {path: i for i, path in enumerate(top_files)}
    by_name: dict[str, list[int]] = {}
    for i, node in enumerate(nodes):
        by_name.setdefault(node.definition.name, []).append(i)

    # edge callee -> caller: the callee must appear first
    out_edges: list[set[int]] = [set() for _ in nodes]
    in_degree = [0] * len(nodes)
    for caller_idx, node in enumerate(nodes):
        for name in node.definition.referenced_names:
            for callee_idx in by_name.get(name, []):
                if callee_idx != caller_idx and caller_idx not in out_edges[callee_idx]:
                    out_edges[callee_idx].add(caller_idx)
                    in_degree[caller_idx] += 1

    def priority(i: int) -> tuple[int, int]:
        return (file_order[nodes[i].file], nodes[i].definition.start_line)

    remaining = set(range(len(nodes)))
    ordered: list[int] = []
    while remaining:
        ready = sorted((i for i in remaining if in_degree[i] == 0), key=priority)
        if not ready:
            victim = min(remaining, key=lambda i: (in_degree[i], *priority(i)))
            for src in remaining:
                if victim in out_edges[src]:
                    out_edges[src].discard(victim)
            in_degree[victim] = 0
            continue
        chosen = ready[0]
        ordered.append(chosen)
        remaining.discard(chosen)
        for dst in out_edges[chosen]:
            if dst in remaining:
                in_degree[dst] -= 1
    return [nodes[i] for i in ordered]


# ---------------------------------------------------------------------------
# Edit locations


@dataclass(frozen=True)
class EditLocation:
    file: str
    line_start: int
    line_end: int
    mod_type: str

    def __post_init__(self):
        if self.mod_type not in (INSERT, REPLACE, DELETE):
            raise ValueError(f"unknown mod_type {self.mod_type!r}")
        if self.line_start > self.line_end:
            raise ValueError("line_start > line_end")
        if self.line_start < 1:
            raise ValueError("line numbers are 1-based")


_LOCATION_RE = re.compile(r"^\s*(\S+?)\s*:\s*(\d+)\s*-\s*(\d+)\s*:\s*(insert|replace|delete)\s*$")


def _parse_locations(reply: str, snapshot: RepoSnapshot) -> list[EditLocation]:
    locations: list[EditLocation] = []
    for line in reply.splitlines():
        m = _LOCATION_RE.match(line)
        if not m:
            continue
        path, start, end, mod = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
        sf = snapshot.get(path)
        if sf is None:
            continue
        if mod == INSERT:
            end = start
        if start < 1 or end > max(sf.line_count, 1) or start > end:
            continue
        locations.append(EditLocation(path, start, end, mod))
    return locations


def _location_prompt(issue: IssueReport, ranked: Sequence[RankedFunction], max_locations: int) -> str:
    listing = "\n".join(
        f"{fn.file}:{fn.definition.start_line}-{fn.definition.end_line} {fn.definition.kind} {fn.definition.name}"
        for fn in ranked
    )
    return (
        "Identify the code locations to edit for this issue.\n\n"
        f"ISSUE:\n{issue.normalized}\n\n"
        f"CANDIDATE FUNCTIONS (dependency order):\n{listing}\n\n"
        f"Reply with up to {max_locations} lines, one location each, formatted as\n"
        "path:start-end:insert|replace|delete\n"
    )


def propose_edit_locations(
    issue: IssueReport,
    ranked: Sequence[RankedFunction],
    snapshot: RepoSnapshot,
    backend: policy.Backend,
    max_locations: int = 5,
    mode: str = policy.NON_THINKING,
) -> list[EditLocation]:
    """Ask the backend for edit locations; invalid ones are discarded.

    An unparseable reply is retried once, then the top-ranked definition's
    full span becomes a single replace location.
    """
    if not ranked:
        raise LocalizeError("ranked definition list is empty")
    prompt = _location_prompt(issue, ranked, max_locations)
    for _ in range(2):
        response = policy.generate(policy.GenRequest(prompt=prompt, mode=mode), backend)
        if response.finish == policy.FINISH_ERROR:
            continue
        locations = _parse_locations(response.answer, snapshot)
        if locations:
            return locations[:max_locations]
    top = ranked[0]
    return [EditLocation(top.file, top.definition.start_line, top.definition.end_line, REPLACE)]


# ---------------------------------------------------------------------------
# Localization metric


def loc_at_k(predicted_files: Sequence[str], gold_files: set[str] | frozenset[str], k: int) -> bool:
    """True iff any of the top-k predicted files is a gold file."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold_files:
        raise ValueError("gold file set is empty; Loc@k undefined")
    return any(p in gold_files for p in predicted_files[:k])
