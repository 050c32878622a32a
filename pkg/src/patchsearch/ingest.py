"""Turn a repository checkout and a raw issue into structured, chunked, length-bounded inputs."""

from __future__ import annotations

import ast
import fnmatch
import html
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

PYTHON = "python"
OTHER = "other"

DEFAULT_INCLUDE = ("*.py",)
DEFAULT_EXCLUDE = (
    ".git",
    ".tox",
    ".venv",
    "__pycache__",
    "build",
    "dist",
    "node_modules",
    "testdata",
    "third_party",
    "vendor",
    "vendored",
)
DEFAULT_WEIGHTS = {
    "stack_frame": 1.0,
    "error_message": 0.9,
    "issue_body": 0.7,
    "code_chunk": 0.5,
}


class IngestError(Exception):
    """Fatal ingest failure (unreadable root, bad configuration)."""


def unit_length(text: str) -> int:
    """Length in whitespace-delimited units, the budget currency for chunking and packing."""
    return len(text.split())


@dataclass(frozen=True)
class IngestConfig:
    include: tuple[str, ...] = DEFAULT_INCLUDE
    exclude: tuple[str, ...] = DEFAULT_EXCLUDE
    max_chunk_units: int = 2000
    overlap_lines: int = 8
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self):
        if self.max_chunk_units <= self.overlap_lines:
            raise IngestError(
                f"max_chunk_units ({self.max_chunk_units}) must exceed overlap_lines ({self.overlap_lines})"
            )
        if self.overlap_lines < 0:
            raise IngestError("overlap_lines must be >= 0")


@dataclass(frozen=True)
class SourceFile:
    path: str
    content: str
    line_count: int
    language_tag: str

    @classmethod
    def make(cls, path: str, content: str) -> "SourceFile":
        tag = PYTHON if path.endswith(".py") else OTHER
        return cls(path=path, content=content, line_count=len(content.splitlines()), language_tag=tag)

    def lines(self) -> list[str]:
        """File content as a list of lines with their terminators preserved."""
        return self.content.splitlines(keepends=True)


def _check_relative(path: str) -> None:
    if path.startswith("/") or re.match(r"^[A-Za-z]:", path):
        raise IngestError(f"absolute path in snapshot: {path!r}")
    if ".." in path.split("/"):
        raise IngestError(f"path escapes root: {path!r}")


@dataclass(frozen=True)
class RepoSnapshot:
    """Immutable view of a repository checkout: relative paths mapped to file contents."""

    root: str
    files: tuple[SourceFile, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        seen: set[str] = set()
        for f in self.files:
            _check_relative(f.path)
            if f.path in seen:
                raise IngestError(f"duplicate path in snapshot: {f.path!r}")
            seen.add(f.path)

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(f.path for f in self.files)

    def get(self, path: str) -> SourceFile | None:
        for f in self.files:
            if f.path == path:
                return f
        return None

    def with_file(self, path: str, content: str) -> "RepoSnapshot":
        """Return a new snapshot with ``path`` added or replaced."""
        kept = tuple(f for f in self.files if f.path != path)
        files = tuple(sorted(kept + (SourceFile.make(path, content),), key=lambda f: f.path))
        return replace(self, files=files)

    def without_file(self, path: str) -> "RepoSnapshot":
        return replace(self, files=tuple(f for f in self.files if f.path != path))


def _excluded(relpath: str, patterns: Sequence[str]) -> bool:
    parts = relpath.split("/")
    for pat in patterns:
        if fnmatch.fnmatch(relpath, pat) or any(fnmatch.fnmatch(p, pat) for p in parts):
            return True
    return False


def _included(relpath: str, patterns: Sequence[str]) -> bool:
    name = relpath.rsplit("/", 1)[-1]
    return any(fnmatch.fnmatch(relpath, pat) or fnmatch.fnmatch(name, pat) for pat in patterns)


def scan_repository(root: str | Path, config: IngestConfig | None = None) -> RepoSnapshot:
    """Walk ``root`` and collect matching files into an immutable snapshot.

    Files are ordered lexicographically by relative path. Unreadable files are
    skipped and recorded in ``snapshot.warnings``; an unreadable root is fatal.
    """
    config = config or IngestConfig()
    root_path = Path(root)
    if not root_path.is_dir():
        raise IngestError(f"repository root not readable: {root}")

    files: list[SourceFile] = []
    warnings: list[str] = []
    for p in sorted(root_path.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(root_path).as_posix()
        if _excluded(rel, config.exclude) or not _included(rel, config.include):
            continue
        try:
            content = p.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            warnings.append(f"{rel}: skipped ({exc.__class__.__name__}: {exc})")
            continue
        files.append(SourceFile.make(rel, content))
    return RepoSnapshot(root=str(root_path), files=tuple(files), warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Outlines


MODULE = "module"
CLASS = "class"
FUNCTION = "function"
METHOD = "method"


@dataclass(frozen=True)
class Definition:
    name: str
    kind: str
    start_line: int
    end_line: int
    referenced_names: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.start_line > self.end_line:
            raise ValueError(f"definition {self.name}: start {self.start_line} > end {self.end_line}")

    def contains(self, other: "Definition") -> bool:
        return self.start_line <= other.start_line and other.end_line <= self.end_line


@dataclass(frozen=True)
class FileOutline:
    path: str
    definitions: tuple[Definition, ...]
    degraded: bool = False


class _CallCollector(ast.NodeVisitor):
    def __init__(self):
        self.names: set[str] = set()

    def visit_Call(self, node: ast.Call):
        func = node.func
        if isinstance(func, ast.Name):
            self.names.add(func.id)
        elif isinstance(func, ast.Attribute):
            self.names.add(func.attr)
        self.generic_visit(node)


def _called_names(node: ast.AST) -> frozenset[str]:
    collector = _CallCollector()
    collector.visit(node)
    return frozenset(collector.names)


def _def_span(node: ast.AST) -> tuple[int, int]:
    start = node.lineno
    for dec in getattr(node, "decorator_list", []):
        start = min(start, dec.lineno)
    return start, node.end_lineno


def parse_outline(file: SourceFile) -> FileOutline:
    """Extract class/function definitions with spans and called names.

    Unparseable or non-Python files degrade to a single whole-file module
    definition so downstream stages stay total.
    """
    if file.language_tag != PYTHON or file.line_count == 0:
        return _degraded_outline(file)
    try:
        tree = ast.parse(file.content)
    except (SyntaxError, ValueError):
        return _degraded_outline(file)

    defs: list[Definition] = []

    def walk(node: ast.AST, inside_class: bool):
        for child in ast.iter_child_nodes(node):
            if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
                kind = METHOD if inside_class else FUNCTION
                start, end = _def_span(child)
                defs.append(Definition(child.name, kind, start, end, _called_names(child)))
                walk(child, inside_class=False)
            elif isinstance(child, ast.ClassDef):
                start, end = _def_span(child)
                defs.append(Definition(child.name, CLASS, start, end, _called_names(child)))
                walk(child, inside_class=True)
            else:
                walk(child, inside_class)

    walk(tree, inside_class=False)
    defs.sort(key=lambda d: (d.start_line, -d.end_line))
    return FileOutline(path=file.path, definitions=tuple(defs), degraded=False)


def _degraded_outline(file: SourceFile) -> FileOutline:
    if file.line_count == 0:
        return FileOutline(path=file.path, definitions=(), degraded=True)
    stem = file.path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    whole = Definition(stem, MODULE, 1, file.line_count)
    return FileOutline(path=file.path, definitions=(whole,), degraded=True)


def build_outlines(snapshot: RepoSnapshot) -> dict[str, FileOutline]:
    return {f.path: parse_outline(f) for f in snapshot.files}


# ---------------------------------------------------------------------------
# Chunking


WHOLE_DEFINITION = "whole_definition"
FRAGMENT = "fragment"


@dataclass(frozen=True)
class CodeChunk:
    file: str
    start_line: int
    end_line: int
    kind: str
    text: str
    overlap: int = 0

    def __post_init__(self):
        if self.start_line > self.end_line:
            raise ValueError("chunk start_line > end_line")


def _top_level(defs: Sequence[Definition]) -> list[Definition]:
    tops: list[Definition] = []
    for d in defs:
        if not any(o is not d and o.contains(d) for o in defs):
            tops.append(d)
    return sorted(tops, key=lambda d: d.start_line)


def _children_of(parent: Definition, defs: Sequence[Definition]) -> list[Definition]:
    inner = [d for d in defs if d is not parent and parent.contains(d)]
    return _top_level(inner)


def _max_uniform_window(prefix: list[int], lo: int, hi: int, budget: int) -> int:
    """Largest line count F such that every F-line window in [lo, hi] fits the budget."""
    span = hi - lo + 1

    def worst(n: int) -> int:
        return max(prefix[s + n] - prefix[s] for s in range(lo - 1, hi - n + 1))

    best = 1
    low, high = 1, span
    while low <= high:
        mid = (low + high) // 2
        if worst(mid) <= budget:
            best = mid
            low = mid + 1
        else:
            high = mid - 1
    return best


def chunk_file(
    file: SourceFile,
    outline: FileOutline,
    max_units: int,
    overlap_lines: int,
) -> list[CodeChunk]:
    """Split a file into chunks no longer than ``max_units`` whitespace units.

    Definitions that fit become single whole_definition chunks. Oversized
    definitions recurse into their nested definitions when those exist, and
    otherwise split into fixed-stride fragments where consecutive starts obey
    next_start = prev_end - overlap + 1.
    """
    if max_units <= overlap_lines:
        raise IngestError(f"max_units ({max_units}) must exceed overlap ({overlap_lines})")
    lines = file.lines()
    if not lines:
        return []
    tokens = [unit_length(line) for line in lines]
    prefix = [0]
    for t in tokens:
        prefix.append(prefix[-1] + t)

    def units(lo: int, hi: int) -> int:
        return prefix[hi] - prefix[lo - 1]

    def slice_text(lo: int, hi: int) -> str:
        return "".join(lines[lo - 1 : hi])

    chunks: list[CodeChunk] = []

    def emit_fragments(lo: int, hi: int) -> None:
        width = _max_uniform_window(prefix, lo, hi, max_units)
        delta = overlap_lines if width > overlap_lines else 0
        if delta == 0 and overlap_lines:
            log.warning("%s: fragment width %d <= overlap %d, overlap disabled", file.path, width, overlap_lines)
        stride = width - delta
        start = lo
        while start <= hi:
            end = min(start + width - 1, hi)
            chunks.append(CodeChunk(file.path, start, end, FRAGMENT, slice_text(start, end), overlap=delta))
            start += stride

    def emit_region(lo: int, hi: int, defn: Definition | None) -> None:
        if lo > hi:
            return
        if units(lo, hi) <= max_units:
            kind = WHOLE_DEFINITION if defn is not None else FRAGMENT
            chunks.append(CodeChunk(file.path, lo, hi, kind, slice_text(lo, hi)))
            return
        children = _children_of(defn, outline.definitions) if defn is not None else []
        if not children:
            emit_fragments(lo, hi)
            return
        cursor = lo
        for child in children:
            if child.start_line > cursor:
                emit_region(cursor, child.start_line - 1, None)
            emit_region(child.start_line, child.end_line, child)
            cursor = child.end_line + 1
        emit_region(cursor, hi, None)

    cursor = 1
    for defn in _top_level(outline.definitions):
        if defn.start_line > cursor:
            emit_region(cursor, defn.start_line - 1, None)
        emit_region(defn.start_line, min(defn.end_line, file.line_count), defn)
        cursor = defn.end_line + 1
    if cursor <= file.line_count:
        emit_region(cursor, file.line_count, None)
    return chunks


def reconstruct_file(chunks: Sequence[CodeChunk]) -> str:
    """Rebuild file content from chunks, deduplicating overlap regions."""
    out: list[str] = []
    covered = 0
    for chunk in sorted(chunks, key=lambda c: (c.start_line, -c.end_line)):
        if chunk.end_line <= covered:
            continue
        lines = chunk.text.splitlines(keepends=True)
        skip = max(0, covered + 1 - chunk.start_line)
        out.extend(lines[skip:])
        covered = chunk.end_line
    return "".join(out)


# ---------------------------------------------------------------------------
# Issue normalization


@dataclass(frozen=True)
class IssueReport:
    raw: str
    normalized: str
    error_messages: tuple[str, ...] = ()
    stack_frames: tuple[tuple[str, int], ...] = ()
    code_blocks: tuple[str, ...] = ()
    repro_steps: tuple[str, ...] = ()


_FENCE_RE = re.compile(r"^(\s*)(`{3,}|~{3,})\s*(\S*)\s*$")
_TAG_RE = re.compile(r"</?[A-Za-z][^<>]*>|<!--.*?-->", re.DOTALL)
_FRAME_RE = re.compile(r'File "([^"]+)", line (\d+)')
_ERROR_RE = re.compile(r"^\s*(?:[A-Za-z_][\w.]*(?:Error|Exception|Warning)\b.*|[Ee][Rr][Rr][Oo][Rr]\s*:.*)$")
_STEP_RE = re.compile(r"^\s*\d+[.)]\s+(.+)$")


def _unescape_fixpoint(text: str) -> str:
    for _ in range(10):
        unescaped = html.unescape(text)
        if unescaped == text:
            return text
        text = unescaped
    return text


def _clean_outside(line: str) -> str:
    # unescaping can reveal new tags (and stripping can concatenate into new
    # entities), so iterate the pair to a fixpoint for idempotence
    for _ in range(10):
        cleaned = _TAG_RE.sub("", _unescape_fixpoint(line))
        if cleaned == line:
            break
        line = cleaned
    return line.rstrip()


def _clean(raw: str) -> tuple[str, list[str]]:
    """Standardize fences and strip HTML outside code fences; returns (text, fenced blocks)."""
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    out: list[str] = []
    blocks: list[str] = []
    current_block: list[str] | None = None
    blank_run = 0
    for line in text.split("\n"):
        fence = _FENCE_RE.match(line)
        if fence:
            blank_run = 0
            if current_block is None:
                current_block = []
                out.append(("```" + fence.group(3)).rstrip())
            else:
                blocks.append("\n".join(current_block))
                current_block = None
                out.append("```")
            continue
        if current_block is not None:
            current_block.append(line)
            out.append(line)
            continue
        cleaned = _clean_outside(line)
        if cleaned == "":
            blank_run += 1
            if blank_run > 2:
                continue
        else:
            blank_run = 0
        out.append(cleaned)
    if current_block is not None:
        blocks.append("\n".join(current_block))
    result = "\n".join(out).strip("\n")
    return result, blocks


def extract_stack_frames(text: str) -> tuple[tuple[str, int], ...]:
    """Pull (path, line) pairs out of Python-style traceback text, in source order."""
    frames: list[tuple[str, int]] = []
    for m in _FRAME_RE.finditer(text):
        path, line_text = m.group(1), m.group(2)
        line = int(line_text)
        if line < 1 or path.startswith("<"):
            continue
        frames.append((path, line))
    return tuple(frames)


def normalize_issue(raw: str) -> IssueReport:
    """Clean markup from an issue body and extract its structured components.

    Cleaning is idempotent: normalizing the normalized text changes nothing.
    """
    if raw == "":
        return IssueReport(raw="", normalized="")
    normalized, blocks = _clean(raw)
    errors = tuple(
        line.strip() for line in normalized.split("\n") if _ERROR_RE.match(line)
    )
    steps = tuple(m.group(1).strip() for line in normalized.split("\n") if (m := _STEP_RE.match(line)))
    return IssueReport(
        raw=raw,
        normalized=normalized,
        error_messages=errors,
        stack_frames=extract_stack_frames(normalized),
        code_blocks=tuple(blocks),
        repro_steps=steps,
    )


# ---------------------------------------------------------------------------
# Context packing


ISSUE_SECTION = "issue_section"
CHUNK = "chunk"
STACK_FRAME = "stack_frame"


@dataclass(frozen=True)
class ContextItem:
    source: str
    text: str
    weight: float
    relevance: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if not 0.0 <= self.relevance <= 1.0:
            raise ValueError("relevance must be in [0, 1]")

    @property
    def score(self) -> float:
        return self.weight * self.relevance

    @property
    def length(self) -> int:
        return unit_length(self.text)


@dataclass(frozen=True)
class PackedContext:
    items: tuple[ContextItem, ...]
    budget: int
    used_length: int

    def __post_init__(self):
        if self.used_length > self.budget:
            raise ValueError("packed context exceeds budget")
        scores = [i.score for i in self.items]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("packed items must be sorted by descending score")

    def render(self) -> str:
        return "\n\n".join(item.text for item in self.items)


def pack_context(candidates: Sequence[ContextItem], budget: int) -> PackedContext:
    """Greedy knapsack by score density, with a best-single-item safeguard.

    Items are whole: nothing is truncated mid-line. The safeguard keeps the
    packed score within half of the exhaustive optimum.
    """
    if budget <= 0:
        return PackedContext(items=(), budget=max(budget, 0), used_length=0)

    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].score / max(candidates[i].length, 1), -candidates[i].score, i),
    )
    chosen: list[int] = []
    used = 0
    for i in order:
        item = candidates[i]
        if used + item.length <= budget:
            chosen.append(i)
            used += item.length

    greedy_score = sum(candidates[i].score for i in chosen)
    best_single = None
    for i, item in enumerate(candidates):
        if item.length <= budget and (best_single is None or item.score > candidates[best_single].score):
            best_single = i
    if best_single is not None and candidates[best_single].score > greedy_score:
        chosen = [best_single]
        used = candidates[best_single].length

    items = tuple(sorted((candidates[i] for i in chosen), key=lambda it: -it.score))
    return PackedContext(items=items, budget=budget, used_length=used)


def issue_items(issue: IssueReport, weights: Mapping[str, float] | None = None) -> list[ContextItem]:
    """Context candidates derived from an issue: body, errors, and stack frames."""
    weights = weights or DEFAULT_WEIGHTS
    items: list[ContextItem] = []
    if issue.normalized:
        items.append(ContextItem(ISSUE_SECTION, issue.normalized, weights.get("issue_body", 0.7), 1.0))
    for msg in issue.error_messages:
        items.append(ContextItem(ISSUE_SECTION, msg, weights.get("error_message", 0.9), 1.0))
    for path, line in issue.stack_frames:
        items.append(ContextItem(STACK_FRAME, f"{path}:{line}", weights.get("stack_frame", 1.0), 1.0))
    return items
