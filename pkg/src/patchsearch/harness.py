"""Execution substrate: patch application, syntax validation, test running, tiered rewards."""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import re
import shutil
import subprocess
import sys
import tempfile
import textwrap
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .ingest import PYTHON, RepoSnapshot

log = logging.getLogger(__name__)

_spawn_lock = threading.Lock()
_spawn_count = 0


def spawn_count() -> int:
    """Number of test subprocesses spawned since the last reset."""
    return _spawn_count


def reset_spawn_counter() -> None:
    global _spawn_count
    with _spawn_lock:
        _spawn_count = 0


def _count_spawn() -> None:
    global _spawn_count
    with _spawn_lock:
        _spawn_count += 1


class PatchFormatError(ValueError):
    """Diff text that cannot be parsed into hunks."""


@dataclass(frozen=True)
class ConflictReport:
    file: str
    hunk_index: int
    reason: str

    def __str__(self) -> str:
        return f"{self.file}: hunk {self.hunk_index + 1}: {self.reason}"


class PatchConflictError(Exception):
    def __init__(self, report: ConflictReport):
        super().__init__(str(report))
        self.report = report


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[str, ...]
    no_newline_old: bool = False
    no_newline_new: bool = False

    def __post_init__(self):
        old = sum(1 for l in self.lines if not l or l[0] in " -")
        new = sum(1 for l in self.lines if not l or l[0] in " +")
        if old != self.old_len or new != self.new_len:
            raise PatchFormatError(
                f"hunk body ({old} old, {new} new) does not match header "
                f"(-{self.old_start},{self.old_len} +{self.new_start},{self.new_len})"
            )

    def old_lines(self) -> list[str]:
        return [l[1:] if l else "" for l in self.lines if not l or l[0] in " -"]

    def new_lines(self) -> list[str]:
        return [l[1:] if l else "" for l in self.lines if not l or l[0] in " +"]

    def added_lines(self) -> list[str]:
        return [l[1:] for l in self.lines if l.startswith("+")]


@dataclass(frozen=True)
class FilePatch:
    old_path: str | None
    new_path: str | None
    hunks: tuple[Hunk, ...]

    @property
    def target(self) -> str:
        path = self.new_path if self.new_path is not None else self.old_path
        assert path is not None
        return path


@dataclass(frozen=True)
class Patch:
    diff_text: str
    files: tuple[FilePatch, ...]

    @property
    def hunks(self) -> list[tuple[str, Hunk]]:
        return [(fp.target, h) for fp in self.files for h in fp.hunks]

    def added_lines(self) -> list[str]:
        return [l for fp in self.files for h in fp.hunks for l in h.added_lines()]


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_SKIP_PREFIXES = ("diff --git", "index ", "similarity index", "rename from", "rename to",
                  "new file mode", "deleted file mode", "old mode", "new mode")


def _strip_header_path(header: str) -> str | None:
    path = header.split("\t")[0].strip()
    if path == "/dev/null":
        return None
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


def parse_patch(diff_text: str) -> Patch:
    """Parse a unified diff into file patches, validating hunk arithmetic."""
    lines = diff_text.split("\n")
    files: list[FilePatch] = []
    i = 0
    n = len(lines)

    def parse_hunks() -> tuple[Hunk, ...]:
        nonlocal i
        hunks: list[Hunk] = []
        while i < n:
            m = _HUNK_RE.match(lines[i])
            if not m:
                break
            old_start = int(m.group(1))
            old_len = int(m.group(2)) if m.group(2) is not None else 1
            new_start = int(m.group(3))
            new_len = int(m.group(4)) if m.group(4) is not None else 1
            i += 1
            body: list[str] = []
            seen_old = seen_new = 0
            nn_old = nn_new = False
            while i < n and (seen_old < old_len or seen_new < new_len):
                line = lines[i]
                if line.startswith("\\"):
                    marker_side = body[-1][0] if body and body[-1] else " "
                    if marker_side in " -":
                        nn_old = True
                    if marker_side in " +":
                        nn_new = True
                    i += 1
                    continue
                tag = line[0] if line else " "
                if tag == " " or line == "":
                    seen_old += 1
                    seen_new += 1
                elif tag == "-":
                    seen_old += 1
                elif tag == "+":
                    seen_new += 1
                else:
                    raise PatchFormatError(f"unexpected line inside hunk: {line!r}")
                body.append(line)
                i += 1
            if seen_old != old_len or seen_new != new_len:
                raise PatchFormatError(
                    f"truncated hunk at -{old_start},{old_len} +{new_start},{new_len}"
                )
            if i < n and lines[i].startswith("\\"):
                if body and body[-1] and body[-1][0] in " -":
                    nn_old = True
                if body and body[-1] and body[-1][0] in " +":
                    nn_new = True
                i += 1
            hunks.append(Hunk(old_start, old_len, new_start, new_len, tuple(body), nn_old, nn_new))
        return tuple(hunks)

    while i < n:
        line = lines[i]
        if line.startswith("--- "):
            old_path = _strip_header_path(line[4:])
            i += 1
            if i >= n or not lines[i].startswith("+++ "):
                raise PatchFormatError("'---' header without matching '+++'")
            new_path = _strip_header_path(lines[i][4:])
            if old_path is None and new_path is None:
                raise PatchFormatError("both sides of a file header are /dev/null")
            i += 1
            hunks = parse_hunks()
            if not hunks:
                raise PatchFormatError(f"file header for {new_path or old_path} has no hunks")
            starts = [h.old_start for h in hunks]
            if starts != sorted(starts):
                raise PatchFormatError("hunks out of order")
            files.append(FilePatch(old_path, new_path, hunks))
        elif line.startswith(_SKIP_PREFIXES) or not line.strip():
            i += 1
        else:
            raise PatchFormatError(f"unexpected content outside hunks: {line!r}")

    if not files:
        raise PatchFormatError("no file patches found")
    return Patch(diff_text=diff_text, files=tuple(files))


def render_patch(files: Sequence[FilePatch]) -> str:
    """Render file patches back to unified diff text."""
    out: list[str] = []
    for fp in files:
        out.append(f"--- {'a/' + fp.old_path if fp.old_path is not None else '/dev/null'}")
        out.append(f"+++ {'b/' + fp.new_path if fp.new_path is not None else '/dev/null'}")
        for h in fp.hunks:
            out.append(f"@@ -{h.old_start},{h.old_len} +{h.new_start},{h.new_len} @@")
            out.extend(h.lines)
            if h.no_newline_old or h.no_newline_new:
                out.append("\\ No newline at end of file")
    return "\n".join(out) + "\n"


def reverse_patch(patch: Patch) -> Patch:
    """Swap old/new sides so that applying the result undoes the original."""
    flipped: list[FilePatch] = []
    for fp in patch.files:
        hunks = tuple(
            Hunk(
                old_start=h.new_start,
                old_len=h.new_len,
                new_start=h.old_start,
                new_len=h.old_len,
                lines=tuple(_flip_line(l) for l in h.lines),
                no_newline_old=h.no_newline_new,
                no_newline_new=h.no_newline_old,
            )
            for h in fp.hunks
        )
        flipped.append(FilePatch(old_path=fp.new_path, new_path=fp.old_path, hunks=hunks))
    text = render_patch(flipped)
    return Patch(diff_text=text, files=tuple(flipped))


def _flip_line(line: str) -> str:
    if line.startswith("-"):
        return "+" + line[1:]
    if line.startswith("+"):
        return "-" + line[1:]
    return line


def _split_content(content: str) -> tuple[list[str], bool]:
    if content == "":
        return [], True
    trailing = content.endswith("\n")
    lines = content.split("\n")
    if trailing:
        lines.pop()
    return lines, trailing


def _join_content(lines: list[str], trailing: bool) -> str:
    if not lines:
        return ""
    return "\n".join(lines) + ("\n" if trailing else "")


def apply_patch(snapshot: RepoSnapshot, patch: Patch) -> RepoSnapshot:
    """Apply a parsed patch with exact context matching (zero fuzz).

    Pure: the input snapshot is untouched. Context drift of even one line is
    a conflict, reported with file and hunk. Raises PatchConflictError.
    """
    result = snapshot
    for fp in patch.files:
        result = _apply_file(result, fp)
    return result


def _apply_file(snapshot: RepoSnapshot, fp: FilePatch) -> RepoSnapshot:
    target = fp.target
    if fp.old_path is None:
        if snapshot.get(target) is not None:
            raise PatchConflictError(ConflictReport(target, 0, "new file already exists"))
        lines: list[str] = []
        trailing = True
    else:
        existing = snapshot.get(fp.old_path)
        if existing is None:
            raise PatchConflictError(ConflictReport(fp.old_path, 0, "file not in snapshot"))
        lines, trailing = _split_content(existing.content)

    offset = 0
    for idx, hunk in enumerate(fp.hunks):
        old = hunk.old_lines()
        new = hunk.new_lines()
        if hunk.old_len == 0:
            pos = hunk.old_start + offset
        else:
            pos = hunk.old_start - 1 + offset
        if pos < 0 or pos + len(old) > len(lines):
            raise PatchConflictError(
                ConflictReport(target, idx, f"hunk range {pos + 1}..{pos + len(old)} outside file")
            )
        if lines[pos : pos + len(old)] != old:
            mismatch = next(
                (pos + j + 1 for j, l in enumerate(old) if pos + j >= len(lines) or lines[pos + j] != l),
                pos + 1,
            )
            raise PatchConflictError(ConflictReport(target, idx, f"context mismatch at line {mismatch}"))
        if hunk.no_newline_old and pos + len(old) == len(lines) and trailing:
            raise PatchConflictError(ConflictReport(target, idx, "expected no trailing newline"))
        lines[pos : pos + len(old)] = new
        offset += len(new) - len(old)
        if pos + len(new) == len(lines):
            trailing = not hunk.no_newline_new

    if fp.new_path is None or not lines:
        result = snapshot.without_file(fp.old_path or target)
        if fp.new_path is not None:
            result = result.with_file(fp.new_path, "")
        return result
    result = snapshot
    if fp.old_path is not None and fp.new_path is not None and fp.old_path != fp.new_path:
        result = result.without_file(fp.old_path)
    return result.with_file(target, _join_content(lines, trailing))


def patch_digest(diff_text: str) -> str:
    return hashlib.sha256(diff_text.encode("utf-8")).hexdigest()[:12]


def extract_diff(text: str) -> str | None:
    """Find the unified diff inside free-form model output, if any."""
    candidates = [text]
    for marker in ("--- ", "diff --git"):
        idx = text.find(marker)
        if idx > 0:
            candidates.append(text[idx:])
    fenced = re.findall(r"```(?:diff|patch)?\n(.*?)```", text, flags=re.DOTALL)
    candidates.extend(fenced)
    for cand in candidates:
        cand = cand.strip("\n")
        if not cand:
            continue
        try:
            parse_patch(cand + "\n" if not cand.endswith("\n") else cand)
            return cand if cand.endswith("\n") else cand + "\n"
        except PatchFormatError:
            continue
    return None


def first_hunk_diff(text: str) -> str | None:
    """Reduce model output to a minimal diff holding only its first hunk."""
    diff = extract_diff(text)
    if diff is None:
        return None
    patch = parse_patch(diff)
    fp = patch.files[0]
    return render_patch([FilePatch(fp.old_path, fp.new_path, fp.hunks[:1])])


# ---------------------------------------------------------------------------
# Syntax checking


@dataclass(frozen=True)
class SyntaxReport:
    valid: bool
    diagnostics: tuple[tuple[str, int, str], ...] = ()


def check_syntax(snapshot: RepoSnapshot, paths: Sequence[str] | None = None) -> SyntaxReport:
    """Parse the given (or all) Python files; diagnostics carry the first failure per file."""
    targets = paths if paths is not None else [f.path for f in snapshot.files if f.language_tag == PYTHON]
    diags: list[tuple[str, int, str]] = []
    for path in targets:
        sf = snapshot.get(path)
        if sf is None or sf.language_tag != PYTHON:
            continue
        try:
            ast.parse(sf.content)
        except SyntaxError as exc:
            diags.append((path, exc.lineno or 1, exc.msg or "syntax error"))
    return SyntaxReport(valid=not diags, diagnostics=tuple(diags))


def candidate_content_valid(patch: Patch) -> bool:
    """Heuristic check that a patch's added lines parse as Python on their own."""
    added = patch.added_lines()
    if not added:
        return True
    fragment = textwrap.dedent("\n".join(added))
    try:
        ast.parse(fragment)
        return True
    except SyntaxError:
        return False


# ---------------------------------------------------------------------------
# Test execution


OUTCOME_PASS = "pass"
OUTCOME_FAIL = "fail"
OUTCOME_ERROR = "error"

DEFAULT_TEST_COMMAND = ("{python}", "-m", "pytest", "-q", "{test_id}")


@dataclass(frozen=True)
class SuiteSpec:
    test_ids: tuple[str, ...]
    f2p: tuple[str, ...] = ()
    p2p: tuple[str, ...] = ()
    command: tuple[str, ...] = DEFAULT_TEST_COMMAND

    def __post_init__(self):
        if not self.test_ids:
            raise ValueError("suite must name at least one test")
        known = set(self.test_ids)
        missing = [t for t in (*self.f2p, *self.p2p) if t not in known]
        if missing:
            raise ValueError(f"f2p/p2p ids not in suite: {missing}")


@dataclass(frozen=True)
class TestSuiteResult:
    outcomes: Mapping[str, str]
    durations: Mapping[str, float] = field(default_factory=dict)

    @property
    def test_ids(self) -> tuple[str, ...]:
        return tuple(self.outcomes)

    @property
    def passed(self) -> frozenset[str]:
        return frozenset(t for t, o in self.outcomes.items() if o == OUTCOME_PASS)

    @property
    def pass_fraction(self) -> float:
        if not self.outcomes:
            return 0.0
        return len(self.passed) / len(self.outcomes)


class TestRunner(Protocol):
    def run(self, snapshot: RepoSnapshot, digest: str, suite: SuiteSpec, timeout: float) -> TestSuiteResult: ...


class SimulatedTestRunner:
    """Scripted test outcomes keyed by (patch digest | '*', test id); spawns nothing."""

    def __init__(self, rules: Mapping[tuple[str, str], str]):
        for (_, _), outcome in rules.items():
            if outcome not in (OUTCOME_PASS, OUTCOME_FAIL, OUTCOME_ERROR):
                raise ValueError(f"unknown outcome {outcome!r}")
        self._rules = dict(rules)
        self.run_count = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "SimulatedTestRunner":
        rules: dict[tuple[str, str], str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                rules[(str(record["digest"]), str(record["test_id"]))] = str(record["outcome"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad simulator record: {exc}") from exc
        return cls(rules)

    def run(self, snapshot: RepoSnapshot, digest: str, suite: SuiteSpec, timeout: float) -> TestSuiteResult:
        self.run_count += 1
        outcomes = {}
        for tid in suite.test_ids:
            outcome = self._rules.get((digest, tid), self._rules.get(("*", tid), OUTCOME_ERROR))
            outcomes[tid] = outcome
        return TestSuiteResult(outcomes=outcomes, durations={tid: 0.0 for tid in suite.test_ids})


class SubprocessTestRunner:
    """Materializes the snapshot into a temp working copy and runs one command per test id."""

    def run(self, snapshot: RepoSnapshot, digest: str, suite: SuiteSpec, timeout: float) -> TestSuiteResult:
        workdir = Path(tempfile.mkdtemp(prefix="patchsearch-run-"))
        try:
            for sf in snapshot.files:
                dest = workdir / sf.path
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_text(sf.content, encoding="utf-8")
            outcomes: dict[str, str] = {}
            durations: dict[str, float] = {}
            deadline = time.monotonic() + timeout
            for tid in suite.test_ids:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    outcomes[tid] = OUTCOME_ERROR
                    durations[tid] = 0.0
                    continue
                cmd = [part.format(python=sys.executable, test_id=tid) for part in suite.command]
                started = time.monotonic()
                _count_spawn()
                try:
                    proc = subprocess.run(
                        cmd, cwd=workdir, capture_output=True, text=True, timeout=remaining
                    )
                    outcomes[tid] = OUTCOME_PASS if proc.returncode == 0 else OUTCOME_FAIL
                except subprocess.TimeoutExpired:
                    outcomes[tid] = OUTCOME_ERROR
                except OSError:
                    outcomes[tid] = OUTCOME_ERROR
                durations[tid] = time.monotonic() - started
            return TestSuiteResult(outcomes=outcomes, durations=durations)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)


# ---------------------------------------------------------------------------
# Tiered reward


TIER_FULL_PASS = "full_pass"
TIER_APPLIES = "applies"
TIER_SYNTAX_ONLY = "syntax_only"
TIER_INVALID = "invalid"


@dataclass(frozen=True)
class RewardBreakdown:
    tier: str
    reward: float
    pass_fraction: float | None = None
    detail: str = ""
    suite_result: TestSuiteResult | None = None

    @classmethod
    def full_pass(cls, result: TestSuiteResult | None = None) -> "RewardBreakdown":
        return cls(TIER_FULL_PASS, 1.0, pass_fraction=1.0, suite_result=result)

    @classmethod
    def applies(cls, fraction: float, detail: str = "", result: TestSuiteResult | None = None) -> "RewardBreakdown":
        return cls(TIER_APPLIES, 0.5 + 0.5 * fraction, pass_fraction=fraction, detail=detail, suite_result=result)

    @classmethod
    def syntax_only(cls, detail: str = "") -> "RewardBreakdown":
        return cls(TIER_SYNTAX_ONLY, 0.2, detail=detail)

    @classmethod
    def invalid(cls, detail: str = "") -> "RewardBreakdown":
        return cls(TIER_INVALID, 0.0, detail=detail)

    @property
    def applied(self) -> bool:
        return self.tier in (TIER_FULL_PASS, TIER_APPLIES)


def tiered_evaluate(
    snapshot: RepoSnapshot,
    diff_text: str,
    suite: SuiteSpec | None,
    runner: TestRunner,
    timeout: float = 120.0,
) -> RewardBreakdown:
    """Score a candidate patch through the static-then-dynamic tier ladder.

    Precedence: unparseable -> 0.0; parseable but unappliable -> 0.2 when the
    candidate content is itself valid, else 0.0; applies -> 0.5 + 0.5 * pass
    fraction, with 1.0 reported as full_pass when every test passes. Test
    execution is skipped when the applied result cannot even be parsed.
    """
    try:
        patch = parse_patch(diff_text)
    except PatchFormatError as exc:
        return RewardBreakdown.invalid(f"parse error: {exc}")

    try:
        patched = apply_patch(snapshot, patch)
    except PatchConflictError as exc:
        if candidate_content_valid(patch):
            return RewardBreakdown.syntax_only(f"does not apply: {exc.report}")
        return RewardBreakdown.invalid(f"does not apply and content invalid: {exc.report}")

    changed = [fp.target for fp in patch.files if fp.new_path is not None]
    report = check_syntax(patched, [p for p in changed if p.endswith(".py")])
    if not report.valid:
        path, line, msg = report.diagnostics[0]
        return RewardBreakdown.applies(0.0, detail=f"patched content invalid ({path}:{line}: {msg}); tests skipped")

    if suite is None or not suite.test_ids:
        log.warning("no test suite available; applies tier scored at pass fraction 0")
        return RewardBreakdown.applies(0.0, detail="no tests defined")

    result = runner.run(patched, patch_digest(diff_text), suite, timeout)
    if result.passed == frozenset(suite.test_ids):
        return RewardBreakdown.full_pass(result)
    return RewardBreakdown.applies(result.pass_fraction, result=result)


def resolve_check(
    before: TestSuiteResult | None,
    after: TestSuiteResult,
    f2p_ids: Sequence[str],
    p2p_ids: Sequence[str],
) -> bool:
    """True iff every fail-to-pass test passes and no pass-to-pass test regressed."""
    for tid in (*f2p_ids, *p2p_ids):
        if tid not in after.outcomes:
            raise ValueError(f"test id missing from results: {tid}")
        if before is not None and tid not in before.outcomes:
            raise ValueError(f"test id missing from baseline results: {tid}")
    return all(after.outcomes[t] == OUTCOME_PASS for t in f2p_ids) and all(
        after.outcomes[t] == OUTCOME_PASS for t in p2p_ids
    )
