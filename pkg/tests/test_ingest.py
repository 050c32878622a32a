from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchsearch import ingest
from patchsearch.ingest import (
    ContextItem,
    Definition,
    FileOutline,
    IngestConfig,
    IngestError,
    SourceFile,
    chunk_file,
    extract_stack_frames,
    normalize_issue,
    pack_context,
    parse_outline,
    reconstruct_file,
    scan_repository,
    unit_length,
)

from conftest import make_snapshot


# ---------------------------------------------------------------------------
# scan_repository


def test_scan_empty_directory(tmp_path):
    snap = scan_repository(tmp_path)
    assert snap.files == ()


def test_scan_filters_non_python(tmp_path):
    (tmp_path / "a.py").write_text("X = 1\n")
    (tmp_path / "b.txt").write_text("not code\n")
    snap = scan_repository(tmp_path)
    assert snap.paths == ("a.py",)


def test_scan_minirepo_excludes_vendor(minirepo):
    snap = scan_repository(minirepo)
    assert len(snap.files) == 9
    assert all("vendor" not in p for p in snap.paths)
    assert list(snap.paths) == sorted(snap.paths)


def test_scan_missing_root_is_fatal(tmp_path):
    with pytest.raises(IngestError):
        scan_repository(tmp_path / "absent")


def test_scan_unreadable_file_is_skipped_with_warning(tmp_path):
    (tmp_path / "good.py").write_text("X = 1\n")
    (tmp_path / "bad.py").write_bytes(b"\xff\xfe\x00bad")
    snap = scan_repository(tmp_path)
    assert snap.paths == ("good.py",)
    assert len(snap.warnings) == 1 and "bad.py" in snap.warnings[0]


# ---------------------------------------------------------------------------
# parse_outline


def test_outline_single_function():
    sf = SourceFile.make("m.py", "def f(x):\n    y = x + 1\n    return y\n")
    outline = parse_outline(sf)
    assert not outline.degraded
    assert outline.definitions == (Definition("f", "function", 1, 3, frozenset()),)


def test_outline_class_with_methods_nested():
    src = "class C:\n    def m1(self):\n        return 1\n\n    def m2(self):\n        return self.m1()\n"
    outline = parse_outline(SourceFile.make("m.py", src))
    names = {d.name: d for d in outline.definitions}
    assert set(names) == {"C", "m1", "m2"}
    assert names["C"].kind == "class"
    assert names["m1"].kind == "method" and names["m2"].kind == "method"
    for m in ("m1", "m2"):
        assert names["C"].start_line <= names[m].start_line
        assert names[m].end_line <= names["C"].end_line
    assert "m1" in names["m2"].referenced_names


def test_outline_golden_minirepo_arithmetic(minirepo):
    sf_text = (minirepo / "calculator/arithmetic.py").read_text()
    outline = parse_outline(SourceFile.make("calculator/arithmetic.py", sf_text))
    golden = (
        ("add", "function", 4, 6, frozenset()),
        ("divide", "function", 9, 11, frozenset()),
        ("Accumulator", "class", 14, 25, frozenset({"add", "divide"})),
        ("__init__", "method", 17, 18, frozenset()),
        ("add_value", "method", 20, 22, frozenset({"add"})),
        ("average", "method", 24, 25, frozenset({"divide"})),
    )
    got = tuple((d.name, d.kind, d.start_line, d.end_line, d.referenced_names) for d in outline.definitions)
    assert got == golden


def test_outline_unparseable_degrades_to_whole_file():
    sf = SourceFile.make("broken.py", "def broken(:\n    pass\n")
    outline = parse_outline(sf)
    assert outline.degraded
    assert len(outline.definitions) == 1
    d = outline.definitions[0]
    assert d.kind == "module" and (d.start_line, d.end_line) == (1, 2)


def test_outline_spans_properly_nested(minirepo):
    snap = scan_repository(minirepo)
    for sf in snap.files:
        outline = parse_outline(sf)
        for a, b in itertools.permutations(outline.definitions, 2):
            overlap = not (a.end_line < b.start_line or b.end_line < a.start_line)
            if overlap:
                assert a.contains(b) or b.contains(a)


# ---------------------------------------------------------------------------
# chunk_file


def _uniform_file(n_lines: int) -> SourceFile:
    return SourceFile.make("big.py", "\n".join(f"line{i}" for i in range(1, n_lines + 1)) + "\n")


def test_chunk_three_small_functions_whole():
    src = "def a():\n    return 1\ndef b():\n    return 2\ndef c():\n    return 3\n"
    sf = SourceFile.make("s.py", src)
    chunks = chunk_file(sf, parse_outline(sf), 2000, 8)
    assert [c.kind for c in chunks] == ["whole_definition"] * 3
    assert reconstruct_file(chunks) == src


def test_chunk_fragment_starts_obey_overlap_recurrence():
    sf = _uniform_file(100)
    outline = FileOutline("big.py", (Definition("f", "function", 1, 100),))
    chunks = chunk_file(sf, outline, max_units=40, overlap_lines=8)
    assert [c.start_line for c in chunks] == [1, 33, 65, 97]
    assert all(c.kind == "fragment" and c.overlap == 8 for c in chunks)
    assert all(unit_length(c.text) <= 40 for c in chunks)
    # overlap regions byte-identical between adjacent fragments
    for prev, nxt in zip(chunks, chunks[1:]):
        shared = range(nxt.start_line, min(prev.end_line, nxt.end_line) + 1)
        prev_lines = prev.text.splitlines(keepends=True)
        next_lines = nxt.text.splitlines(keepends=True)
        for line_no in shared:
            assert prev_lines[line_no - prev.start_line] == next_lines[line_no - nxt.start_line]


def test_chunk_coverage_on_every_minirepo_file(minirepo):
    snap = scan_repository(minirepo)
    for sf in snap.files:
        for max_units, delta in ((2000, 8), (12, 2), (30, 4)):
            chunks = chunk_file(sf, parse_outline(sf), max_units, delta)
            assert reconstruct_file(chunks) == sf.content, (sf.path, max_units, delta)
            covered = set()
            for c in chunks:
                covered.update(range(c.start_line, c.end_line + 1))
            expected = set(range(1, sf.line_count + 1))
            assert covered == expected


def test_chunk_long_class_recurses_into_methods():
    body = "\n".join(
        f"    def m{i}(self):\n        value{i} = {i}\n        return value{i}" for i in range(8)
    )
    src = "class Big:\n" + body + "\n"
    sf = SourceFile.make("c.py", src)
    chunks = chunk_file(sf, parse_outline(sf), max_units=12, overlap_lines=2)
    assert any(c.kind == "whole_definition" for c in chunks)
    assert reconstruct_file(chunks) == src


def test_chunk_config_error():
    sf = _uniform_file(5)
    with pytest.raises(IngestError):
        chunk_file(sf, parse_outline(sf), max_units=4, overlap_lines=4)


def test_chunk_empty_file():
    sf = SourceFile.make("e.py", "")
    assert chunk_file(sf, parse_outline(sf), 100, 2) == []


# ---------------------------------------------------------------------------
# normalize_issue / extract_stack_frames


def test_normalize_strips_html():
    report = normalize_issue("<b>crash</b>")
    assert report.normalized == "crash"


def test_normalize_plain_text_identity():
    text = "plain description with no markup"
    assert normalize_issue(text).normalized == text


def test_normalize_idempotent_on_samples(minirepo):
    samples = [
        "<b>crash</b> &amp; burn\n\n\n\n<i>four blanks above</i>",
        "~~~python\nx = 1 <not a tag>\n~~~\ntail &lt;b&gt;",
        "&amp;amp;amp; nested entities",
        "no markup at all",
        "```\nunclosed fence\n<b>kept</b>",
    ]
    for raw in samples:
        once = normalize_issue(raw)
        twice = normalize_issue(once.normalized)
        assert twice.normalized == once.normalized
        assert twice.error_messages == once.error_messages
        assert twice.stack_frames == once.stack_frames


def test_normalize_fences_standardized_and_protected():
    raw = "~~~python\nx = '<b>'\n~~~\n"
    report = normalize_issue(raw)
    assert report.normalized.startswith("```python")
    assert "<b>" in report.normalized  # fence content untouched
    assert report.code_blocks == ("x = '<b>'",)


def test_normalize_extracts_traceback_and_steps():
    raw = (
        "Steps:\n1. run the tool\n2) watch it crash\n\n"
        "Traceback (most recent call last):\n"
        '  File "a/b.py", line 42, in main\n'
        "ZeroDivisionError: division by zero\n"
    )
    report = normalize_issue(raw)
    assert ("a/b.py", 42) in report.stack_frames
    assert report.error_messages == ("ZeroDivisionError: division by zero",)
    assert report.repro_steps == ("run the tool", "watch it crash")


def test_normalize_empty():
    report = normalize_issue("")
    assert report.normalized == "" and report.stack_frames == ()


def test_stack_frames_empty_without_traceback():
    assert extract_stack_frames("nothing to see") == ()


def test_stack_frames_two_frames_in_order():
    text = (
        '  File "pkg/outer.py", line 10, in run\n'
        '  File "pkg/inner.py", line 3, in helper\n'
    )
    assert extract_stack_frames(text) == (("pkg/outer.py", 10), ("pkg/inner.py", 3))


def test_stack_frames_skip_malformed_and_stdin():
    text = '  File "x.py", line abc, in f\n  File "<stdin>", line 1, in g\n  File "ok.py", line 2, in h\n'
    assert extract_stack_frames(text) == (("ok.py", 2),)


# ---------------------------------------------------------------------------
# pack_context


def _item(score: float, words: int, weight: float = 1.0) -> ContextItem:
    relevance = score / weight
    return ContextItem("issue_section", " ".join(["w"] * words), weight, relevance)


def test_pack_single_item_exact_fit():
    item = _item(0.9, 10)
    packed = pack_context([item], 10)
    assert packed.items == (item,) and packed.used_length == 10


def test_pack_orders_by_score():
    a = _item(0.9, 10)
    b = _item(0.8, 10)
    packed = pack_context([b, a], 10)
    assert packed.items == (a,)


def test_pack_zero_budget():
    assert pack_context([_item(0.5, 3)], 0).items == ()


def test_pack_never_exceeds_budget_and_is_deterministic():
    items = [_item(0.1 * i, 5 + i) for i in range(1, 8)]
    first = pack_context(items, 20)
    second = pack_context(items, 20)
    assert first == second
    assert first.used_length <= 20


def _knapsack_optimum(items: list[ContextItem], budget: int) -> float:
    best = 0.0
    for mask in range(1 << len(items)):
        subset = [items[i] for i in range(len(items)) if mask >> i & 1]
        if sum(i.length for i in subset) <= budget:
            best = max(best, sum(i.score for i in subset))
    return best


def test_pack_half_approximation_against_knapsack_oracle():
    import random

    rng = random.Random(1234)
    for _ in range(60):
        n = rng.randint(1, 10)
        items = [
            ContextItem("chunk", " ".join(["w"] * rng.randint(1, 15)), rng.uniform(0, 2), rng.random())
            for _ in range(n)
        ]
        budget = rng.randint(1, 40)
        packed = pack_context(items, budget)
        got = sum(i.score for i in packed.items)
        optimum = _knapsack_optimum(items, budget)
        assert got >= 0.5 * optimum - 1e-12


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 2), st.floats(0, 1), st.integers(1, 12)),
        min_size=1,
        max_size=8,
    ),
    st.integers(0, 30),
)
def test_pack_budget_property(raw_items, budget):
    items = [ContextItem("chunk", " ".join(["t"] * n), w, r) for w, r, n in raw_items]
    packed = pack_context(items, budget)
    assert packed.used_length <= max(budget, 0)
    scores = [i.score for i in packed.items]
    assert scores == sorted(scores, reverse=True)


# ---------------------------------------------------------------------------
# snapshot integrity


def test_snapshot_rejects_escaping_paths():
    with pytest.raises(IngestError):
        make_snapshot({"../evil.py": "X = 1\n"})
    with pytest.raises(IngestError):
        make_snapshot({"/abs.py": "X = 1\n"})


def test_snapshot_line_count_matches_newline_delimited_lines():
    sf = SourceFile.make("a.py", "one\ntwo\n")
    assert sf.line_count == 2
    assert SourceFile.make("b.py", "one\ntwo").line_count == 2
    assert SourceFile.make("c.py", "").line_count == 0


def test_issue_items_use_weight_table():
    issue = normalize_issue(
        'boom\n  File "pkg/a.py", line 3, in f\nValueError: boom\n'
    )
    items = ingest.issue_items(issue)
    by_source = {}
    for item in items:
        by_source.setdefault(item.source, []).append(item)
    assert by_source["stack_frame"][0].weight == 1.0
    assert any(i.weight == 0.9 for i in by_source["issue_section"])
