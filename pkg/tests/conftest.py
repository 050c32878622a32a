from __future__ import annotations

from pathlib import Path

import pytest

from patchsearch.ingest import RepoSnapshot, SourceFile

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def minirepo() -> Path:
    return FIXTURES / "minirepo"


def make_snapshot(files: dict[str, str], root: str = "mem") -> RepoSnapshot:
    ordered = tuple(SourceFile.make(path, content) for path, content in sorted(files.items()))
    return RepoSnapshot(root=root, files=ordered)


@pytest.fixture
def snapshot_factory():
    return make_snapshot
