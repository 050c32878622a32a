"""Builds the 3-instance offline pipeline fixture used by CLI and acceptance tests.

Everything is generated deterministically: repos, issues, per-stage mock
scripts, the test-outcome simulator script, and a pipeline config. Instance
"alpha" resolves, "beta" applies but leaves a failing test, and "gamma"
produces a non-applying patch.
"""

from __future__ import annotations

import json
from pathlib import Path

ALPHA_REPO = '''"""Math helpers."""


def safe_divide(a, b):
    return a / b


def scale(values, factor):
    return [v * factor for v in values]
'''

BETA_REPO = '''"""Text processing."""


def word_count(text):
    return len(text.split())


def clean(text):
    return text.strip()
'''

GAMMA_REPO = '''"""Key-value store helpers."""


def lookup(table, key):
    return table[key]


def insert(table, key, value):
    table[key] = value
    return table
'''

ALPHA_DIFF = """--- a/mathutil.py
+++ b/mathutil.py
@@ -4,2 +4,4 @@
 def safe_divide(a, b):
-    return a / b
+    if b == 0:
+        return 0.0
+    return a / b
"""

BETA_DIFF = """--- a/textproc.py
+++ b/textproc.py
@@ -4,2 +4,2 @@
 def word_count(text):
-    return len(text.split())
+    return len([w for w in text.split() if w])
"""

GAMMA_DIFF = """--- a/store.py
+++ b/store.py
@@ -4,2 +4,2 @@
 def lookup(table, key):
-    return table[missing]
+    return table.get(key)
"""

ALPHA_ISSUE = """# safe_divide crashes on zero divisor

<b>Crash</b> when the denominator is 0.

Steps:
1. call safe_divide(1, 0)

```
Traceback (most recent call last):
  File "mathutil.py", line 5, in safe_divide
ZeroDivisionError: division by zero
```
"""

BETA_ISSUE = """word_count should ignore empty tokens but the totals drift on double spaces.

```
Traceback (most recent call last):
  File "textproc.py", line 5, in word_count
AssertionError: expected 3 words
```
"""

GAMMA_ISSUE = """lookup raises KeyError for unknown keys instead of returning None.

```
Traceback (most recent call last):
  File "store.py", line 5, in lookup
KeyError: 'missing'
```
"""

CONFIG = """paths:
  instances: instances.jsonl
  output_dir: out
backend:
  kind: mock
  script: scripts
  seed: 7
  exhausted: wrap
ingest:
  context_budget: 600
localize:
  alpha: 0.7
  top_k_files: 2
search:
  enabled: true
  expansions: 1
  iterations: 1
  max_depth: 2
  simulation_budget: 64
refine:
  enabled: true
  max_iter: 1
calibrate:
  bins: 10
harness:
  runner: simulator
  script: harness.jsonl
  timeout: 10.0
thinking: true
workers: 1
"""

INSTANCES = [
    {
        "instance_id": "alpha",
        "repo": "repos/alpha",
        "issue_file": "issues/alpha.md",
        "f2p": ["tests/alpha_div"],
        "p2p": ["tests/alpha_scale"],
        "gold_files": ["mathutil.py"],
        "reference_patch_file": "refs/alpha.diff",
    },
    {
        "instance_id": "beta",
        "repo": "repos/beta",
        "issue_file": "issues/beta.md",
        "f2p": ["tests/beta_wc"],
        "p2p": ["tests/beta_clean"],
        "gold_files": ["textproc.py"],
    },
    {
        "instance_id": "gamma",
        "repo": "repos/gamma",
        "issue_file": "issues/gamma.md",
        "f2p": ["tests/gamma_lookup"],
        "p2p": [],
        "gold_files": ["store.py"],
    },
]

HARNESS_RULES = [
    {"digest": "*", "test_id": "tests/alpha_div", "outcome": "pass"},
    {"digest": "*", "test_id": "tests/alpha_scale", "outcome": "pass"},
    {"digest": "*", "test_id": "tests/beta_wc", "outcome": "fail"},
    {"digest": "*", "test_id": "tests/beta_clean", "outcome": "pass"},
    {"digest": "*", "test_id": "tests/gamma_lookup", "outcome": "fail"},
]

LOCALIZE_SCRIPT = [
    {"answer": "mathutil.py:4-5:replace"},
    {"answer": "textproc.py:4-5:replace"},
    {"answer": "store.py:4-5:replace"},
]

SEARCH_SCRIPT = [
    {"answer": ALPHA_DIFF},
    {"answer": ""},
    {"answer": BETA_DIFF},
    {"answer": ""},
    {"answer": GAMMA_DIFF},
    {"answer": ""},
]

REFINE_SCRIPT = [
    {
        "reasoning": "The zero guard is fine; the remaining failure is in the count filter, which already matches the issue.",
        "answer": BETA_DIFF,
    },
    {
        "reasoning": "The context in the previous patch does not exist in the file.",
        "answer": "Unable to produce a corrected patch.",
    },
]


def _write_jsonl(path: Path, records: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")


def build_pipeline_fixture(root: Path) -> Path:
    """Materialize the fixture tree under ``root`` and return the config path."""
    for sub in ("repos/alpha", "repos/beta", "repos/gamma", "issues", "refs", "scripts"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "repos/alpha/mathutil.py").write_text(ALPHA_REPO, encoding="utf-8")
    (root / "repos/beta/textproc.py").write_text(BETA_REPO, encoding="utf-8")
    (root / "repos/gamma/store.py").write_text(GAMMA_REPO, encoding="utf-8")
    (root / "issues/alpha.md").write_text(ALPHA_ISSUE, encoding="utf-8")
    (root / "issues/beta.md").write_text(BETA_ISSUE, encoding="utf-8")
    (root / "issues/gamma.md").write_text(GAMMA_ISSUE, encoding="utf-8")
    (root / "refs/alpha.diff").write_text(ALPHA_DIFF, encoding="utf-8")
    _write_jsonl(root / "instances.jsonl", INSTANCES)
    _write_jsonl(root / "harness.jsonl", HARNESS_RULES)
    _write_jsonl(root / "scripts/localize.jsonl", LOCALIZE_SCRIPT)
    _write_jsonl(root / "scripts/search.jsonl", SEARCH_SCRIPT)
    _write_jsonl(root / "scripts/refine.jsonl", REFINE_SCRIPT)
    config_path = root / "config.yaml"
    config_path.write_text(CONFIG, encoding="utf-8")
    return config_path
