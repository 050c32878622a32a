"""Issue-to-patch search over repository checkouts.

Pipeline stages: ingest repositories and issues, localize faults, synthesize
patches via tree search with execution-tiered rewards, refine with calibrated
confidence, and evaluate with resolve/apply/localization/similarity metrics.
All model interaction sits behind a pluggable backend so the whole pipeline
runs deterministically offline.
"""

from .calibrate import (
    CalibrationModel,
    TokenDistribution,
    ece,
    fit_temperature,
    span_confidence,
    token_entropy,
)
from .harness import (
    Patch,
    RewardBreakdown,
    SimulatedTestRunner,
    SubprocessTestRunner,
    SuiteSpec,
    TestSuiteResult,
    apply_patch,
    check_syntax,
    parse_patch,
    resolve_check,
    reverse_patch,
    tiered_evaluate,
)
from .ingest import (
    CodeChunk,
    IssueReport,
    PackedContext,
    RepoSnapshot,
    chunk_file,
    extract_stack_frames,
    normalize_issue,
    pack_context,
    parse_outline,
    scan_repository,
)
from .localize import (
    EditLocation,
    FileScore,
    HashedEmbedder,
    LexicalIndex,
    build_lexical_index,
    loc_at_k,
    propose_edit_locations,
    rank_functions,
    score_files,
)
from .metrics import InstanceOutcome, apply_rate, code_bleu, loc_at_k_rate, resolve_rate
from .policy import GenRequest, GenResponse, ScriptedBackend, TokenLogProbs, generate, split_reasoning
from .refine import QualityWeights, RefinementState, quality_score, refine_loop, should_stop
from .search import Action, PatchNode, SearchConfig, backpropagate, expand, run_search, select, simulate

__version__ = "0.1.0"
