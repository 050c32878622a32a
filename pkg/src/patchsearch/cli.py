"""Command-line orchestration: localize | search | refine | evaluate | report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import harness, ingest, localize, metrics, policy, refine, search
from .config import ConfigError, PipelineConfig, load_config

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INSTANCE_FAILURES = 1
EXIT_FATAL = 2

MODEL_NAME = "patchsearch"

LOCALIZATION_FILE = "localization.jsonl"
LOCATIONS_FILE = "locations.jsonl"
PREDICTIONS_FILE = "predictions.jsonl"
PREDICTIONS_REFINED_FILE = "predictions_refined.jsonl"
SEARCH_TRACE_FILE = "search_trace.jsonl"
REFINE_TRACE_FILE = "refine_trace.jsonl"
EVALUATION_FILE = "evaluation.jsonl"
ERRORS_FILE = "errors.jsonl"
CONFIG_SNAPSHOT_FILE = "config_snapshot.yaml"

LOC_KS = (1, 3, 5)


@dataclass(frozen=True)
class InstanceSpec:
    instance_id: str
    repo: str
    issue_file: str | None = None
    issue_text: str | None = None
    f2p: tuple[str, ...] = ()
    p2p: tuple[str, ...] = ()
    gold_files: tuple[str, ...] = ()
    reference_patch_file: str | None = None


def load_instances(path: Path, selector: str | None) -> list[InstanceSpec]:
    if not path.is_file():
        raise ConfigError(f"instances file not found: {path}")
    specs: list[InstanceSpec] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            specs.append(
                InstanceSpec(
                    instance_id=str(rec["instance_id"]),
                    repo=str(rec["repo"]),
                    issue_file=rec.get("issue_file"),
                    issue_text=rec.get("issue_text"),
                    f2p=tuple(rec.get("f2p", [])),
                    p2p=tuple(rec.get("p2p", [])),
                    gold_files=tuple(rec.get("gold_files", [])),
                    reference_patch_file=rec.get("reference_patch_file"),
                )
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad instance record: {exc}") from exc
    specs.sort(key=lambda s: s.instance_id)
    if selector and selector != "all":
        wanted = {s.strip() for s in selector.split(",") if s.strip()}
        known = {s.instance_id for s in specs}
        missing = sorted(wanted - known)
        if missing:
            raise ConfigError(f"unknown instance ids: {missing}")
        specs = [s for s in specs if s.instance_id in wanted]
    if not specs:
        raise ConfigError("no instances selected")
    return specs


# ---------------------------------------------------------------------------
# Shared plumbing


def _write_jsonl(path: Path, records: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    if not path.is_file():
        raise ConfigError(f"required artifact missing: {path}")
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            log.warning("%s:%d: skipping corrupt record", path, lineno)
    return records


def _base_dir(cfg: PipelineConfig) -> Path:
    if cfg.paths.base_dir:
        return cfg.resolve(cfg.paths.base_dir)
    return cfg.resolve(cfg.paths.instances).parent


def _out_dir(cfg: PipelineConfig, override: str | None) -> Path:
    out = Path(override) if override else cfg.resolve(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = out / CONFIG_SNAPSHOT_FILE
    snapshot.write_text(cfg.raw_text, encoding="utf-8")
    return out


def _make_backend(cfg: PipelineConfig, stage: str):
    if cfg.backend.kind == "remote":
        return policy.RemoteBackend(
            endpoint=cfg.backend.endpoint or "",
            model=cfg.backend.model,
            timeout=cfg.backend.timeout,
            retries=cfg.backend.retries,
        )
    script = cfg.resolve(cfg.backend.script or "")
    if script.is_dir():
        script = script / f"{stage}.jsonl"
    if not script.is_file():
        raise ConfigError(f"backend script not found: {script}")
    return policy.ScriptedBackend.from_file(script, exhausted=cfg.backend.exhausted)


def _make_runner(cfg: PipelineConfig) -> harness.TestRunner:
    if cfg.harness.runner == "subprocess":
        return harness.SubprocessTestRunner()
    script = cfg.resolve(cfg.harness.script or "")
    if not script.is_file():
        raise ConfigError(f"harness script not found: {script}")
    return harness.SimulatedTestRunner.from_file(script)


def _make_embedder(cfg: PipelineConfig, backend) -> localize.Embedder | None:
    if cfg.localize.lexical_only:
        return None
    if cfg.backend.kind == "remote":
        return localize.RemoteEmbedder(backend)
    return localize.HashedEmbedder()


def _load_issue(spec: InstanceSpec, base: Path) -> ingest.IssueReport:
    if spec.issue_text is not None:
        return ingest.normalize_issue(spec.issue_text)
    if not spec.issue_file:
        raise ConfigError(f"{spec.instance_id}: instance has neither issue_text nor issue_file")
    return ingest.normalize_issue((base / spec.issue_file).read_text(encoding="utf-8"))


def _load_snapshot(spec: InstanceSpec, cfg: PipelineConfig, base: Path) -> ingest.RepoSnapshot:
    icfg = ingest.IngestConfig(
        include=cfg.ingest.include,
        exclude=cfg.ingest.exclude,
        max_chunk_units=cfg.ingest.max_chunk_units,
        overlap_lines=cfg.ingest.overlap_lines,
        weights=cfg.ingest.weights,
    )
    return ingest.scan_repository(base / spec.repo, icfg)


def _suite_for(spec: InstanceSpec) -> harness.SuiteSpec | None:
    ids = tuple(dict.fromkeys((*spec.f2p, *spec.p2p)))
    if not ids:
        return None
    return harness.SuiteSpec(test_ids=ids, f2p=spec.f2p, p2p=spec.p2p)


def _run_per_instance(
    instances: Sequence[InstanceSpec],
    worker: Callable[[InstanceSpec], Any],
    workers: int,
) -> tuple[dict[str, Any], list[tuple[str, str]]]:
    results: dict[str, Any] = {}
    failures: list[tuple[str, str]] = []
    if workers == 1:
        for spec in instances:
            try:
                results[spec.instance_id] = worker(spec)
            except Exception as exc:  # noqa: BLE001 - per-instance isolation
                log.exception("instance %s failed", spec.instance_id)
                failures.append((spec.instance_id, f"{type(exc).__name__}: {exc}"))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(worker, spec): spec for spec in instances}
            for future, spec in futures.items():
                try:
                    results[spec.instance_id] = future.result()
                except Exception as exc:  # noqa: BLE001
                    failures.append((spec.instance_id, f"{type(exc).__name__}: {exc}"))
    return results, failures


def _record_failures(out: Path, stage: str, failures: list[tuple[str, str]]) -> None:
    if failures:
        _write_jsonl(
            out / ERRORS_FILE,
            [{"instance_id": iid, "stage": stage, "error": err} for iid, err in sorted(failures)],
        )


# ---------------------------------------------------------------------------
# localize


def cmd_localize(cfg: PipelineConfig, selector: str | None, out_override: str | None, seed: int | None) -> int:
    out = _out_dir(cfg, out_override)
    base = _base_dir(cfg)
    instances = load_instances(cfg.resolve(cfg.paths.instances), selector)
    backend = _make_backend(cfg, "localize")
    embedder = _make_embedder(cfg, backend)
    alpha = 0.0 if cfg.localize.lexical_only else cfg.localize.alpha

    def worker(spec: InstanceSpec) -> tuple[list[dict], list[dict]]:
        snapshot = _load_snapshot(spec, cfg, base)
        issue = _load_issue(spec, base)
        index = localize.build_lexical_index(snapshot, k1=cfg.localize.k1, b=cfg.localize.b)
        scores = localize.score_files(issue, snapshot, index, embedder, alpha=alpha)
        score_rows = [
            {
                "instance_id": spec.instance_id,
                "rank": rank,
                "path": s.path,
                "dense": s.dense,
                "lexical": s.lexical,
                "hybrid": s.hybrid,
                "score": s.ranking_score,
            }
            for rank, s in enumerate(scores, start=1)
        ]
        top_files = [s.path for s in scores[: cfg.localize.top_k_files]]
        outlines = ingest.build_outlines(snapshot)
        ranked = localize.rank_functions(top_files, outlines)
        if ranked:
            mode = policy.THINKING if cfg.thinking else policy.NON_THINKING
            locations = localize.propose_edit_locations(
                issue, ranked, snapshot, backend, cfg.localize.max_locations, mode=mode
            )
        else:
            top = snapshot.get(top_files[0])
            locations = [localize.EditLocation(top_files[0], 1, max(top.line_count, 1), localize.REPLACE)]
        loc_rows = [
            {
                "instance_id": spec.instance_id,
                "file": l.file,
                "line_start": l.line_start,
                "line_end": l.line_end,
                "mod_type": l.mod_type,
            }
            for l in locations
        ]
        return score_rows, loc_rows

    results, failures = _run_per_instance(instances, worker, cfg.workers)
    _write_jsonl(out / LOCALIZATION_FILE, (row for iid in sorted(results) for row in results[iid][0]))
    _write_jsonl(out / LOCATIONS_FILE, (row for iid in sorted(results) for row in results[iid][1]))
    _record_failures(out, "localize", failures)
    return EXIT_INSTANCE_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# search


def _build_context(
    cfg: PipelineConfig,
    snapshot: ingest.RepoSnapshot,
    issue: ingest.IssueReport,
    score_rows: Sequence[dict],
    location_rows: Sequence[dict],
) -> str:
    items = ingest.issue_items(issue, cfg.ingest.weights)
    chunk_weight = cfg.ingest.weights.get("code_chunk", 0.5)
    outlines = ingest.build_outlines(snapshot)
    ranked_rows = sorted(score_rows, key=lambda r: r["rank"])[: cfg.localize.top_k_files]
    for row in ranked_rows:
        sf = snapshot.get(row["path"])
        if sf is None:
            continue
        relevance = min(max(float(row["score"]), 0.0), 1.0)
        for chunk in ingest.chunk_file(sf, outlines[sf.path], cfg.ingest.max_chunk_units, cfg.ingest.overlap_lines):
            header = f"# {chunk.file}:{chunk.start_line}-{chunk.end_line}\n"
            items.append(ingest.ContextItem(ingest.CHUNK, header + chunk.text, chunk_weight, relevance))
    packed = ingest.pack_context(items, cfg.ingest.context_budget)
    context = packed.render()
    if location_rows:
        listing = "\n".join(
            f"{r['file']}:{r['line_start']}-{r['line_end']}:{r['mod_type']}" for r in location_rows
        )
        context += f"\n\nSUGGESTED EDIT LOCATIONS:\n{listing}"
    return context


def cmd_search(cfg: PipelineConfig, selector: str | None, out_override: str | None, seed: int | None) -> int:
    out = _out_dir(cfg, out_override)
    base = _base_dir(cfg)
    instances = load_instances(cfg.resolve(cfg.paths.instances), selector)
    backend = _make_backend(cfg, "search")
    runner = _make_runner(cfg)
    score_rows = _read_jsonl(out / LOCALIZATION_FILE)
    location_rows = _read_jsonl(out / LOCATIONS_FILE)
    effective_seed = seed if seed is not None else cfg.backend.seed

    scfg = search.SearchConfig(
        c1=cfg.search.c1,
        beta=cfg.search.beta,
        expansions=cfg.search.expansions,
        iterations=cfg.search.iterations,
        max_depth=cfg.search.max_depth,
        simulation_budget=cfg.search.simulation_budget,
        temperature=cfg.search.temperature,
    )

    def worker(spec: InstanceSpec) -> tuple[dict, list[dict]]:
        snapshot = _load_snapshot(spec, cfg, base)
        issue = _load_issue(spec, base)
        rows = [r for r in score_rows if r["instance_id"] == spec.instance_id]
        locs = [r for r in location_rows if r["instance_id"] == spec.instance_id]
        context = _build_context(cfg, snapshot, issue, rows, locs)
        suite = _suite_for(spec)

        def evaluate(diff_text: str) -> harness.RewardBreakdown:
            return harness.tiered_evaluate(snapshot, diff_text, suite, runner, cfg.harness.timeout)

        trace_rows: list[dict] = []
        if cfg.search.enabled:
            result = search.run_search(context, scfg, backend, evaluate)
            patch, reward, tier, found = result.best_patch, result.best_reward, result.best_tier, result.found
            for rec in result.trace:
                trace_rows.append(
                    {
                        "instance_id": spec.instance_id,
                        "iteration": rec.iteration,
                        "depth": rec.depth,
                        "action_digest": rec.action_digest,
                        "tier": rec.tier,
                        "reward": rec.reward,
                        "best_so_far": rec.best_so_far,
                    }
                )
        else:
            mode = policy.THINKING if cfg.thinking else policy.NON_THINKING
            request = policy.GenRequest(
                prompt=f"{context}\n\nReply with a unified diff resolving the issue.\n",
                mode=mode,
                temperature=cfg.search.temperature,
                max_units=cfg.search.simulation_budget,
                seed=effective_seed,
            )
            response = policy.generate(request, backend)
            patch = harness.extract_diff(response.answer) or ""
            breakdown = evaluate(patch) if patch else harness.RewardBreakdown.invalid("no diff in reply")
            reward, tier, found = breakdown.reward, breakdown.tier, bool(patch)
            trace_rows.append(
                {
                    "instance_id": spec.instance_id,
                    "iteration": 0,
                    "depth": 0,
                    "action_digest": harness.patch_digest(patch) if patch else "",
                    "tier": tier,
                    "reward": reward,
                    "best_so_far": max(reward, 0.0),
                }
            )
        prediction = {
            "instance_id": spec.instance_id,
            "model_patch": patch,
            "model_name_or_path": cfg.backend.model or MODEL_NAME,
            "reward": reward,
            "tier": tier,
            "found": found,
        }
        return prediction, trace_rows

    results, failures = _run_per_instance(instances, worker, cfg.workers)
    _write_jsonl(out / PREDICTIONS_FILE, (results[iid][0] for iid in sorted(results)))
    _write_jsonl(out / SEARCH_TRACE_FILE, (row for iid in sorted(results) for row in results[iid][1]))
    _record_failures(out, "search", failures)
    return EXIT_INSTANCE_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# refine


def cmd_refine(cfg: PipelineConfig, selector: str | None, out_override: str | None, seed: int | None) -> int:
    out = _out_dir(cfg, out_override)
    if not cfg.refine.enabled:
        print("refinement disabled in config; stage skipped")
        return EXIT_OK
    base = _base_dir(cfg)
    instances = load_instances(cfg.resolve(cfg.paths.instances), selector)
    backend = _make_backend(cfg, "refine")
    runner = _make_runner(cfg)
    predictions = {r["instance_id"]: r for r in _read_jsonl(out / PREDICTIONS_FILE)}
    weights = refine.QualityWeights(*cfg.refine.weights)
    mode = policy.THINKING if cfg.thinking else policy.NON_THINKING

    def worker(spec: InstanceSpec) -> tuple[dict, list[dict]]:
        pred = predictions.get(spec.instance_id)
        if pred is None:
            raise ConfigError(f"no prediction for instance {spec.instance_id}")
        patch = pred.get("model_patch", "")
        if not patch.strip():
            return dict(pred), []
        snapshot = _load_snapshot(spec, cfg, base)
        issue = _load_issue(spec, base)
        suite = _suite_for(spec)

        def evaluate(diff_text: str) -> harness.RewardBreakdown:
            return harness.tiered_evaluate(snapshot, diff_text, suite, runner, cfg.harness.timeout)

        result = refine.refine_loop(
            issue.normalized,
            patch,
            backend,
            evaluate,
            weights=weights,
            max_iter=cfg.refine.max_iter,
            epsilon=cfg.refine.epsilon,
            mode=mode,
        )
        best = result.best
        refined = dict(pred)
        refined.update(
            model_patch=best.patch_text,
            reward=best.breakdown.reward,
            tier=best.breakdown.tier,
            quality=best.quality,
        )
        trace_rows = [
            {
                "instance_id": spec.instance_id,
                "iteration": s.iteration,
                "tier": s.breakdown.tier,
                "pass_fraction": s.breakdown.pass_fraction,
                "quality": s.quality,
                "critique_digest": hashlib.sha256(s.critique.encode("utf-8")).hexdigest()[:12],
            }
            for s in result.history
        ]
        return refined, trace_rows

    results, failures = _run_per_instance(instances, worker, cfg.workers)
    _write_jsonl(out / PREDICTIONS_REFINED_FILE, (results[iid][0] for iid in sorted(results)))
    _write_jsonl(out / REFINE_TRACE_FILE, (row for iid in sorted(results) for row in results[iid][1]))
    _record_failures(out, "refine", failures)
    return EXIT_INSTANCE_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: PipelineConfig, selector: str | None, out_override: str | None, seed: int | None) -> int:
    out = _out_dir(cfg, out_override)
    base = _base_dir(cfg)
    instances = load_instances(cfg.resolve(cfg.paths.instances), selector)
    runner = _make_runner(cfg)

    predictions_path = out / PREDICTIONS_REFINED_FILE
    if not predictions_path.is_file():
        predictions_path = out / PREDICTIONS_FILE
    predictions = {r["instance_id"]: r for r in _read_jsonl(predictions_path)}
    if not predictions:
        print("evaluation aborted: predictions file is empty", file=sys.stderr)
        return EXIT_FATAL
    try:
        score_rows = _read_jsonl(out / LOCALIZATION_FILE)
    except ConfigError:
        score_rows = []

    def worker(spec: InstanceSpec) -> metrics.InstanceOutcome:
        pred = predictions.get(spec.instance_id, {})
        patch_text = pred.get("model_patch", "") or ""
        patch_present = bool(patch_text.strip())
        snapshot = _load_snapshot(spec, cfg, base)
        applied = False
        resolved = False
        if patch_present:
            try:
                patched = harness.apply_patch(snapshot, harness.parse_patch(patch_text))
                applied = True
            except (harness.PatchFormatError, harness.PatchConflictError):
                applied = False
            suite = _suite_for(spec)
            if applied and suite is not None:
                after = runner.run(patched, harness.patch_digest(patch_text), suite, cfg.harness.timeout)
                resolved = harness.resolve_check(None, after, spec.f2p, spec.p2p)
        predicted = tuple(
            r["path"]
            for r in sorted(
                (r for r in score_rows if r["instance_id"] == spec.instance_id),
                key=lambda r: r["rank"],
            )
        )
        reference = None
        if spec.reference_patch_file:
            reference = (base / spec.reference_patch_file).read_text(encoding="utf-8")
        return metrics.InstanceOutcome(
            instance_id=spec.instance_id,
            patch_present=patch_present,
            applied=applied,
            resolved=resolved,
            predicted_files=predicted,
            gold_files=frozenset(spec.gold_files),
            candidate_patch=patch_text if patch_present else None,
            reference_patch=reference,
        )

    results, failures = _run_per_instance(instances, worker, cfg.workers)
    outcomes = [results[iid] for iid in sorted(results)]
    if not outcomes:
        print("evaluation aborted: no instance produced an outcome", file=sys.stderr)
        return EXIT_FATAL

    rows = []
    for o in outcomes:
        loc_hits = {}
        if o.gold_files and o.predicted_files:
            loc_hits = {str(k): localize.loc_at_k(o.predicted_files, o.gold_files, k) for k in LOC_KS}
        bleu = None
        if o.candidate_patch and o.reference_patch:
            bleu = metrics.code_bleu(o.candidate_patch, o.reference_patch)
        rows.append(
            {
                "instance_id": o.instance_id,
                "patch_present": o.patch_present,
                "applied": o.applied,
                "resolved": o.resolved,
                "loc_at_k": loc_hits,
                "code_bleu": bleu,
            }
        )

    with_gold = [o for o in outcomes if o.gold_files and o.predicted_files]
    bleu_values = [r["code_bleu"] for r in rows if r["code_bleu"] is not None]
    aggregate = {
        "count": len(outcomes),
        "resolve_rate": metrics.resolve_rate(outcomes),
        "apply_rate": metrics.apply_rate(outcomes),
        "loc_at_k": {str(k): metrics.loc_at_k_rate(with_gold, k) for k in LOC_KS} if with_gold else {},
        "mean_code_bleu": sum(bleu_values) / len(bleu_values) if bleu_values else None,
    }
    rows.append({"aggregate": aggregate})
    _write_jsonl(out / EVALUATION_FILE, rows)
    _record_failures(out, "evaluate", failures)
    print(
        f"evaluated {aggregate['count']} instances: "
        f"resolve {aggregate['resolve_rate']:.2f}% apply {aggregate['apply_rate']:.2f}%"
    )
    return EXIT_INSTANCE_FAILURES if failures else EXIT_OK


# ---------------------------------------------------------------------------
# report


def _load_aggregate(run_dir: Path) -> dict | None:
    path = run_dir / EVALUATION_FILE
    if not path.is_file():
        return None
    for rec in _read_jsonl(path):
        if "aggregate" in rec:
            return rec["aggregate"]
    return None


def cmd_report(run_dirs: Sequence[str]) -> int:
    aggregates: list[tuple[str, dict]] = []
    for d in run_dirs:
        run = Path(d)
        agg = _load_aggregate(run)
        if agg is None:
            print(f"no evaluation report in {run}", file=sys.stderr)
            return EXIT_FATAL
        aggregates.append((run.name, agg))

    name_width = max(len(name) for name, _ in aggregates)
    header = f"{'run':<{name_width}}  {'resolve':>8}  {'apply':>8}"
    print(header)
    print("-" * len(header))
    for name, agg in aggregates:
        print(f"{name:<{name_width}}  {agg['resolve_rate']:>7.2f}%  {agg['apply_rate']:>7.2f}%")
    if len(aggregates) > 1:
        base_name, base = aggregates[0]
        print()
        print(f"deltas vs {base_name}:")
        for name, agg in aggregates[1:]:
            d_resolve = agg["resolve_rate"] - base["resolve_rate"]
            d_apply = agg["apply_rate"] - base["apply_rate"]
            print(f"{name:<{name_width}}  {d_resolve:>+7.2f}%  {d_apply:>+7.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config file (YAML)")
    parser.add_argument("--instances", default="all", help="comma-separated instance ids, or 'all'")
    parser.add_argument("--out", default=None, help="override the run output directory")
    parser.add_argument("--seed", type=int, default=None, help="override backend seed")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="patchsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("localize", "search", "refine", "evaluate"):
        _add_common(sub.add_parser(name))
    report = sub.add_parser("report")
    report.add_argument("run_dirs", nargs="+", help="run directories holding evaluation reports")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "report":
            return cmd_report(args.run_dirs)
        cfg = load_config(args.config)
        command = {
            "localize": cmd_localize,
            "search": cmd_search,
            "refine": cmd_refine,
            "evaluate": cmd_evaluate,
        }[args.command]
        return command(cfg, args.instances, args.out, args.seed)
    except ConfigError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
