"""Command-line entry point: classify, evaluate, analyze, report."""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .analytics import BUNDLE_FILE, CorpusRecord, build_bundle, load_bundle, write_bundle
from .backend import Backend, HttpBackend, MockBackend, run_bounded
from .cache import CacheEntry, ClassificationCache, FailureRecord
from .config import FatalConfig, RunConfig, load_config
from .eval import SchemaError, evaluate_run, load_annotated, read_jsonl, record_id
from .parser import Classification, ClassificationFailed, ClassifyOptions, classify_with_retry
from .prompt import EmptyPost, compose_post_text
from .report import render_digest

log = logging.getLogger("emorisk")

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

REMOVED_BODIES = {"[removed]", "[deleted]"}

# Parse failures are properties of the (model, prompt) pair and are cached;
# transport failures are environmental and get retried on the next run.
CACHEABLE_FAILURES = {"NoObjectFound", "MalformedObject", "MissingEmotion", "InvalidValue"}


class JoinError(Exception):
    """Results and gold corpus share no post ids."""


class MissingBundle(Exception):
    pass


@dataclass(frozen=True)
class InputPost:
    post_id: str
    text: str
    subreddit: str | None
    created_utc: float | None


@dataclass
class Ingested:
    posts: list[InputPost] = field(default_factory=list)
    skipped: list[dict[str, str]] = field(default_factory=list)


def ingest(config: RunConfig) -> Ingested:
    """Read the input corpora, dropping empty, removed and duplicate posts."""
    fm = config.field_map
    out = Ingested()
    seen_ids: set[str] = set()
    seen_text: set[tuple[str | None, str]] = set()
    for path in config.inputs:
        for index, record in enumerate(read_jsonl(path)):
            if not isinstance(record, dict):
                raise SchemaError(index, f"{path}: record is not an object")
            post_id = record_id(record, fm, index)
            body = record.get(fm.text)
            body = body if isinstance(body, str) else ""
            title = record.get(fm.title) if fm.title else None
            title = title if isinstance(title, str) else ""
            subreddit = record.get(fm.subreddit) if fm.subreddit else None
            created = record.get(fm.created_utc) if fm.created_utc else None
            if post_id in seen_ids:
                out.skipped.append({"post_id": post_id, "reason": "duplicate_id"})
                continue
            seen_ids.add(post_id)
            if body.strip() in REMOVED_BODIES:
                out.skipped.append({"post_id": post_id, "reason": "removed"})
                continue
            text = compose_post_text(body, title)
            if not text.strip():
                out.skipped.append({"post_id": post_id, "reason": "empty"})
                continue
            dedupe_key = (subreddit, text.strip())
            if dedupe_key in seen_text:
                out.skipped.append({"post_id": post_id, "reason": "duplicate_text"})
                continue
            seen_text.add(dedupe_key)
            out.posts.append(
                InputPost(
                    post_id,
                    text,
                    str(subreddit) if subreddit is not None else None,
                    float(created) if created not in (None, "") else None,
                )
            )
    if config.sample is not None and config.sample < len(out.posts):
        rng = random.Random(config.seed)
        keep = set(rng.sample(range(len(out.posts)), config.sample))
        out.posts = [p for i, p in enumerate(out.posts) if i in keep]
    return out


def make_backend(config: RunConfig) -> Backend:
    if config.backend_kind == "mock":
        return MockBackend()
    return HttpBackend(config.backend)


def _result_line(post: InputPost, entry: CacheEntry) -> dict[str, Any]:
    meta = {"subreddit": post.subreddit, "created_utc": post.created_utc}
    if isinstance(entry.value, Classification):
        return {"status": "ok", **entry.value.to_dict(volatile=False), **meta}
    return {"status": "failed", **entry.value.to_dict(), **meta}


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class ClassifyOutcome:
    manifest: dict[str, Any]
    exit_code: int
    backend_calls: int


def cmd_classify(config: RunConfig, backend: Backend | None = None) -> ClassifyOutcome:
    """Classify every input post, reusing cached results.

    Writes ``results.jsonl`` (input order, no wall-clock fields) and
    ``manifest.json`` into the output directory.
    """
    config.validate(need_inputs=True)
    started = time.perf_counter()
    ingested = ingest(config)
    cache = ClassificationCache(config.cache_path)
    model = config.backend.model_name
    version = config.prompt_version
    options = ClassifyOptions(variant=config.variant, max_chars=config.max_chars, template=config.template())

    todo = []
    hits = 0
    for post in ingested.posts:
        entry = cache.get((post.post_id, model, version))
        if entry is not None and (entry.ok or not config.retry_failed):
            hits += 1
            continue
        todo.append((post.post_id, post))

    transient: dict[str, FailureRecord] = {}
    skipped = list(ingested.skipped)
    late_skips: set[str] = set()
    counter = {"requests": 0}
    owns_backend = backend is None
    backend = backend or make_backend(config)

    def work(post_id: str, post: InputPost) -> Classification:
        return classify_with_retry(post_id, post.text, backend, config.backend, options)

    def deliver(post_id: str, result: Classification | None, exc: BaseException | None) -> None:
        counter["requests"] += 1
        key = (post_id, model, version)
        if exc is None:
            cache.put(CacheEntry(key, result))
        elif isinstance(exc, EmptyPost):
            skipped.append({"post_id": post_id, "reason": "empty"})
            late_skips.add(post_id)
        elif isinstance(exc, ClassificationFailed):
            record = FailureRecord(post_id, exc.kind, exc.message, exc.attempts)
            if exc.kind in CACHEABLE_FAILURES:
                cache.put(CacheEntry(key, record))
            else:
                transient[post_id] = record
            log.warning("classification failed: %s", exc)
        else:
            transient[post_id] = FailureRecord(post_id, type(exc).__name__, str(exc), 0)
            log.error("unexpected error for %s: %r", post_id, exc)

    try:
        if todo:
            run_bounded(todo, work, config.backend.max_in_flight, deliver)
    finally:
        if owns_backend:
            backend.close()

    lines = []
    n_ok = n_failed = mismatches = 0
    for post in ingested.posts:
        if post.post_id in late_skips:
            continue
        key = (post.post_id, model, version)
        entry = CacheEntry(key, transient[post.post_id]) if post.post_id in transient else cache.get(key)
        if entry is None:
            raise RuntimeError(f"no result recorded for {post.post_id}")
        lines.append(_result_line(post, entry))
        if entry.ok:
            n_ok += 1
            mismatches += entry.value.score_mismatch
        else:
            n_failed += 1

    config.output_dir.mkdir(parents=True, exist_ok=True)
    with config.results_path.open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n")

    attempted = n_ok + n_failed
    failure_rate = n_failed / attempted if attempted else 0.0
    manifest = {
        "model_name": model,
        "prompt_version": version,
        "prompt_variant": config.variant.value,
        "temperature": config.backend.temperature,
        "backend": config.backend_kind,
        "endpoint": config.backend.url,
        "inputs": [str(p) for p in config.inputs],
        "counts": {
            "input_posts": len(ingested.posts) + len(ingested.skipped),
            "results": len(lines),
            "ok": n_ok,
            "failed": n_failed,
            "skipped": len(skipped),
            "cache_hits": hits,
            "classified_now": counter["requests"],
        },
        "skipped": skipped,
        "failure_rate": failure_rate,
        "mismatch_rate": mismatches / n_ok if n_ok else 0.0,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    _write_json(config.output_dir / "manifest.json", manifest)
    code = EXIT_PARTIAL if failure_rate > config.failure_ceiling else EXIT_OK
    calls = getattr(backend, "call_count", counter["requests"])
    return ClassifyOutcome(manifest, code, calls)


def read_results(path: Path) -> list[dict[str, Any]]:
    if not path.is_file():
        raise FatalConfig(f"results file not found: {path}")
    return read_jsonl(path)


def cmd_evaluate(config: RunConfig, gold_path: str | Path, results_path: str | Path | None = None):
    """Score a results file against a gold corpus; writes ``eval_report.json``."""
    config.validate()
    gold_path = Path(gold_path)
    if not gold_path.is_file():
        raise FatalConfig(f"gold corpus not found: {gold_path}")
    rows = read_results(Path(results_path) if results_path else config.results_path)
    gold = load_annotated(gold_path, config.gold_field_map)
    result_ids = {str(r["post_id"]) for r in rows}
    matched = [g for g in gold if g.post_id in result_ids]
    if not matched:
        raise JoinError("results and gold corpus share no post ids")
    preds = {str(r["post_id"]): Classification.from_dict(r) for r in rows if r.get("status") == "ok"}
    report = evaluate_run(matched, preds)
    report.extra["gold_path"] = str(gold_path)
    report.extra["n_gold_unmatched"] = len(gold) - len(matched)
    _write_json(config.output_dir / "eval_report.json", report.to_dict())
    return report


def results_to_records(rows: Sequence[dict[str, Any]]) -> tuple[list[CorpusRecord], int]:
    records, missing = [], 0
    for r in rows:
        if r.get("status") != "ok":
            continue
        if r.get("created_utc") is None:
            missing += 1
            continue
        records.append(
            CorpusRecord(
                post_id=str(r["post_id"]),
                subreddit=r.get("subreddit") or "unknown",
                created_utc=float(r["created_utc"]),
                classification=Classification.from_dict(r),
            )
        )
    return records, missing


def cmd_analyze(config: RunConfig, results_path: str | Path | None = None):
    """Compute the analytics bundle from a results file and write it as CSV + JSON."""
    config.validate()
    rows = read_results(Path(results_path) if results_path else config.results_path)
    records, missing = results_to_records(rows)
    op, threshold = config.threshold
    window = config.window if (config.window.start or config.window.end) else None
    bundle = build_bundle(records, threshold, op, window)
    if missing:
        bundle.notes.append(f"{missing} classified record(s) lack created_utc and were excluded")
    write_bundle(bundle, config.analytics_dir)
    return bundle


def cmd_report(config: RunConfig, bundle_path: str | Path | None = None) -> Path:
    config.validate()
    path = Path(bundle_path) if bundle_path else config.analytics_dir / BUNDLE_FILE
    if not path.is_file():
        raise MissingBundle(f"analytics bundle not found: {path}")
    digest = render_digest(load_bundle(path))
    out = config.output_dir / "report.md"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(digest, encoding="utf-8")
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run configuration")
    common.add_argument("--output-dir")
    common.add_argument("--threshold-rule", help="high-risk rule, e.g. ge7 or gt7")
    common.add_argument("--window", help="analysis window FROM..TO as YYYY-MM..YYYY-MM")
    common.add_argument("--model")
    common.add_argument("--prompt-variant", choices=["base", "scored"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="emorisk", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[common], help="classify a corpus")
    c.add_argument("--input", action="append", help="line-delimited JSON corpus (repeatable)")
    c.add_argument("--endpoint", help="model server base URL")
    c.add_argument("--concurrency", type=int, help="max requests in flight")
    c.add_argument("--cache")
    c.add_argument("--backend", choices=["http", "mock"])
    c.add_argument("--template", help="prompt template override with {post}/{emotions}")

    e = sub.add_parser("evaluate", parents=[common], help="score results against a gold corpus")
    e.add_argument("--gold", required=True)
    e.add_argument("--results")

    a = sub.add_parser("analyze", parents=[common], help="compute analytics CSVs")
    a.add_argument("--results")

    r = sub.add_parser("report", parents=[common], help="render a markdown digest")
    r.add_argument("--bundle")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        config = load_config(
            args.config,
            inputs=getattr(args, "input", None),
            output_dir=args.output_dir,
            cache=getattr(args, "cache", None),
            model=args.model,
            endpoint=getattr(args, "endpoint", None),
            concurrency=getattr(args, "concurrency", None),
            variant=args.prompt_variant,
            threshold_rule=args.threshold_rule,
            window=args.window,
            backend_kind=getattr(args, "backend", None),
            template_file=getattr(args, "template", None),
        )
        if args.command == "classify":
            outcome = cmd_classify(config)
            counts = outcome.manifest["counts"]
            print(
                f"classified {counts['ok']} ok, {counts['failed']} failed, {counts['skipped']} skipped, "
                f"{counts['cache_hits']} from cache -> {config.results_path}"
            )
            return outcome.exit_code
        if args.command == "evaluate":
            report = cmd_evaluate(config, args.gold, args.results)
            print(report.summary_line())
            return EXIT_OK
        if args.command == "analyze":
            bundle = cmd_analyze(config, args.results)
            print(f"analysed {bundle.n_records} records -> {config.analytics_dir}")
            for note in bundle.notes:
                print(f"note: {note}")
            return EXIT_OK
        out = cmd_report(config, args.bundle)
        print(out.read_text(encoding="utf-8"))
        return EXIT_OK
    except (FatalConfig, JoinError, MissingBundle, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
