import json
import statistics
from dataclasses import replace

import pytest

from emorisk.backend import MockBackend
from emorisk.cache import ClassificationCache
from emorisk.cli import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    JoinError,
    MissingBundle,
    cmd_analyze,
    cmd_classify,
    cmd_evaluate,
    cmd_report,
    main,
)
from emorisk.config import FatalConfig, RunConfig, load_config
from emorisk.core import EMOTION_NAMES
from emorisk.prompt import PromptVariant
from helpers import corpus_rows, write_jsonl
from oracles import weight_sum


@pytest.fixture
def corpus(tmp_path):
    return write_jsonl(tmp_path / "corpus.jsonl", corpus_rows(50))


def make_config(tmp_path, inputs, **kw):
    cfg = load_config(None, inputs=[str(p) for p in inputs], output_dir=str(tmp_path / "out"), backend_kind="mock", **kw)
    cfg.backend = replace(cfg.backend, backoff_initial=0.0)
    return cfg


def read_lines(path):
    return [json.loads(l) for l in path.read_text().splitlines()]


def test_cold_then_warm(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    backend = MockBackend()
    first = cmd_classify(cfg, backend)
    assert first.exit_code == EXIT_OK
    assert backend.call_count == 50
    snapshot = cfg.results_path.read_bytes()
    assert len(read_lines(cfg.results_path)) == 50

    again = MockBackend()
    second = cmd_classify(make_config(tmp_path, [corpus]), again)
    assert again.call_count == 0
    assert second.manifest["counts"]["cache_hits"] == 50
    assert cfg.results_path.read_bytes() == snapshot


def test_results_are_in_input_order_and_valid(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    cmd_classify(cfg, MockBackend(delay=lambda pid: 0.002 * (hash(pid) % 3)))
    rows = read_lines(cfg.results_path)
    assert [r["post_id"] for r in rows] == [f"t3_{i:04d}" for i in range(50)]
    for r in rows:
        assert r["status"] == "ok"
        assert set(EMOTION_NAMES) <= set(r["labels"])
        assert r["severity"] == weight_sum(r["labels"])
        assert "classified_at" not in r


def test_empty_and_removed_posts_are_skipped(tmp_path):
    rows = corpus_rows(50)
    rows[3]["selftext"] = ""
    rows[3]["title"] = "   "
    rows[7]["selftext"] = "[removed]"
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    cfg = make_config(tmp_path, [path])
    backend = MockBackend()
    outcome = cmd_classify(cfg, backend)
    assert len(read_lines(cfg.results_path)) == 48
    reasons = {s["post_id"]: s["reason"] for s in outcome.manifest["skipped"]}
    assert reasons == {"t3_0003": "empty", "t3_0007": "removed"}
    assert backend.call_count == 48


def test_duplicates(tmp_path):
    rows = corpus_rows(5)
    rows.append(dict(rows[0]))  # same id
    rows.append({**rows[1], "id": "other"})  # same text, same subreddit
    cfg = make_config(tmp_path, [write_jsonl(tmp_path / "c.jsonl", rows)])
    outcome = cmd_classify(cfg, MockBackend())
    ids = [r["post_id"] for r in read_lines(cfg.results_path)]
    assert ids == [f"t3_{i:04d}" for i in range(5)]
    assert [s["reason"] for s in outcome.manifest["skipped"]] == ["duplicate_id", "duplicate_text"]


@pytest.mark.parametrize("change", [{"model": "llama3:8b"}, {"variant": "scored"}])
def test_cache_key_invalidation(tmp_path, corpus, change):
    cmd_classify(make_config(tmp_path, [corpus]), MockBackend())
    backend = MockBackend()
    cfg = make_config(tmp_path, [corpus], **change)
    outcome = cmd_classify(cfg, backend)
    assert backend.call_count == 50
    assert outcome.manifest["counts"]["cache_hits"] == 0
    assert len(ClassificationCache(cfg.cache_path)) == 100


def test_parse_failures_are_cached(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    backend = MockBackend("I will not answer that.")
    outcome = cmd_classify(cfg, backend)
    assert outcome.exit_code == EXIT_PARTIAL
    assert outcome.manifest["failure_rate"] == 1.0
    assert {r["error_kind"] for r in read_lines(cfg.results_path)} == {"NoObjectFound"}
    again = MockBackend()
    cmd_classify(make_config(tmp_path, [corpus]), again)
    assert again.call_count == 0


def test_transport_failures_are_retried_next_run(tmp_path, corpus):
    failing = {"t3_0001", "t3_0002"}
    cfg = make_config(tmp_path, [corpus])
    outcome = cmd_classify(cfg, MockBackend(permanent_failures=failing))
    assert outcome.manifest["counts"]["failed"] == 2
    assert outcome.exit_code == EXIT_OK  # 2/50 is under the 10% ceiling
    backend = MockBackend()
    cmd_classify(make_config(tmp_path, [corpus]), backend)
    assert sorted(set(backend.calls)) == sorted(failing)


def test_failure_ceiling(tmp_path, corpus):
    failing = {f"t3_{i:04d}" for i in range(6)}
    outcome = cmd_classify(make_config(tmp_path, [corpus]), MockBackend(permanent_failures=failing))
    assert outcome.manifest["failure_rate"] == pytest.approx(0.12)
    assert outcome.exit_code == EXIT_PARTIAL


def test_scored_variant_records_mismatch_rate(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus], variant="scored")
    outcome = cmd_classify(cfg, MockBackend())
    assert outcome.manifest["prompt_version"] == "v1-scored"
    assert outcome.manifest["mismatch_rate"] == 0.0


# -- evaluate -------------------------------------------------------------


def gold_from_results(tmp_path, results, drop=()):
    rows = []
    for r in read_lines(results):
        if r["post_id"] in drop:
            continue
        rows.append({"id": r["post_id"], "post": "x", "emotions": [k for k, v in r["labels"].items() if v]})
    return write_jsonl(tmp_path / "gold.jsonl", rows)


def test_evaluate_perfect(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    cmd_classify(cfg, MockBackend())
    report = cmd_evaluate(cfg, gold_from_results(tmp_path, cfg.results_path))
    assert report.micro.f1 == report.macro.f1 == 1.0
    saved = json.loads((cfg.output_dir / "eval_report.json").read_text())
    assert saved["micro"]["f1"] == 1.0


def test_evaluate_join_error(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    cmd_classify(cfg, MockBackend())
    gold = write_jsonl(tmp_path / "g.jsonl", [{"id": "nope", "post": "x", "emotions": []}])
    with pytest.raises(JoinError):
        cmd_evaluate(cfg, gold)


def test_evaluate_missing_gold(tmp_path, corpus):
    with pytest.raises(FatalConfig):
        cmd_evaluate(make_config(tmp_path, [corpus]), tmp_path / "absent.jsonl")


# -- analyze and report ---------------------------------------------------


def test_analyze_matches_oracle(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    cmd_classify(cfg, MockBackend())
    bundle = cmd_analyze(cfg)
    rows = read_lines(cfg.results_path)
    for sub in {r["subreddit"] for r in rows}:
        scores = [weight_sum(r["labels"]) for r in rows if r["subreddit"] == sub]
        d = bundle.distributions[sub]
        assert d.n == len(scores)
        assert d.mean == pytest.approx(statistics.fmean(scores), abs=1e-12)
        assert d.median == statistics.median(scores)
        assert d.pct_at_or_above_threshold == sum(s >= 7 for s in scores) / len(scores)
    rates = {(r.group, r.emotion.value): r.rate for r in bundle.rates}
    assert rates[("all", "sadness")] == sum(r["labels"]["sadness"] for r in rows) / 50
    for name in ("detection_rates.csv", "correlation_rho.csv", "monthly_trend.csv", "bundle.json"):
        assert (cfg.analytics_dir / name).is_file()


def test_analyze_single_post(tmp_path):
    cfg = make_config(tmp_path, [write_jsonl(tmp_path / "c.jsonl", corpus_rows(1))])
    cmd_classify(cfg, MockBackend())
    bundle = cmd_analyze(cfg)
    assert bundle.correlation is None
    assert any("InsufficientData" in n for n in bundle.notes)


def test_analyze_empty_results(tmp_path):
    cfg = make_config(tmp_path, [])
    cfg.output_dir.mkdir(parents=True)
    cfg.results_path.write_text("")
    bundle = cmd_analyze(cfg)
    assert bundle.n_records == 0
    assert bundle.notes


def test_report_uses_bundle_values(tmp_path, corpus):
    cfg = make_config(tmp_path, [corpus])
    cmd_classify(cfg, MockBackend())
    bundle = cmd_analyze(cfg)
    text = cmd_report(cfg).read_text()
    assert "severe (high alert)" in text
    assert "## Cross-group comparison" in text
    for sub, d in bundle.distributions.items():
        assert f"| {sub} | {d.n} | {d.mean:.3f} |" in text


def test_report_single_group_and_rule(tmp_path):
    rows = corpus_rows(12, subreddits=("r/depression",))
    cfg = make_config(tmp_path, [write_jsonl(tmp_path / "c.jsonl", rows)], threshold_rule="gt5")
    cmd_classify(cfg, MockBackend())
    cmd_analyze(cfg)
    text = cmd_report(cfg).read_text()
    assert "Cross-group" not in text
    assert "high risk (S > 5)" in text
    assert "severe (high alert)" not in text


def test_report_missing_bundle(tmp_path):
    with pytest.raises(MissingBundle):
        cmd_report(make_config(tmp_path, []))


# -- main and config ------------------------------------------------------


def test_main_end_to_end(tmp_path, corpus, capsys):
    out = tmp_path / "run"
    base = ["--output-dir", str(out)]
    assert main(["classify", "--backend", "mock", "--input", str(corpus), *base]) == EXIT_OK
    assert "50 ok" in capsys.readouterr().out
    assert main(["analyze", *base]) == EXIT_OK
    assert main(["report", *base]) == EXIT_OK
    assert "# Depression risk digest" in capsys.readouterr().out


def test_main_fatal_config(tmp_path, capsys):
    assert main(["classify", "--backend", "mock", "--input", str(tmp_path / "missing.jsonl"),
                 "--output-dir", str(tmp_path)]) == EXIT_FATAL
    assert "input not found" in capsys.readouterr().err
    assert main(["classify", "--backend", "mock", "--output-dir", str(tmp_path)]) == EXIT_FATAL
    assert main(["report", "--output-dir", str(tmp_path)]) == EXIT_FATAL
    assert main(["analyze", "--output-dir", str(tmp_path), "--threshold-rule", "eq3"]) == EXIT_FATAL


def test_main_unreachable_backend_is_partial(tmp_path, corpus):
    rc = main(["classify", "--input", str(corpus), "--output-dir", str(tmp_path / "o"),
               "--endpoint", "http://127.0.0.1:9", "--config", str(write_fast_config(tmp_path))])
    assert rc == EXIT_PARTIAL


def write_fast_config(tmp_path):
    path = tmp_path / "fast.yaml"
    path.write_text("backend:\n  max_retries: 0\n  request_timeout: 1\n  backoff_initial: 0\n")
    return path


def test_load_config_yaml(tmp_path, monkeypatch):
    monkeypatch.delenv("EMORISK_BASE_URL", raising=False)
    path = tmp_path / "run.yaml"
    path.write_text(
        "backend:\n  model_name: llama3:8b\n  max_in_flight: 2\n"
        "prompt:\n  variant: scored\n"
        "input: [a.jsonl, b.jsonl]\n"
        "window: 2024-01..2025-07\n"
        "threshold_rule: gt7\n"
    )
    cfg = load_config(path, model="qwen2:7b")
    assert cfg.backend.model_name == "qwen2:7b"
    assert cfg.backend.max_in_flight == 2
    assert cfg.variant is PromptVariant.SCORED
    assert [p.name for p in cfg.inputs] == ["a.jsonl", "b.jsonl"]
    assert str(cfg.window) == "2024-01..2025-07"
    assert cfg.threshold == ("gt", 7)
    monkeypatch.setenv("EMORISK_BASE_URL", "http://gpu-box:11434")
    assert load_config(path).backend.base_url == "http://gpu-box:11434"


@pytest.mark.parametrize(
    "text", ["backend:\n  colour: red\n", "mystery: 1\n", "- a\n- b\n", "backend:\n  max_in_flight: 0\n", "{"]
)
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(FatalConfig):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(FatalConfig):
        load_config(tmp_path / "nope.yaml")


def test_default_config_is_valid():
    assert RunConfig().validate().threshold == ("ge", 7)
