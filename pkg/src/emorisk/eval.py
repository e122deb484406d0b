"""Gold-corpus loading and multi-label precision/recall/F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .core import EMOTIONS, Emotion, EmotionLabelSet, emotion_from_name
from .prompt import compose_post_text


class SchemaError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


class UnknownLabel(ValueError):
    def __init__(self, name: str, index: int | None = None):
        where = f"record {index}: " if index is not None else ""
        super().__init__(f"{where}unknown emotion label {name!r}")
        self.name = name
        self.index = index


@dataclass(frozen=True)
class FieldMap:
    """Where each logical field lives in a corpus record.

    ``label_format`` is ``"names"`` (a list of emotion names, or a comma
    separated string), ``"booleans"`` (one field per emotion, optionally
    nested under ``labels``) or ``"auto"``.
    """

    id: str | None = "id"
    text: str = "text"
    title: str | None = "title"
    subreddit: str | None = "subreddit"
    created_utc: str | None = "created_utc"
    labels: str | None = "labels"
    label_format: str = "auto"
    split: str | None = "split"

    def __post_init__(self) -> None:
        if self.label_format not in ("names", "booleans", "auto"):
            raise ValueError(f"unknown label_format {self.label_format!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FieldMap":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown field_map keys: {sorted(extra)}")
        return cls(**dict(data))


# DepressionEmo ships JSON lines with "post", "title" and an "emotions" name list.
DEPRESSIONEMO_FIELDS = FieldMap(text="post", labels="emotions", label_format="names")

# Public Reddit dump layout: submissions carry selftext, comments carry body.
REDDIT_FIELDS = FieldMap(text="selftext", labels=None)


@dataclass(frozen=True)
class AnnotatedPost:
    post_id: str
    text: str
    gold: EmotionLabelSet
    split: str | None = None


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    """Read line-delimited JSON; a single JSON array file is accepted too."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        data = json.loads(stripped)
        if not isinstance(data, list):
            raise ValueError(f"{path}: expected a list of records")
        return data
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def _gold_bool(value: Any, key: str, index: int) -> bool:
    # Gold files commonly use 0/1; unlike model output, integers are accepted here.
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value.strip().lower() in ("true", "false", "0", "1"):
        return value.strip().lower() in ("true", "1")
    raise SchemaError(index, f"label {key!r} has non-boolean value {value!r}")


def _labels_from_names(names: Any, index: int) -> EmotionLabelSet:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    if not isinstance(names, (list, tuple)):
        raise SchemaError(index, f"label list has type {type(names).__name__}")
    present = []
    for name in names:
        if not isinstance(name, str):
            raise SchemaError(index, f"label {name!r} is not a string")
        emotion = emotion_from_name(name)
        if emotion is None:
            raise UnknownLabel(name, index)
        present.append(emotion)
    return EmotionLabelSet.from_present(present)


def _labels_from_booleans(source: Mapping[str, Any], index: int) -> EmotionLabelSet:
    flags: dict[Emotion, bool] = {}
    for key, value in source.items():
        emotion = emotion_from_name(key)
        if emotion is not None:
            flags[emotion] = _gold_bool(value, key, index)
    missing = [e.value for e in EMOTIONS if e not in flags]
    if missing:
        raise SchemaError(index, f"missing gold flags: {', '.join(missing)}")
    return EmotionLabelSet.from_mapping(flags)


def gold_from_record(record: Mapping[str, Any], field_map: FieldMap, index: int = 0) -> EmotionLabelSet:
    fmt = field_map.label_format
    raw = record.get(field_map.labels) if field_map.labels else None
    if fmt == "auto":
        if isinstance(raw, (list, tuple, str)):
            fmt = "names"
        else:
            fmt = "booleans"
    if fmt == "names":
        if raw is None:
            raise SchemaError(index, f"missing label field {field_map.labels!r}")
        return _labels_from_names(raw, index)
    source = raw if isinstance(raw, Mapping) else record
    return _labels_from_booleans(source, index)


def record_text(record: Mapping[str, Any], field_map: FieldMap, index: int) -> str:
    if field_map.text not in record or not isinstance(record[field_map.text], (str, type(None))):
        raise SchemaError(index, f"missing text field {field_map.text!r}")
    title = record.get(field_map.title) if field_map.title else None
    return compose_post_text(record[field_map.text], title if isinstance(title, str) else None)


def record_id(record: Mapping[str, Any], field_map: FieldMap, index: int) -> str:
    if field_map.id is None:
        return str(index)
    if field_map.id not in record or record[field_map.id] in (None, ""):
        raise SchemaError(index, f"missing id field {field_map.id!r}")
    return str(record[field_map.id])


def load_annotated(
    path: str | Path, field_map: FieldMap = DEPRESSIONEMO_FIELDS, split: str | None = None
) -> list[AnnotatedPost]:
    """Load a gold-annotated corpus. ``split`` overrides any per-record split field."""
    posts = []
    seen: set[str] = set()
    for index, record in enumerate(read_jsonl(path)):
        if not isinstance(record, Mapping):
            raise SchemaError(index, "record is not an object")
        post_id = record_id(record, field_map, index)
        if post_id in seen:
            raise SchemaError(index, f"duplicate id {post_id!r}")
        seen.add(post_id)
        text = record_text(record, field_map, index)
        gold = gold_from_record(record, field_map, index)
        tag = split
        if tag is None and field_map.split and record.get(field_map.split) is not None:
            tag = str(record[field_map.split])
        posts.append(AnnotatedPost(post_id, text, gold, tag))
    return posts


@dataclass(frozen=True)
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-emotion confusion counts over an evaluated set.

    Usually tracks all eight emotions; a subset may be tracked, in which case
    macro averages run over that subset only.
    """

    per_class: Mapping[Emotion, ClassCounts]

    @classmethod
    def empty(cls, emotions: Iterable[Emotion | str] = EMOTIONS) -> "ConfusionCounts":
        chosen = {Emotion(e) for e in emotions}
        return cls({e: ClassCounts() for e in EMOTIONS if e in chosen})

    @property
    def emotions(self) -> list[Emotion]:
        return list(self.per_class)

    @property
    def n_posts(self) -> int:
        totals = {c.total for c in self.per_class.values()}
        if len(totals) > 1:
            raise ValueError("inconsistent counts across classes")
        return totals.pop() if totals else 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if set(self.per_class) != set(other.per_class):
            raise ValueError("cannot merge counts over different class sets")
        return ConfusionCounts({e: self.per_class[e] + other.per_class[e] for e in self.per_class})


def accumulate(gold: EmotionLabelSet, pred: EmotionLabelSet, counts: ConfusionCounts) -> ConfusionCounts:
    updated = {}
    for emotion, c in counts.per_class.items():
        g, p = gold[emotion], pred[emotion]
        updated[emotion] = ClassCounts(
            c.tp + (g and p), c.fp + (not g and p), c.fn + (g and not p), c.tn + (not g and not p)
        )
    return ConfusionCounts(updated)


def _ratio(num: int | float, den: int | float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    per_class: Mapping[Emotion, PRF]
    micro: PRF
    macro: PRF
    n_posts: int
    n_failed: int = 0
    model_name: str = ""
    prompt_version: str = ""
    zero_division: str = "metric is 0 when its denominator is 0"
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def failure_rate(self) -> float:
        total = self.n_posts + self.n_failed
        return self.n_failed / total if total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_name": self.model_name,
            "prompt_version": self.prompt_version,
            "n_posts": self.n_posts,
            "n_failed": self.n_failed,
            "failure_rate": self.failure_rate,
            "micro": self.micro.to_dict(),
            "macro": self.macro.to_dict(),
            "per_class": {e.value: m.to_dict() for e, m in self.per_class.items()},
            "counts": {
                e.value: {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}
                for e, c in self.counts.per_class.items()
            },
            "zero_division": self.zero_division,
            **self.extra,
        }

    def summary_line(self) -> str:
        mi, ma = self.micro, self.macro
        return (
            f"{self.model_name or '?'} [{self.prompt_version or '?'}] n={self.n_posts} "
            f"micro P/R/F1={mi.precision:.3f}/{mi.recall:.3f}/{mi.f1:.3f} "
            f"macro P/R/F1={ma.precision:.3f}/{ma.recall:.3f}/{ma.f1:.3f} "
            f"failed={self.n_failed} ({self.failure_rate:.1%})"
        )


def summarize(
    counts: ConfusionCounts, *, n_failed: int = 0, model_name: str = "", prompt_version: str = ""
) -> EvalReport:
    per_class = {}
    for emotion, c in counts.per_class.items():
        p = _ratio(c.tp, c.tp + c.fp)
        r = _ratio(c.tp, c.tp + c.fn)
        per_class[emotion] = PRF(p, r, _f1(p, r))
    tp = sum(c.tp for c in counts.per_class.values())
    fp = sum(c.fp for c in counts.per_class.values())
    fn = sum(c.fn for c in counts.per_class.values())
    mp, mr = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    k = len(per_class)
    macro = PRF(
        _ratio(sum(m.precision for m in per_class.values()), k),
        _ratio(sum(m.recall for m in per_class.values()), k),
        _ratio(sum(m.f1 for m in per_class.values()), k),
    )
    return EvalReport(
        counts=counts,
        per_class=per_class,
        micro=PRF(mp, mr, _f1(mp, mr)),
        macro=macro,
        n_posts=counts.n_posts,
        n_failed=n_failed,
        model_name=model_name,
        prompt_version=prompt_version,
    )


def evaluate_run(
    annotated: Sequence[AnnotatedPost],
    predictions: Mapping[str, Any],
    *,
    model_name: str = "",
    prompt_version: str = "",
) -> EvalReport:
    """Score predictions against gold.

    ``predictions`` maps post id to a Classification (anything with ``labels``)
    or a bare EmotionLabelSet. Posts with no prediction count as failed and are
    kept out of the confusion counts.
    """
    versions = {getattr(p, "prompt_version", None) for p in predictions.values()} - {None, ""}
    if len(versions) > 1:
        raise ValueError(f"predictions mix prompt versions: {sorted(versions)}")
    if not prompt_version and versions:
        prompt_version = versions.pop()
    if not model_name:
        names = {getattr(p, "model_name", None) for p in predictions.values()} - {None, ""}
        model_name = ",".join(sorted(names))
    counts = ConfusionCounts.empty()
    failed = 0
    for post in annotated:
        pred = predictions.get(post.post_id)
        if pred is None:
            failed += 1
            continue
        labels = pred if isinstance(pred, EmotionLabelSet) else pred.labels
        counts = accumulate(post.gold, labels, counts)
    return summarize(counts, n_failed=failed, model_name=model_name, prompt_version=prompt_version)
