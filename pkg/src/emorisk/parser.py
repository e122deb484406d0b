"""Recover the emotion object from free-form model output.

Model answers arrive wrapped in code fences, preceded by chatter, with
Python-style ``True``/``False`` literals or capitalised keys. The functions
here peel those layers off in a fixed order and record every repair they make
so that parser reliability can be reported separately from model quality.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

from .backend import Backend, BackendConfig, BackendError
from .core import (
    EMOTIONS,
    Emotion,
    EmotionLabelSet,
    SeverityLevel,
    compute_severity,
    default_weights,
    normalize_key,
    severity_level,
)
from .prompt import DEFAULT_MAX_CHARS, PromptTemplate, PromptVariant, render_prompt

FENCE_STRIPPED = "fence_stripped"
PROSE_STRIPPED = "prose_stripped"
KEY_NORMALIZED = "key_normalized"
VALUE_COERCED = "value_coerced"
SYNTAX_REPAIRED = "syntax_repaired"

SCORE_KEY = "severity_score"


class ParseError(ValueError):
    @property
    def kind(self) -> str:
        return type(self).__name__


class NoObjectFound(ParseError):
    pass


class MalformedObject(ParseError):
    pass


class MissingEmotion(ParseError):
    def __init__(self, name: str):
        super().__init__(f"missing emotion: {name}")
        self.name = name


class InvalidValue(ParseError):
    def __init__(self, key: str, value: Any):
        super().__init__(f"value for {key!r} is not a boolean: {value!r}")
        self.key = key
        self.value = value


class ClassificationFailed(Exception):
    def __init__(self, post_id: str, kind: str, message: str, attempts: int):
        super().__init__(f"{post_id}: {kind} after {attempts} attempt(s): {message}")
        self.post_id = post_id
        self.kind = kind
        self.message = message
        self.attempts = attempts


@dataclass(frozen=True)
class Candidate:
    text: str
    repairs: tuple[str, ...] = ()


@dataclass(frozen=True)
class ParsedClassification:
    labels: EmotionLabelSet
    reported_score: int | None = None
    repairs_applied: tuple[str, ...] = ()


@dataclass(frozen=True)
class Classification:
    post_id: str
    labels: EmotionLabelSet
    severity: int
    level: SeverityLevel
    reported_score: int | None
    score_mismatch: bool
    model_name: str
    prompt_version: str
    classified_at: str = ""
    attempts: int = 1
    repairs: tuple[str, ...] = ()

    def to_dict(self, volatile: bool = True) -> dict[str, Any]:
        """Serializable form; ``volatile=False`` drops the wall-clock timestamp."""
        out: dict[str, Any] = {
            "post_id": self.post_id,
            "labels": self.labels.to_dict(),
            "severity": self.severity,
            "level": self.level.value,
            "reported_score": self.reported_score,
            "score_mismatch": self.score_mismatch,
            "model_name": self.model_name,
            "prompt_version": self.prompt_version,
            "attempts": self.attempts,
            "repairs": list(self.repairs),
        }
        if volatile:
            out["classified_at"] = self.classified_at
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Classification":
        labels = EmotionLabelSet.from_mapping(data["labels"])
        severity = compute_severity(labels)
        reported = data.get("reported_score")
        return cls(
            post_id=str(data["post_id"]),
            labels=labels,
            severity=severity,
            level=severity_level(severity),
            reported_score=reported,
            score_mismatch=reported is not None and reported != severity,
            model_name=data.get("model_name", ""),
            prompt_version=data.get("prompt_version", ""),
            classified_at=data.get("classified_at", ""),
            attempts=int(data.get("attempts", 1)),
            repairs=tuple(data.get("repairs", ())),
        )


_FENCE_RE = re.compile(r"```[^\n`]*\n?(.*?)```", re.DOTALL)


def _balanced_end(text: str, start: int) -> int | None:
    """Index just past the brace matching ``text[start]``, honouring JSON strings."""
    depth = 0
    in_str = False
    quote = ""
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                in_str = False
        elif ch in "\"'":
            # Apostrophes only open a string where a single-quoted key/value may start.
            if ch == "'" and text[i - 1 : i].strip() not in ("", "{", ",", ":", "["):
                continue
            in_str, quote = True, ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def _first_object(text: str) -> tuple[int, int] | None:
    pos = text.find("{")
    while pos != -1:
        end = _balanced_end(text, pos)
        if end is not None:
            return pos, end
        pos = text.find("{", pos + 1)
    return None


def extract_candidate(raw: str) -> Candidate:
    """Cut the first balanced ``{...}`` out of ``raw``.

    Code fences are unwrapped first (preferring the first fence that holds an
    object); any other text around the object is discarded and reported as
    ``prose_stripped``.
    """
    if raw is None or not raw.strip():
        raise NoObjectFound("empty response")
    repairs: list[str] = []
    body = raw
    for match in _FENCE_RE.finditer(raw):
        inner = match.group(1)
        if _first_object(inner) is not None:
            repairs.append(FENCE_STRIPPED)
            outside = raw[: match.start()] + raw[match.end() :]
            if outside.strip():
                repairs.append(PROSE_STRIPPED)
            body = inner
            break
    span = _first_object(body)
    if span is None:
        raise NoObjectFound("no balanced object in response")
    start, end = span
    if (body[:start].strip() or body[end:].strip()) and PROSE_STRIPPED not in repairs:
        repairs.append(PROSE_STRIPPED)
    return Candidate(body[start:end], tuple(repairs))


_BARE_LITERAL_RE = re.compile(r"\b(True|False|None)\b")
_TRAILING_COMMA_RE = re.compile(r",\s*([}\]])")


def _outside_strings(text: str, fn) -> str:
    """Apply ``fn`` to the parts of ``text`` that are not inside double-quoted strings."""
    parts = re.split(r'("(?:[^"\\]|\\.)*")', text)
    return "".join(p if i % 2 else fn(p) for i, p in enumerate(parts))


def _decode(candidate: str) -> tuple[Any, list[str]]:
    try:
        return json.loads(candidate), []
    except json.JSONDecodeError:
        pass
    repairs: list[str] = []
    fixed = _outside_strings(
        candidate,
        lambda s: _BARE_LITERAL_RE.sub(lambda m: {"True": "true", "False": "false"}.get(m.group(1), "null"), s),
    )
    if fixed != candidate:
        repairs.append(VALUE_COERCED)
    stripped = _outside_strings(fixed, lambda s: _TRAILING_COMMA_RE.sub(r"\1", s))
    if stripped != fixed:
        repairs.append(SYNTAX_REPAIRED)
    try:
        return json.loads(stripped), repairs
    except json.JSONDecodeError:
        pass
    # Single-quoted pseudo-JSON, as emitted by some chat models.
    try:
        value = ast.literal_eval(candidate)
    except (ValueError, SyntaxError, MemoryError, RecursionError) as exc:
        raise MalformedObject(f"cannot decode object: {exc}") from None
    return value, sorted(set(repairs) | {SYNTAX_REPAIRED})


def _as_bool(key: str, value: Any) -> tuple[bool, bool]:
    """Return (flag, coerced). Numbers are rejected on purpose."""
    if isinstance(value, bool):
        return value, False
    if isinstance(value, str):
        folded = value.strip().lower()
        if folded in ("true", "false"):
            return folded == "true", True
    raise InvalidValue(key, value)


def _as_score(value: Any) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    return None


def parse_classification(
    candidate: str | Candidate, variant: PromptVariant = PromptVariant.BASE
) -> ParsedClassification:
    repairs: list[str] = []
    if isinstance(candidate, Candidate):
        repairs.extend(candidate.repairs)
        candidate = candidate.text
    obj, decode_repairs = _decode(candidate)
    repairs.extend(decode_repairs)
    if not isinstance(obj, dict):
        raise MalformedObject(f"top-level value is {type(obj).__name__}, not an object")

    values: dict[str, Any] = {}
    for raw_key, value in obj.items():
        if not isinstance(raw_key, str):
            continue
        key = normalize_key(raw_key)
        if key != raw_key:
            repairs.append(KEY_NORMALIZED)
        if key in values and values[key] != value:
            raise MalformedObject(f"conflicting values for {key!r}")
        values[key] = value

    flags: dict[Emotion, bool] = {}
    for emotion in EMOTIONS:
        if emotion.value not in values:
            raise MissingEmotion(emotion.value)
        flag, coerced = _as_bool(emotion.value, values[emotion.value])
        if coerced:
            repairs.append(VALUE_COERCED)
        flags[emotion] = flag

    reported = None
    if PromptVariant(variant) is PromptVariant.SCORED and SCORE_KEY in values:
        reported = _as_score(values[SCORE_KEY])

    ordered = tuple(dict.fromkeys(repairs))
    return ParsedClassification(EmotionLabelSet.from_mapping(flags), reported, ordered)


def parse_response(raw: str, variant: PromptVariant = PromptVariant.BASE) -> ParsedClassification:
    return parse_classification(extract_candidate(raw), variant)


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def reconcile(
    post_id: str,
    parsed: ParsedClassification,
    model_name: str,
    prompt_version: str,
    *,
    attempts: int = 1,
    classified_at: str | None = None,
) -> Classification:
    """Build the final record. Severity is always recomputed locally."""
    severity = compute_severity(parsed.labels, default_weights())
    reported = parsed.reported_score
    return Classification(
        post_id=post_id,
        labels=parsed.labels,
        severity=severity,
        level=severity_level(severity),
        reported_score=reported,
        score_mismatch=reported is not None and reported != severity,
        model_name=model_name,
        prompt_version=prompt_version,
        classified_at=classified_at if classified_at is not None else _now(),
        attempts=attempts,
        repairs=parsed.repairs_applied,
    )


@dataclass
class ClassifyOptions:
    variant: PromptVariant = PromptVariant.BASE
    max_chars: int = DEFAULT_MAX_CHARS
    template: PromptTemplate | None = None
    max_parse_retries: int | None = None  # defaults to backend max_retries
    clock: Any = field(default=None, repr=False)


def classify_with_retry(
    post_id: str,
    post_text: str,
    backend: Backend,
    config: BackendConfig,
    options: ClassifyOptions | None = None,
) -> Classification:
    """Render, generate, parse and reconcile one post.

    A parse failure triggers a re-prompt carrying the fixed JSON-only suffix.
    Transport errors are terminal here because the backend already retried them.
    Raises ``EmptyPost`` for blank text and ``ClassificationFailed`` otherwise.
    """
    opts = options or ClassifyOptions()
    prompt = render_prompt(post_text, opts.variant, opts.max_chars, opts.template)
    retries = config.max_retries if opts.max_parse_retries is None else opts.max_parse_retries
    last: ParseError | None = None
    for attempt in range(1, retries + 2):
        current = prompt if attempt == 1 else prompt.with_reprompt()
        try:
            raw = backend.generate(current, config, post_id=post_id)
        except BackendError as exc:
            raise ClassificationFailed(post_id, exc.kind, str(exc), attempt) from exc
        try:
            parsed = parse_response(raw.text, opts.variant)
        except ParseError as exc:
            last = exc
            continue
        stamp = opts.clock() if opts.clock else None
        return reconcile(
            post_id,
            parsed,
            config.model_name,
            prompt.prompt_version,
            attempts=attempt,
            classified_at=stamp,
        )
    assert last is not None
    raise ClassificationFailed(post_id, last.kind, str(last), retries + 1)
