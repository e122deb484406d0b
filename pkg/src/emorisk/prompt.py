"""Zero-shot prompt templates for eight-emotion classification."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import EMOTION_NAMES

DEFAULT_MAX_CHARS = 8000
TRUNCATION_MARKER = " [truncated]"
PROMPT_REVISION = "v1"

# Appended on a re-prompt after an unparseable answer.
REPROMPT_SUFFIX = "Respond with valid JSON only."

BASE_TEMPLATE = (
    'Analyze the sentiment of the following comment from Reddit: "{post}". '
    "Classify which of the following emotions apply: {emotions}. "
    "Answer with a JSON object, with True or False for each emotion."
)

SCORE_INSTRUCTION = (
    "Then, compute a severity score as follows: assign weights to emotions "
    "(suicide_intent=3, hopelessness=2, worthlessness=2, cognitive_dysfunction=1, "
    "sadness=1, emptiness=1, loneliness=1, anger=1). "
    'Return also the field "severity_score" with the sum of the weights for the '
    "emotions classified as True."
)


class EmptyPost(ValueError):
    """Post text is empty after trimming; the record should be skipped."""


class PromptVariant(str, Enum):
    BASE = "base"
    SCORED = "scored"


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    variant: PromptVariant
    prompt_version: str
    truncated: bool = False

    def with_reprompt(self) -> "RenderedPrompt":
        return RenderedPrompt(
            f"{self.text}\n{REPROMPT_SUFFIX}", self.variant, self.prompt_version, self.truncated
        )


def emotion_list() -> str:
    return ", ".join(EMOTION_NAMES)


def compose_post_text(body: str | None, title: str | None = None) -> str:
    """Title (if any) and body joined by a blank line."""
    body = body or ""
    if title and title.strip():
        return f"{title.strip()}\n\n{body}"
    return body


def _truncate(text: str, max_chars: int) -> tuple[str, bool]:
    if len(text) <= max_chars:
        return text, False
    if max_chars <= len(TRUNCATION_MARKER):
        return text[:max_chars], True
    return text[: max_chars - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER, True


def _escape_quotes(text: str) -> str:
    return text.replace('"', '\\"')


class PromptTemplate:
    """A prompt body with ``{post}`` and ``{emotions}`` placeholders.

    The shipped template is used unless an override is supplied. Overrides get a
    content-hashed version tag so cached classifications never cross templates.
    """

    def __init__(self, body: str = BASE_TEMPLATE, version: str | None = None):
        if "{post}" not in body:
            raise ValueError("template must contain a {post} placeholder")
        self.body = body
        if version is None:
            if body == BASE_TEMPLATE:
                version = PROMPT_REVISION
            else:
                digest = hashlib.sha256(body.encode("utf-8")).hexdigest()[:10]
                version = f"custom-{digest}"
        self.version = version

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8").strip())

    def version_tag(self, variant: PromptVariant) -> str:
        return f"{self.version}-{variant.value}"

    def render(
        self,
        post_text: str,
        variant: PromptVariant = PromptVariant.BASE,
        max_chars: int = DEFAULT_MAX_CHARS,
    ) -> RenderedPrompt:
        if max_chars < 1:
            raise ValueError("max_chars must be positive")
        if not post_text or not post_text.strip():
            raise EmptyPost("post text is empty")
        variant = PromptVariant(variant)
        clipped, truncated = _truncate(post_text, max_chars)
        # str.replace rather than format(): post text may contain braces.
        text = self.body.replace("{emotions}", emotion_list())
        text = text.replace("{post}", _escape_quotes(clipped))
        if variant is PromptVariant.SCORED:
            text = f"{text} {SCORE_INSTRUCTION}"
        return RenderedPrompt(text, variant, self.version_tag(variant), truncated)


DEFAULT_TEMPLATE = PromptTemplate()


def render_prompt(
    post_text: str,
    variant: PromptVariant = PromptVariant.BASE,
    max_chars: int = DEFAULT_MAX_CHARS,
    template: PromptTemplate | None = None,
) -> RenderedPrompt:
    return (template or DEFAULT_TEMPLATE).render(post_text, variant, max_chars)


_LIST_RE = re.compile(r"emotions apply: ((?:[a-z_]+, )*[a-z_]+)\.")


def embedded_emotions(prompt_text: str) -> list[str]:
    """Recover the emotion names listed in a prompt rendered from the shipped template."""
    match = _LIST_RE.search(prompt_text)
    if match is None:
        return []
    return match.group(1).split(", ")


def embedded_post(prompt_text: str) -> str | None:
    """Inverse of the post substitution for prompts rendered from the shipped template."""
    head = 'comment from Reddit: "'
    start = prompt_text.find(head)
    end = prompt_text.find('". Classify which', start)
    if start < 0 or end < 0:
        return None
    return prompt_text[start + len(head) : end].replace('\\"', '"')

