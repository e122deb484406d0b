import pytest
from hypothesis import given
from hypothesis import strategies as st

from emorisk.core import EMOTION_NAMES
from emorisk.prompt import (
    REPROMPT_SUFFIX,
    TRUNCATION_MARKER,
    EmptyPost,
    PromptTemplate,
    PromptVariant,
    compose_post_text,
    embedded_emotions,
    embedded_post,
    render_prompt,
)

posts = st.text(min_size=1, max_size=300).filter(lambda s: s.strip())


def test_base_substitution():
    p = render_prompt("I feel empty", PromptVariant.BASE, 8000)
    assert 'comment from Reddit: "I feel empty"' in p.text
    for name in EMOTION_NAMES:
        assert name in p.text
    assert not p.truncated
    assert p.prompt_version == "v1-base"
    assert "Answer with a JSON object, with True or False for each emotion." in p.text


def test_empty_post():
    with pytest.raises(EmptyPost):
        render_prompt("   ", PromptVariant.BASE, 8000)


def test_truncation_to_exact_length():
    text = "x" * 9000
    p = render_prompt(text, PromptVariant.SCORED, 8000)
    assert p.truncated
    post = embedded_post(p.text)
    assert len(post) == 8000
    assert post.endswith(TRUNCATION_MARKER)


def test_no_truncation_at_limit():
    p = render_prompt("y" * 8000, PromptVariant.BASE, 8000)
    assert not p.truncated
    assert embedded_post(p.text) == "y" * 8000


def test_scored_variant_lists_weights():
    p = render_prompt("hello", PromptVariant.SCORED)
    assert (
        "suicide_intent=3, hopelessness=2, worthlessness=2, cognitive_dysfunction=1, "
        "sadness=1, emptiness=1, loneliness=1, anger=1" in p.text
    )
    assert '"severity_score"' in p.text
    assert p.prompt_version == "v1-scored"


def test_quotes_are_escaped():
    p = render_prompt('she said "goodbye"', PromptVariant.BASE)
    assert 'she said \\"goodbye\\"' in p.text
    assert embedded_post(p.text) == 'she said "goodbye"'


def test_braces_in_post_are_literal():
    p = render_prompt("{emotions} and {post}", PromptVariant.BASE)
    assert embedded_post(p.text) == "{emotions} and {post}"


@given(posts, st.sampled_from(list(PromptVariant)))
def test_emotion_list_round_trips(text, variant):
    p = render_prompt(text, variant)
    assert embedded_emotions(p.text) == list(EMOTION_NAMES)


@given(posts)
def test_severity_score_only_in_scored(text):
    assert "severity_score" in render_prompt(text, PromptVariant.SCORED).text
    # A post can itself mention the field name; only the template part matters.
    if "severity_score" not in text:
        assert "severity_score" not in render_prompt(text, PromptVariant.BASE).text


@given(posts, st.sampled_from(list(PromptVariant)), st.integers(min_value=1, max_value=400))
def test_rendering_is_deterministic_and_bounded(text, variant, max_chars):
    a = render_prompt(text, variant, max_chars)
    b = render_prompt(text, variant, max_chars)
    assert a == b
    assert a.truncated == (len(text) > max_chars)
    post = embedded_post(a.text)
    if post is not None and '". Classify which' not in text:
        assert len(post) <= max_chars


def test_title_is_prepended():
    assert compose_post_text("body", "Title") == "Title\n\nbody"
    assert compose_post_text("body", "  ") == "body"
    assert compose_post_text("body") == "body"


def test_reprompt_suffix():
    p = render_prompt("hi").with_reprompt()
    assert p.text.endswith(REPROMPT_SUFFIX)
    assert p.prompt_version == "v1-base"


def test_template_override(tmp_path):
    path = tmp_path / "tpl.txt"
    path.write_text("Post: {post}\nLabels: {emotions}\n", encoding="utf-8")
    tpl = PromptTemplate.from_file(path)
    p = render_prompt("sad day", PromptVariant.BASE, template=tpl)
    assert p.text.startswith("Post: sad day")
    assert p.prompt_version.startswith("custom-") and p.prompt_version.endswith("-base")
    assert ", ".join(EMOTION_NAMES) in p.text
    scored = render_prompt("sad day", PromptVariant.SCORED, template=tpl)
    assert "severity_score" in scored.text
    with pytest.raises(ValueError):
        PromptTemplate("no placeholder")
