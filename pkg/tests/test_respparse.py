import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import generators
from apakit.errors import ParseError, SerializeError
from apakit.promptgen import TaskSpec
from apakit.respparse import (
    AssessmentResponse,
    align,
    from_annotation,
    normalize_token,
    parse,
    serialize,
)
from apakit.scorekit import SentenceScores, WordScore

from conftest import make_annotation

FULL = TaskSpec.full()
EXAMPLE = ("Sentence Scores: 8 9 7 10 8\n"
           "Word Scores: good/8/10/8 morning/7/5/6\n"
           "Phone Scores: G/9 UH/8 D/7 - M/8 AO/7 R/9 N/8 IH/7 NG/9")
TASKS = generators.all_task_specs()


def test_parse_full_example():
    r = parse(EXAMPLE, FULL)
    assert r.sentence == SentenceScores(8, 9, 7, 10, 8)
    assert [w.word for w in r.words] == ["good", "morning"]
    assert r.words[1] == WordScore("morning", 7, 5, 6)
    assert [len(g) for g in r.phones] == [3, 6]
    assert r.phones[1][5].phone == "NG" and r.phones[1][5].accuracy == 9


def test_parse_sentence_total_only():
    r = parse("Sentence Scores: 8", TaskSpec.parse("sentence:total"))
    assert r.sentence.total == 8 and r.sentence.accuracy is None and r.words is None


def test_stress_above_scale_is_rejected_with_position():
    text = "Sentence Scores: 8 9 7 10 8\nWord Scores: good/8/11/8 morning/7/5/6\nPhone Scores: G/9"
    with pytest.raises(ParseError) as e:
        parse(text, FULL)
    assert e.value.line == 2
    assert text.splitlines()[1][e.value.column - 1:].startswith("11")
    assert "stress" in str(e.value)


def test_full_example_round_trips_to_canonical_form():
    canonical = serialize(parse(EXAMPLE, FULL), FULL)
    assert canonical.splitlines()[0] == "Sentence Scores: 8.0 9.0 7.0 10.0 8.0"
    assert serialize(parse(canonical, FULL), FULL) == canonical


def test_serialize_sentence_only():
    r = AssessmentResponse(sentence=SentenceScores(8.5, 9, 7, 10, 8.4))
    assert serialize(r, TaskSpec.parse("sentence")) == "Sentence Scores: 8.5 9.0 7.0 10.0 8.4"


def test_serialize_words_only_is_one_line():
    r = AssessmentResponse(words=[WordScore("hi", 8, 10, 9)])
    assert serialize(r, TaskSpec.parse("word")) == "Word Scores: hi/8.0/10.0/9.0"


def test_serialize_refuses_mismatched_task():
    r = AssessmentResponse(sentence=SentenceScores(8, 9, 7, 10, 8))
    with pytest.raises(SerializeError):
        serialize(r, FULL)


@pytest.mark.parametrize("text", [
    "Sentence Scores: 8 9 7 10",
    "Sentence Scores: 8 9 7 10 8 1",
    "Sentence Scores: 8 9 x 10 8",
    "Word Scores: a/1/2/3",
    "",
])
def test_malformed_sentence_section(text):
    with pytest.raises(ParseError):
        parse(text, TaskSpec.parse("sentence"))


@pytest.mark.parametrize("text", [
    "Phone Scores: - A/1",
    "Phone Scores: A/1 -",
    "Phone Scores: A/1 - - B/2",
    "Phone Scores: A1",
    "Phone Scores:",
])
def test_malformed_phone_section(text):
    with pytest.raises(ParseError):
        parse(text, TaskSpec.parse("phone"))


def test_strict_rejects_chatter_lenient_skips_it():
    text = "Sure, here you go:\n" + EXAMPLE + "\nHope this helps."
    with pytest.raises(ParseError) as e:
        parse(text, FULL)
    assert (e.value.line, e.value.column) == (1, 1)
    r = parse(text, FULL, strict=False)
    assert r == parse(EXAMPLE, FULL)
    assert len(r.warnings) == 2


def test_lenient_still_rejects_bad_sections():
    with pytest.raises(ParseError):
        parse("Sentence Scores: 8 9 7\n", TaskSpec.parse("sentence"), strict=False)


def test_sections_out_of_order_are_rejected():
    text = "Word Scores: a/1/1/1\nSentence Scores: 1 1 1 1 1"
    with pytest.raises(ParseError):
        parse(text, TaskSpec.parse("sentence;word"))


def test_bytes_input_accepted():
    assert parse(EXAMPLE.encode(), FULL) == parse(EXAMPLE, FULL)


@given(st.sampled_from(TASKS), st.integers(0, 2 ** 32 - 1))
def test_parse_inverts_serialize(task, seed):
    r = generators.response(random.Random(seed), task)
    assert parse(serialize(r, task), task) == r


@given(st.sampled_from(TASKS), st.integers(0, 2 ** 32 - 1))
def test_serialize_parse_is_idempotent_canonicalization(task, seed):
    r = generators.response(random.Random(seed), task)
    # write integers without decimals, as a model might
    loose = serialize(r, task).replace(".0 ", " ").replace(".0/", "/")
    once = serialize(parse(loose, task), task)
    assert serialize(parse(once, task), task) == once


def _position_inside(text, err):
    lines = text.splitlines() or [""]
    return 1 <= err.line <= len(lines) and 1 <= err.column <= len(lines[err.line - 1]) + 1


@settings(max_examples=300)
@given(st.binary(max_size=200), st.sampled_from(TASKS))
def test_parse_never_crashes_and_errors_point_inside(raw, task):
    try:
        parse(raw, task)
    except ParseError as e:
        assert _position_inside(raw.decode("utf-8", errors="replace"), e)


@settings(max_examples=300)
@given(st.text(alphabet="SentcWordPhS: 0123456789./-\n ", max_size=120), st.sampled_from(TASKS))
def test_near_miss_text_errors_point_inside(text, task):
    for strict in (True, False):
        try:
            parse(text, task, strict=strict)
        except ParseError as e:
            assert _position_inside(text, e)


def test_align_exact_echo_is_clean(annotation):
    r = from_annotation(annotation, FULL)
    rep = align(r, annotation)
    assert rep.ok and rep.summary() == "ok"
    assert rep.words_matched == 2 and rep.phones_matched == 9


def test_align_flags_extra_word(annotation):
    r = from_annotation(annotation, FULL)
    r.words.append(WordScore("extra", 5, 5, 5))
    rep = align(r, annotation)
    assert not rep.ok and rep.count_errors


def test_align_is_case_insensitive():
    a = make_annotation(words=("good", "Morning"))
    r = parse(EXAMPLE, FULL)
    assert align(r, a).ok


def test_align_reports_wrong_word_position(annotation):
    r = from_annotation(annotation, FULL)
    r.words[1].word = "evening"
    rep = align(r, annotation)
    assert [(m.position, m.expected, m.got) for m in rep.word_mismatches] == [(1, "morning", "evening")]


def test_normalize_token_strips_punctuation():
    assert normalize_token("Morning!") == normalize_token("morning") == "morning"
    assert normalize_token("don't") == "dont"


def test_from_annotation_rounds_to_one_decimal():
    a = make_annotation(sentence=(8.26, 9.0, 7.0, 10.0, 8.0))
    assert from_annotation(a, TaskSpec.parse("sentence:accuracy")).sentence.accuracy == 8.3


def test_response_dict_round_trip():
    r = parse(EXAMPLE, FULL)
    assert AssessmentResponse.from_dict(r.to_dict()) == r
