"""Parse, serialize and align the structured score output.

Grammar (one section per line, sections in sentence -> word -> phone order,
only the sections the TaskSpec asks for)::

    Sentence Scores: <n> ... (one number per requested sentence aspect)
    Word Scores: word/<n>[/<n>[/<n>]] ...   (accuracy/stress/total order)
    Phone Scores: ph/<n> ph/<n> - ph/<n> ...   ('-' separates words)
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import ParseError, SerializeError
from .promptgen import BOUNDARY, TaskSpec
from .scorekit import (
    SCORE_SCALE,
    SENTENCE_ASPECTS,
    WORD_ASPECTS,
    PhoneScore,
    SentenceScores,
    WordScore,
    round1,
)

HEADERS = {"sentence": "Sentence Scores:", "word": "Word Scores:", "phone": "Phone Scores:"}
_NUMBER = re.compile(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)")
_TOKEN = re.compile(r"\S+")


@dataclass
class AssessmentResponse:
    sentence: Optional[SentenceScores] = None
    words: Optional[list[WordScore]] = None
    phones: Optional[list[list[PhoneScore]]] = None
    warnings: list[str] = field(default_factory=list, compare=False)

    def sections(self) -> tuple[str, ...]:
        return tuple(g for g, v in (("sentence", self.sentence), ("word", self.words), ("phone", self.phones))
                     if v is not None)

    def to_dict(self) -> dict:
        return {
            "sentence": None if self.sentence is None else self.sentence.to_dict(),
            "words": None if self.words is None else [w.to_dict() for w in self.words],
            "phones": None if self.phones is None else [[{"phone": p.phone, "accuracy": p.accuracy} for p in g]
                                                          for g in self.phones],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssessmentResponse":
        return cls(
            sentence=None if d.get("sentence") is None else SentenceScores.from_dict(d["sentence"]),
            words=None if d.get("words") is None else [WordScore.from_dict(w) for w in d["words"]],
            phones=None if d.get("phones") is None else [[PhoneScore(p["phone"], float(p["accuracy"])) for p in g]
                                                          for g in d["phones"]],
        )


def from_annotation(annotation, task: TaskSpec) -> AssessmentResponse:
    """Gold response for ``annotation`` restricted to ``task``, scores at one decimal."""
    resp = AssessmentResponse()
    if task.has("sentence"):
        resp.sentence = SentenceScores(**{a: round1(annotation.sentence.get(a)) for a in task.aspects["sentence"]})
    if task.has("word"):
        resp.words = [WordScore(w.word, **{a: round1(w.get(a)) for a in task.aspects["word"]})
                      for w in annotation.words]
    if task.has("phone"):
        if annotation.phones is None:
            raise SerializeError(f"utterance {annotation.utterance_id} has no phone scores")
        resp.phones = [[PhoneScore(p.phone, round1(p.accuracy)) for p in g] for g in annotation.phones]
    return resp


# --------------------------------------------------------------------------
# parsing


def _number(tok: str, line: int, col: int, what: str) -> float:
    if not _NUMBER.fullmatch(tok):
        raise ParseError(f"non-numeric {what} score {tok!r}", line, col, tok)
    value = float(tok)
    if not SCORE_SCALE.contains(value):
        raise ParseError(f"{what} score {tok} outside {SCORE_SCALE.describe()}", line, col, tok)
    return value


def _fields(text: str, offset: int) -> list[tuple[int, str]]:
    return [(offset + m.start() + 1, m.group()) for m in _TOKEN.finditer(text)]


def _parse_sentence(body, aspects, ln, end_col) -> SentenceScores:
    if len(body) != len(aspects):
        col, frag = (body[len(aspects)] if len(body) > len(aspects) else (end_col, ""))
        raise ParseError(f"expected {len(aspects)} sentence score(s), got {len(body)}", ln, col, frag)
    return SentenceScores(**{a: _number(tok, ln, col, f"sentence {a}") for a, (col, tok) in zip(aspects, body)})


def _parse_words(body, aspects, ln, end_col) -> list[WordScore]:
    if not body:
        raise ParseError("no word scores", ln, end_col)
    words = []
    for col, tok in body:
        parts = tok.split("/")
        if len(parts) != len(aspects) + 1:
            raise ParseError(f"word field needs {len(aspects)} score(s)", ln, col, tok)
        if not parts[0]:
            raise ParseError("empty word token", ln, col, tok)
        scores = {}
        pos = col + len(parts[0]) + 1
        for a, p in zip(aspects, parts[1:]):
            scores[a] = _number(p, ln, pos, f"word {a}")
            pos += len(p) + 1
        words.append(WordScore(parts[0], **scores))
    return words


def _parse_phones(body, ln, end_col) -> list[list[PhoneScore]]:
    if not body:
        raise ParseError("no phone scores", ln, end_col)
    groups: list[list[PhoneScore]] = [[]]
    for col, tok in body:
        if tok == BOUNDARY:
            if not groups[-1]:
                raise ParseError("empty phone group before word boundary", ln, col, tok)
            groups.append([])
            continue
        parts = tok.split("/")
        if len(parts) != 2 or not parts[0]:
            raise ParseError("phone field must be phone/score", ln, col, tok)
        groups[-1].append(PhoneScore(parts[0], _number(parts[1], ln, col + len(parts[0]) + 1, "phone accuracy")))
    if not groups[-1]:
        col, tok = body[-1]
        raise ParseError("trailing word boundary", ln, col, tok)
    return groups


def _header_of(text: str) -> Optional[str]:
    for gran, head in HEADERS.items():
        if text.startswith(head):
            return gran
    return None


def parse(raw: Union[str, bytes], task: TaskSpec, strict: bool = True) -> AssessmentResponse:
    """Parse model output against ``task``.

    Strict mode rejects any text outside the requested sections. Lenient mode
    skips stray lines before and after the sections and records a warning for
    each; malformed sections are errors in both modes.
    """
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    lines = raw.splitlines()
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    resp = AssessmentResponse()
    pos = 0

    for gran in task.granularities:
        head = HEADERS[gran]
        while True:
            if pos >= len(numbered):
                last = len(lines) or 1
                raise ParseError(f"missing section {head!r}", last, (len(lines[-1]) + 1) if lines else 1)
            ln, text = numbered[pos]
            lead = len(text) - len(text.lstrip())
            stripped = text.strip()
            found = _header_of(stripped)
            if found == gran:
                break
            if found is not None:
                raise ParseError(f"unexpected section {HEADERS[found]!r}, expected {head!r}", ln, lead + 1,
                                 stripped[:40])
            if strict:
                raise ParseError(f"expected {head!r}", ln, lead + 1, stripped[:40])
            resp.warnings.append(f"line {ln}: skipped text before {head!r}")
            pos += 1
        pos += 1
        body_text = stripped[len(head):]
        body = _fields(body_text, lead + len(head))
        end_col = lead + len(stripped) + 1
        if gran == "sentence":
            resp.sentence = _parse_sentence(body, task.aspects["sentence"], ln, end_col)
        elif gran == "word":
            resp.words = _parse_words(body, task.aspects["word"], ln, end_col)
        else:
            resp.phones = _parse_phones(body, ln, end_col)

    for ln, text in numbered[pos:]:
        stripped = text.strip()
        lead = len(text) - len(text.lstrip())
        found = _header_of(stripped)
        if strict or found is not None:
            what = f"unexpected section {HEADERS[found]!r}" if found else "trailing text after last section"
            raise ParseError(what, ln, lead + 1, stripped[:40])
        resp.warnings.append(f"line {ln}: ignored trailing text")
    return resp


# --------------------------------------------------------------------------
# serialization


def _f(x: float) -> str:
    return f"{x + 0.0:.1f}"


def serialize(r: AssessmentResponse, task: TaskSpec) -> str:
    """Canonical text: requested sections only, one-decimal scores."""
    if r.sections() != task.granularities:
        raise SerializeError(f"response sections {r.sections()} do not match task {task}")
    out = []
    if r.sentence is not None:
        asp = task.aspects["sentence"]
        if r.sentence.present() != asp:
            raise SerializeError(f"sentence aspects {r.sentence.present()} do not match task {asp}")
        out.append(" ".join([HEADERS["sentence"]] + [_f(r.sentence.get(a)) for a in asp]))
    if r.words is not None:
        asp = task.aspects["word"]
        fields = []
        for w in r.words:
            present = tuple(a for a in WORD_ASPECTS if w.get(a) is not None)
            if present != asp:
                raise SerializeError(f"word {w.word!r} aspects {present} do not match task {asp}")
            fields.append("/".join([w.word] + [_f(w.get(a)) for a in asp]))
        out.append(" ".join([HEADERS["word"]] + fields))
    if r.phones is not None:
        groups = [" ".join(f"{p.phone}/{_f(p.accuracy)}" for p in g) for g in r.phones]
        out.append(f"{HEADERS['phone']} " + f" {BOUNDARY} ".join(groups))
    return "\n".join(out)


# --------------------------------------------------------------------------
# alignment against the reference


def normalize_token(tok: str) -> str:
    return "".join(c for c in tok.casefold() if not unicodedata.category(c).startswith("P"))


@dataclass
class Mismatch:
    position: int
    expected: Optional[str]
    got: Optional[str]


@dataclass
class AlignmentReport:
    word_mismatches: list[Mismatch] = field(default_factory=list)
    phone_mismatches: list[Mismatch] = field(default_factory=list)
    count_errors: list[str] = field(default_factory=list)
    words_matched: int = 0
    phones_matched: int = 0

    @property
    def ok(self) -> bool:
        return not (self.word_mismatches or self.phone_mismatches or self.count_errors)

    def summary(self) -> str:
        parts = list(self.count_errors)
        if self.word_mismatches:
            parts.append(f"{len(self.word_mismatches)} word mismatch(es)")
        if self.phone_mismatches:
            parts.append(f"{len(self.phone_mismatches)} phone mismatch(es)")
        return "; ".join(parts) or "ok"


def align(r: AssessmentResponse, annotation) -> AlignmentReport:
    """Position-wise comparison of emitted words/phones with the reference.

    Word tokens compare case-insensitively with punctuation removed; phone
    symbols compare case-insensitively. Mismatch positions are indices into
    the word list and into the flattened phone list.
    """
    rep = AlignmentReport()
    if r.words is not None:
        ref = list(annotation.reference_text)
        if len(r.words) != len(ref):
            rep.count_errors.append(f"{len(r.words)} words emitted for {len(ref)} reference tokens")
        for i, (w, t) in enumerate(zip(r.words, ref)):
            if normalize_token(w.word) == normalize_token(t):
                rep.words_matched += 1
            else:
                rep.word_mismatches.append(Mismatch(i, t, w.word))
    if r.phones is not None:
        ref_groups = list(annotation.reference_phones or [])
        if len(r.phones) != len(ref_groups):
            rep.count_errors.append(f"{len(r.phones)} phone groups emitted for {len(ref_groups)} reference words")
        flat = 0
        for gi, (g, rg) in enumerate(zip(r.phones, ref_groups)):
            if len(g) != len(rg):
                rep.count_errors.append(f"word {gi}: {len(g)} phones emitted for {len(rg)} reference phones")
            for p, rp in zip(g, rg):
                if p.phone.casefold() == rp.casefold():
                    rep.phones_matched += 1
                else:
                    rep.phone_mismatches.append(Mismatch(flat, rp, p.phone))
                flat += 1
            flat += max(0, len(rg) - len(g))
    return rep
