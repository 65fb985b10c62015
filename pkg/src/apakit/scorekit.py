"""Score data model: scales, per-granularity score records, rescaling, validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ScaleError

SENTENCE_ASPECTS = ("accuracy", "fluency", "prosody", "completeness", "total")
WORD_ASPECTS = ("accuracy", "stress", "total")
PHONE_ASPECTS = ("accuracy",)
GRANULARITIES = ("sentence", "word", "phone")
ASPECTS = {"sentence": SENTENCE_ASPECTS, "word": WORD_ASPECTS, "phone": PHONE_ASPECTS}

PHONE_RESCALE_FACTOR = 5.0


@dataclass(frozen=True)
class AspectScale:
    name: str
    min: float
    max: float
    allowed: tuple[float, ...] = ()  # non-empty -> discrete-set scale

    def __post_init__(self):
        if not self.min < self.max:
            raise ScaleError(f"scale {self.name}: min {self.min} must be < max {self.max}")
        if self.allowed and (min(self.allowed) < self.min or max(self.allowed) > self.max):
            raise ScaleError(f"scale {self.name}: allowed values outside [{self.min}, {self.max}]")

    @property
    def discrete(self) -> bool:
        return bool(self.allowed)

    def contains(self, value: float) -> bool:
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            return False
        if self.discrete:
            return value in self.allowed
        return self.min <= value <= self.max

    def describe(self) -> str:
        if self.discrete:
            return "{" + ",".join(_fmt(v) for v in self.allowed) + "}"
        return f"[{_fmt(self.min)},{_fmt(self.max)}]"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else str(v)


SCORE_SCALE = AspectScale("0-10", 0.0, 10.0)
PHONE_NATIVE_SCALE = AspectScale("0-2", 0.0, 2.0)
STRESS_SET = AspectScale("stress", 5.0, 10.0, allowed=(5.0, 10.0))
# Five-rater averages of {5,10} land anywhere in [5,10].
STRESS_AVERAGED = AspectScale("stress-avg", 5.0, 10.0)

SCALES = {s.name: s for s in (SCORE_SCALE, PHONE_NATIVE_SCALE, STRESS_SET, STRESS_AVERAGED)}


def rescale_phone(score: float) -> float:
    """Map a native phone accuracy on [0,2] linearly onto [0,10]."""
    if not PHONE_NATIVE_SCALE.contains(score):
        raise ScaleError(f"phone score {score!r} outside native scale [0,2]")
    return PHONE_RESCALE_FACTOR * score


def unscale_phone(score: float) -> float:
    """Inverse of :func:`rescale_phone`."""
    if not SCORE_SCALE.contains(score):
        raise ScaleError(f"phone score {score!r} outside rescaled scale [0,10]")
    return score / PHONE_RESCALE_FACTOR


def clamp(score: float, scale: AspectScale) -> float:
    """Project ``score`` onto ``scale``.

    Discrete scales snap to the nearest allowed value; exact midpoints go to
    the lower one.
    """
    if scale.discrete:
        best = None
        for v in sorted(scale.allowed):
            if best is None or abs(score - v) < abs(score - best):
                best = v
        return best
    return min(max(score, scale.min), scale.max) + 0.0


def round1(x: float) -> float:
    # +0.0 folds -0.0 so serialization never prints "-0.0"
    return round(x, 1) + 0.0


@dataclass
class SentenceScores:
    accuracy: Optional[float] = None
    fluency: Optional[float] = None
    prosody: Optional[float] = None
    completeness: Optional[float] = None
    total: Optional[float] = None

    def get(self, aspect: str) -> Optional[float]:
        return getattr(self, aspect)

    def present(self) -> tuple[str, ...]:
        return tuple(a for a in SENTENCE_ASPECTS if getattr(self, a) is not None)

    def to_dict(self) -> dict:
        return {a: getattr(self, a) for a in SENTENCE_ASPECTS if getattr(self, a) is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SentenceScores":
        return cls(**{a: _num(d.get(a)) for a in SENTENCE_ASPECTS})


@dataclass
class WordScore:
    word: str
    accuracy: Optional[float] = None
    stress: Optional[float] = None
    total: Optional[float] = None

    def get(self, aspect: str) -> Optional[float]:
        return getattr(self, aspect)

    def to_dict(self) -> dict:
        d = {"word": self.word}
        d.update({a: getattr(self, a) for a in WORD_ASPECTS if getattr(self, a) is not None})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WordScore":
        return cls(d["word"], *(_num(d.get(a)) for a in WORD_ASPECTS))


@dataclass
class PhoneScore:
    """One phone's accuracy. ``scale`` names the scale ``accuracy`` is on;
    ``native`` keeps the original [0,2] value when the score was rescaled."""

    phone: str
    accuracy: float
    scale: str = SCORE_SCALE.name
    native: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"phone": self.phone, "accuracy": self.accuracy, "scale": self.scale}
        if self.native is not None:
            d["native"] = self.native
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhoneScore":
        return cls(d["phone"], float(d["accuracy"]), d.get("scale", SCORE_SCALE.name), _num(d.get("native")))


def _num(v):
    return None if v is None else float(v)


@dataclass
class UtteranceAnnotation:
    utterance_id: str
    speaker_id: str
    reference_text: list[str]
    reference_phones: list[list[str]]
    sentence: SentenceScores
    words: list[WordScore]
    phones: Optional[list[list[PhoneScore]]] = None
    audio_path: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "utterance_id": self.utterance_id,
            "speaker_id": self.speaker_id,
            "reference_text": list(self.reference_text),
            "reference_phones": [list(g) for g in self.reference_phones],
            "sentence": self.sentence.to_dict(),
            "words": [w.to_dict() for w in self.words],
            "phones": None if self.phones is None else [[p.to_dict() for p in g] for g in self.phones],
        }
        if self.audio_path is not None:
            d["audio_path"] = self.audio_path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UtteranceAnnotation":
        phones = d.get("phones")
        return cls(
            utterance_id=str(d["utterance_id"]),
            speaker_id=str(d.get("speaker_id", "")),
            reference_text=list(d["reference_text"]),
            reference_phones=[list(g) for g in d.get("reference_phones") or []],
            sentence=SentenceScores.from_dict(d.get("sentence") or {}),
            words=[WordScore.from_dict(w) for w in d.get("words") or []],
            phones=None if phones is None else [[PhoneScore.from_dict(p) for p in g] for g in phones],
            audio_path=d.get("audio_path"),
        )


@dataclass
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def _check(violations: list, path: str, value, scale: AspectScale, required: bool = True):
    if value is None:
        if required:
            violations.append(Violation(path, "missing score"))
        return
    if not scale.contains(value):
        violations.append(Violation(path, f"score {value!r} outside {scale.describe()}"))


def validate_annotation(a: UtteranceAnnotation, averaged: bool = False) -> list[Violation]:
    """Return every invariant violation in ``a``; an empty list means valid.

    Per-rater gold stress must be 5 or 10. With ``averaged=True`` stress is
    checked against the continuous [5,10] range instead.
    """
    out: list[Violation] = []
    stress_scale = STRESS_AVERAGED if averaged else STRESS_SET

    for aspect in SENTENCE_ASPECTS:
        _check(out, f"sentence.{aspect}", a.sentence.get(aspect), SCORE_SCALE)

    if len(a.words) != len(a.reference_text):
        out.append(Violation("words", f"{len(a.words)} word scores for {len(a.reference_text)} reference tokens"))
    for i, w in enumerate(a.words):
        if not w.word or any(c.isspace() for c in w.word):
            out.append(Violation(f"words[{i}].word", f"invalid token {w.word!r}"))
        _check(out, f"words[{i}].accuracy", w.accuracy, SCORE_SCALE)
        _check(out, f"words[{i}].stress", w.stress, stress_scale)
        _check(out, f"words[{i}].total", w.total, SCORE_SCALE)

    if a.phones is not None:
        if len(a.phones) != len(a.words):
            out.append(Violation("phones", f"{len(a.phones)} phone groups for {len(a.words)} words"))
        for i, group in enumerate(a.phones):
            for j, p in enumerate(group):
                if not p.phone or any(c.isspace() for c in p.phone):
                    out.append(Violation(f"phones[{i}][{j}].phone", f"invalid symbol {p.phone!r}"))
                scale = SCALES.get(p.scale)
                if scale is None:
                    out.append(Violation(f"phones[{i}][{j}].scale", f"unknown scale {p.scale!r}"))
                else:
                    _check(out, f"phones[{i}][{j}].accuracy", p.accuracy, scale)
    return out
