"""Prompt rendering for any combination of granularities and aspects.

The comprehensive prompt is stored as a fragment table in
``templates/assessment_prompt_v1.txt``. Reduced prompts are assembled from the
same fragments: a rubric sentence or output-format line survives only if the
aspects it talks about intersect the TaskSpec, and enumerations (levels,
aspects) list only what was requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .errors import PromptError, TaskSpecError
from .scorekit import ASPECTS, GRANULARITIES

TEMPLATE_VERSION = "v1"
TEMPLATE_FILE = f"assessment_prompt_{TEMPLATE_VERSION}.txt"
TEXT_PLACEHOLDER = "{REFERENCE TEXT}"
PHONE_PLACEHOLDER = "{REFERENCE PHONE SEQUENCE}"
BOUNDARY = "-"


@dataclass(frozen=True)
class TaskSpec:
    """Granularities (in sentence -> word -> phone order) and the aspects scored at each."""

    granularities: tuple[str, ...]
    aspects: dict

    def __post_init__(self):
        if not self.granularities:
            raise TaskSpecError("TaskSpec needs at least one granularity")
        order = [g for g in GRANULARITIES if g in self.granularities]
        if list(self.granularities) != order or len(set(self.granularities)) != len(self.granularities):
            raise TaskSpecError(f"granularities must be unique and ordered sentence,word,phone: {self.granularities}")
        if set(self.aspects) != set(self.granularities):
            raise TaskSpecError("aspects must be given for exactly the requested granularities")
        for g in self.granularities:
            asp = tuple(self.aspects[g])
            if not asp:
                raise TaskSpecError(f"no aspects for {g}")
            bad = [a for a in asp if a not in ASPECTS[g]]
            if bad:
                raise TaskSpecError(f"illegal {g} aspect(s): {', '.join(bad)}")
            if list(asp) != [a for a in ASPECTS[g] if a in asp] or len(set(asp)) != len(asp):
                raise TaskSpecError(f"{g} aspects must be unique and in canonical order {ASPECTS[g]}")

    @classmethod
    def build(cls, spec: dict) -> "TaskSpec":
        """Build from an unordered ``{granularity: aspects}`` mapping."""
        grans = tuple(g for g in GRANULARITIES if g in spec)
        unknown = set(spec) - set(GRANULARITIES)
        if unknown:
            raise TaskSpecError(f"unknown granularity: {', '.join(sorted(unknown))}")
        aspects = {}
        for g in grans:
            requested = list(spec[g]) if spec[g] else list(ASPECTS[g])
            bad = [a for a in requested if a not in ASPECTS[g]]
            if bad:
                raise TaskSpecError(f"illegal {g} aspect(s): {', '.join(bad)}")
            aspects[g] = tuple(a for a in ASPECTS[g] if a in requested)
        return cls(grans, aspects)

    @classmethod
    def full(cls) -> "TaskSpec":
        return cls(GRANULARITIES, dict(ASPECTS))

    @classmethod
    def parse(cls, text: str) -> "TaskSpec":
        """Parse ``full`` or ``sentence:accuracy,fluency;word:total`` style strings.

        A bare granularity (``word``) selects all of its aspects.
        """
        text = text.strip()
        if text == "full":
            return cls.full()
        spec: dict = {}
        for part in filter(None, (p.strip() for p in text.split(";"))):
            gran, _, rest = part.partition(":")
            gran = gran.strip()
            if gran in spec:
                raise TaskSpecError(f"granularity {gran!r} given twice")
            spec[gran] = [a.strip() for a in rest.split(",") if a.strip()]
        if not spec:
            raise TaskSpecError(f"empty task {text!r}")
        return cls.build(spec)

    def __str__(self) -> str:
        if self == TaskSpec.full():
            return "full"
        return ";".join(f"{g}:{','.join(self.aspects[g])}" for g in self.granularities)

    def __hash__(self):
        return hash((self.granularities, tuple(tuple(self.aspects[g]) for g in self.granularities)))

    def __eq__(self, other):
        if not isinstance(other, TaskSpec):
            return NotImplemented
        return self.granularities == other.granularities and all(
            tuple(self.aspects[g]) == tuple(other.aspects[g]) for g in self.granularities)

    def has(self, granularity: str, aspect: Optional[str] = None) -> bool:
        if granularity not in self.granularities:
            return False
        return aspect is None or aspect in self.aspects[granularity]

    def targets(self) -> list[tuple[str, str]]:
        return [(g, a) for g in self.granularities for a in self.aspects[g]]


@dataclass(frozen=True)
class RenderedPrompt:
    instruction: str
    reference_text: str
    reference_phone: Optional[str]
    format_lines: tuple[str, ...]

    @property
    def text(self) -> str:
        out = self.instruction.replace(TEXT_PLACEHOLDER, self.reference_text)
        if self.reference_phone is not None:
            out = out.replace(PHONE_PLACEHOLDER, self.reference_phone)
        return out

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "reference_text": self.reference_text,
            "reference_phone": self.reference_phone,
            "format_lines": list(self.format_lines),
            "template_version": TEMPLATE_VERSION,
        }


@lru_cache(maxsize=None)
def load_template(name: str = TEMPLATE_FILE) -> dict[str, str]:
    raw = resources.files("apakit").joinpath("templates", name).read_text(encoding="utf-8")
    frags = {}
    for line in raw.splitlines():
        if not line or line.startswith("#"):
            continue
        key, sep, text = line.partition("|")
        if not sep:
            raise PromptError(f"malformed template line: {line!r}")
        frags[key] = text
    return frags


def _enumerate(items: Sequence[str], oxford: bool = True) -> str:
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    sep = ", and " if oxford else " and "
    return ", ".join(items[:-1]) + sep + items[-1]


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def _levels(task: TaskSpec, oxford: bool) -> str:
    noun = "levels" if len(task.granularities) > 1 else "level"
    return f"{_enumerate(list(task.granularities), oxford)} {noun}"


def build_instruction(task: TaskSpec) -> tuple[str, tuple[str, ...]]:
    """Return the instruction template (placeholders intact) and its format lines."""
    f = load_template()
    rubric = [f["intro"].replace("<<levels>>", _levels(task, oxford=False))]

    if task.has("sentence"):
        asp = task.aspects["sentence"]
        rubric.append(f["sentence.header"].replace(
            "<<sentence.aspects>>", _enumerate([f[f"sentence.aspect.{a}"] for a in asp])))
        clauses = [f[f"sentence.rubric.{a}"] for a in asp if a != "total"]
        if clauses:
            joined = "; ".join(clauses[:-1] + ([("and " if len(clauses) > 1 else "") + clauses[-1]]))
            rubric.append(_cap(joined) + ".")
        if "total" in asp:
            rubric.append(f["sentence.rubric.total"])

    if task.has("word"):
        asp = task.aspects["word"]
        rubric.append(f["word.header"].replace(
            "<<word.aspects>>", _enumerate([f[f"word.aspect.{a}"] for a in asp])))
        clauses = [f[f"word.rubric.{a}"] for a in asp if a != "total"]
        if clauses:
            rubric.append(_cap(", while ".join(clauses)) + ".")

    if task.has("phone"):
        rubric.append(f["phone.header"])

    rng = f["range"]
    if task.has("word", "stress"):
        rng += f["range.stress"]
    rubric.append(rng + ".")

    refs = "reference text and phone sequence" if task.has("phone") else "reference text"
    lines = [
        " ".join(rubric),
        f["request"].replace("<<levels.oxford>>", _levels(task, oxford=True)).replace("<<references>>", refs),
        f["reference.text"],
    ]
    if task.has("phone"):
        lines.append(f["reference.phones"])
        lines.append(f"{f['boundary']} {f['format']}")
    else:
        lines.append(f["format"])

    fmt = []
    if task.has("sentence"):
        fmt.append(" ".join([f["format.sentence"]] + [f[f"format.sentence.{a}"] for a in task.aspects["sentence"]]))
    if task.has("word"):
        fields = [f[f"format.word.{a}"] for a in task.aspects["word"]]
        fmt.append(f"{f['format.word']} " + " ".join("/".join([f"{{W{i}}}"] + fields) for i in (1, 2)) + " ...")
    if task.has("phone"):
        fmt.append(f["format.phone"])
    return "\n".join(lines + fmt), tuple(fmt)


def phone_sequence_string(groups: Sequence[Sequence[str]]) -> str:
    """Space-join phones within a word and join words with `` - ``."""
    if not groups:
        raise PromptError("phone sequence has no word groups")
    for i, g in enumerate(groups):
        if not g:
            raise PromptError(f"phone group {i} is empty")
        for p in g:
            if not p or any(c.isspace() for c in p) or p == BOUNDARY:
                raise PromptError(f"invalid phone symbol {p!r} in group {i}")
    return f" {BOUNDARY} ".join(" ".join(g) for g in groups)


def split_phone_sequence(text: str) -> list[list[str]]:
    groups: list[list[str]] = [[]]
    for tok in text.split():
        if tok == BOUNDARY:
            groups.append([])
        else:
            groups[-1].append(tok)
    return groups


def render(annotation, task: TaskSpec) -> RenderedPrompt:
    """Render the prompt for one utterance.

    ``annotation`` only needs ``reference_text`` (token list) and
    ``reference_phones`` (per-word phone lists).
    """
    instruction, fmt = build_instruction(task)
    tokens = list(annotation.reference_text)
    phones = None
    if task.has("phone"):
        groups = getattr(annotation, "reference_phones", None)
        if not groups:
            raise PromptError("phone-level task requested but the utterance has no reference phones")
        if len(groups) != len(tokens):
            raise PromptError(f"{len(groups)} phone groups for {len(tokens)} reference tokens")
        phones = phone_sequence_string(groups)
    return RenderedPrompt(instruction, " ".join(tokens), phones, fmt)
