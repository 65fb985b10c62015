"""Simulated preference pairs for SimPO training.

A pair keeps the gold response as the chosen side and shifts one target
aspect by 2-4 points for the rejected side. Totals and coarser levels are
then moved to stay consistent with the shifted score (see :func:`propagate`).
"""

from __future__ import annotations

import copy
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .errors import DegeneratePerturbation, PerturbationError
from .promptgen import RenderedPrompt, TaskSpec, render
from .respparse import AssessmentResponse, from_annotation, serialize
from .scorekit import ASPECTS, SCORE_SCALE, STRESS_SET, AspectScale, clamp, round1

log = logging.getLogger(__name__)

# aspects whose change moves the same-level total, and the share each carries
TOTAL_FEEDERS = {"sentence": ("accuracy", "fluency", "prosody"), "word": ("accuracy", "stress")}
DIRECTIONS = ("random", "up", "down")
POSITIVE_MODES = ("gold", "updown")


@dataclass(frozen=True)
class PerturbConfig:
    target: tuple[str, str] = ("sentence", "accuracy")
    delta_min: float = 2.0
    delta_max: float = 4.0
    direction: str = "random"
    seed: int = 0
    scope: str = "one"  # "one" item or "all" items at word/phone level
    positive_mode: str = "gold"

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_max:
            raise PerturbationError(f"need 0 < delta_min <= delta_max, got {self.delta_min}, {self.delta_max}")
        gran, aspect = self.target
        if gran not in ASPECTS or aspect not in ASPECTS[gran]:
            raise PerturbationError(f"illegal target {gran}/{aspect}")
        if self.direction not in DIRECTIONS:
            raise PerturbationError(f"direction must be one of {DIRECTIONS}")
        if self.scope not in ("one", "all"):
            raise PerturbationError("scope must be 'one' or 'all'")
        if self.positive_mode not in POSITIVE_MODES:
            raise PerturbationError(f"positive_mode must be one of {POSITIVE_MODES}")

    def check_task(self, task: TaskSpec):
        if not task.has(*self.target):
            raise PerturbationError(f"target {'/'.join(self.target)} not part of task {task}")


def scale_for(granularity: str, aspect: str) -> AspectScale:
    return STRESS_SET if (granularity, aspect) == ("word", "stress") else SCORE_SCALE


@dataclass
class PreferencePair:
    utterance_id: str
    prompt: Optional[RenderedPrompt]
    positive: AssessmentResponse
    negative: AssessmentResponse
    perturbation: dict

    def to_record(self, task: TaskSpec) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "prompt": None if self.prompt is None else self.prompt.text,
            "chosen": serialize(self.positive, task),
            "rejected": serialize(self.negative, task),
            "perturbation": self.perturbation,
        }


# --------------------------------------------------------------------------
# field access by path


def _get(r: AssessmentResponse, path: tuple):
    kind = path[0]
    if kind == "sentence":
        return r.sentence.get(path[1])
    if kind == "words":
        return r.words[path[1]].get(path[2])
    return r.phones[path[1]][path[2]].accuracy


def _set(r: AssessmentResponse, path: tuple, value: float):
    kind = path[0]
    if kind == "sentence":
        setattr(r.sentence, path[1], value)
    elif kind == "words":
        setattr(r.words[path[1]], path[2], value)
    else:
        r.phones[path[1]][path[2]].accuracy = value


def path_str(path: tuple) -> str:
    if path[0] == "sentence":
        return f"sentence.{path[1]}"
    if path[0] == "words":
        return f"words[{path[1]}].{path[2]}"
    return f"phones[{path[1]}][{path[2]}].accuracy"


def _shift(r: AssessmentResponse, path: tuple, delta: float, scale: AspectScale = SCORE_SCALE) -> float:
    """Shift one field by ``delta`` (rounded, clamped); return the change actually applied."""
    old = _get(r, path)
    new = clamp(round1(old + delta), scale)
    _set(r, path, new)
    return round1(new - old)


def _present(r: AssessmentResponse, path: tuple) -> bool:
    if path[0] == "sentence":
        return r.sentence is not None and r.sentence.get(path[1]) is not None
    if path[0] == "words":
        return r.words is not None and r.words[path[1]].get(path[2]) is not None
    return r.phones is not None


# --------------------------------------------------------------------------


def target_paths(gold: AssessmentResponse, target: tuple[str, str]) -> list[tuple]:
    gran, aspect = target
    if gran == "sentence":
        paths = [("sentence", aspect)]
    elif gran == "word":
        paths = [("words", i, aspect) for i in range(len(gold.words or []))]
    else:
        paths = [("phones", i, j) for i, g in enumerate(gold.phones or []) for j in range(len(g))]
    paths = [p for p in paths if _present(gold, p)]
    if not paths:
        raise PerturbationError(f"gold response has no {gran}/{aspect} score")
    return paths


def propagate(draft: AssessmentResponse, descriptor: dict) -> AssessmentResponse:
    """Carry the target shift into dependent scores, in place; returns ``draft``.

    * phone accuracy: each touched word's accuracy moves by the mean phone
      change over that word, and sentence accuracy by the mean word change
      over all words;
    * sentence accuracy/fluency/prosody move the sentence total by a third of
      their change, word accuracy/stress move the word total by half.

    Every changed field and its applied change is appended to
    ``descriptor["propagated"]``.
    """
    gran, aspect = descriptor["target"].split(".")
    changes = descriptor["changes"]
    propagated = descriptor.setdefault("propagated", {})

    def bump(path, delta):
        if not _present(draft, path) or delta == 0:
            return 0.0
        applied = _shift(draft, path, delta)
        if applied:
            key = path_str(path)
            propagated[key] = round1(propagated.get(key, 0.0) + applied)
        return applied

    def bump_total(level_path_prefix, feeder_change, n_feeders):
        return bump(level_path_prefix + ("total",), feeder_change / n_feeders)

    if gran == "phone":
        per_word: dict[int, float] = {}
        for key, d in changes.items():
            wi = int(key.split("]")[0][len("phones["):])
            per_word[wi] = per_word.get(wi, 0.0) + d
        n_words = len(draft.phones)
        word_changes = []
        for wi in range(n_words):
            d_w = per_word.get(wi, 0.0) / len(draft.phones[wi])
            if draft.words is not None and draft.words[wi].accuracy is not None:
                applied = bump(("words", wi, "accuracy"), d_w)
                bump_total(("words", wi), applied, len(TOTAL_FEEDERS["word"]))
                word_changes.append(applied)
            else:
                word_changes.append(d_w)
        sent_change = bump(("sentence", "accuracy"), sum(word_changes) / n_words)
        bump_total(("sentence",), sent_change, len(TOTAL_FEEDERS["sentence"]))
    elif gran == "word" and aspect in TOTAL_FEEDERS["word"]:
        for key, d in changes.items():
            wi = int(key.split("]")[0][len("words["):])
            bump_total(("words", wi), d, len(TOTAL_FEEDERS["word"]))
    elif gran == "sentence" and aspect in TOTAL_FEEDERS["sentence"]:
        bump_total(("sentence",), changes[f"sentence.{aspect}"], len(TOTAL_FEEDERS["sentence"]))
    return draft


def _apply(gold: AssessmentResponse, paths: Sequence[tuple], target, delta: float) -> tuple[AssessmentResponse, dict]:
    draft = copy.deepcopy(gold)
    draft.warnings = []
    scale = scale_for(*target)
    changes = {}
    for p in paths:
        applied = _shift(draft, p, delta, scale)
        if applied:
            changes[path_str(p)] = applied
    desc = {"target": ".".join(target), "delta": delta, "changes": changes, "propagated": {}}
    if changes:
        propagate(draft, desc)
    return draft, desc


def _draw(rng: random.Random, c: PerturbConfig) -> float:
    return round1(rng.uniform(c.delta_min, c.delta_max))


def perturb(gold: AssessmentResponse, c: PerturbConfig, rng: random.Random,
            utterance_id: str = "", prompt: Optional[RenderedPrompt] = None) -> PreferencePair:
    """Build one preference pair from a gold response.

    The magnitude is uniform on [delta_min, delta_max] at one decimal. If the
    drawn direction clamps back onto gold, the opposite direction is tried
    (random direction policy only); if that also changes nothing,
    DegeneratePerturbation is raised.
    """
    paths = target_paths(gold, c.target)
    if c.scope == "one":
        paths = [paths[rng.randrange(len(paths))]]
    magnitude = _draw(rng, c)

    if c.positive_mode == "updown":
        up, up_desc = _apply(gold, paths, c.target, magnitude)
        down_mag = _draw(rng, c)
        down, down_desc = _apply(gold, paths, c.target, -down_mag)
        if up == down:
            raise DegeneratePerturbation(f"{utterance_id}: up and down shifts coincide")
        return PreferencePair(utterance_id, prompt, up, down,
                              {"mode": "updown", "paths": [path_str(p) for p in paths],
                               "positive": up_desc, "negative": down_desc})

    if c.direction == "random":
        signs = [rng.choice((1, -1))]
        signs.append(-signs[0])
    else:
        signs = [1 if c.direction == "up" else -1]
    for sign in signs:
        negative, desc = _apply(gold, paths, c.target, sign * magnitude)
        if desc["changes"]:
            desc["mode"] = "gold"
            desc["resampled"] = sign != signs[0]
            return PreferencePair(utterance_id, prompt, copy.deepcopy(gold), negative, desc)
    raise DegeneratePerturbation(f"{utterance_id}: {'/'.join(c.target)} shift clamps back to gold")


@dataclass
class GenerationStats:
    utterances: int = 0
    pairs: int = 0
    skipped_missing_target: int = 0
    skipped_degenerate: int = 0
    skipped_ids: list[str] = field(default_factory=list)


def utterance_rng(seed: int, utterance_id: str) -> random.Random:
    # str seeds hash through sha512, so this is stable across processes
    return random.Random(f"{seed}:{utterance_id}")


def generate_dataset(utterances, task: TaskSpec, c: PerturbConfig, n_per_utterance: int = 1,
                     stats: Optional[GenerationStats] = None) -> Iterator[PreferencePair]:
    """Yield up to ``n_per_utterance`` pairs per utterance, in utterance-id order.

    Each utterance draws from its own RNG seeded by (seed, utterance id), so
    the output does not depend on iteration order or parallelism.
    """
    c.check_task(task)
    stats = stats if stats is not None else GenerationStats()
    gran = c.target[0]
    for ann in sorted(utterances, key=lambda u: u.utterance_id):
        stats.utterances += 1
        if (task.has("phone") or gran == "phone") and ann.phones is None:
            stats.skipped_missing_target += 1
            stats.skipped_ids.append(ann.utterance_id)
            continue
        gold = from_annotation(ann, task)
        prompt = render(ann, task)
        rng = utterance_rng(c.seed, ann.utterance_id)
        for _ in range(n_per_utterance):
            try:
                pair = perturb(gold, c, rng, ann.utterance_id, prompt)
            except DegeneratePerturbation as e:
                stats.skipped_degenerate += 1
                log.debug("skipped: %s", e)
                continue
            stats.pairs += 1
            yield pair


def dumps_pairs(pairs, task: TaskSpec) -> str:
    return "".join(json.dumps(p.to_record(task), sort_keys=True) + "\n" for p in pairs)
