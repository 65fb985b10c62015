"""Corpus ingestion, multi-rater averaging, inter-rater QC and score distributions.

Two on-disk layouts are understood:

* Speechocean762: ``resource/scores.json`` (or ``scores.json``) holding every
  utterance, plus ``train/`` and ``test/`` directories whose ``wav.scp``,
  ``text`` or ``spk2utt`` files list the utterance ids of each split.
* Flat: ``<split>.json`` or ``<split>.jsonl`` score files directly under the
  root, one per split.

Field names follow the public Speechocean762 score file. A
:class:`SchemaDescriptor` renames them for private corpora.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from statistics import fmean
from typing import Iterable, Iterator, Optional, Sequence

from .errors import AlignmentError, IngestionError, InsufficientDataError
from .metrics import pcc, scc
from .scorekit import (
    PHONE_NATIVE_SCALE,
    SENTENCE_ASPECTS,
    WORD_ASPECTS,
    PhoneScore,
    SentenceScores,
    UtteranceAnnotation,
    Violation,
    WordScore,
    rescale_phone,
    validate_annotation,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
_ID_LISTS = ("wav.scp", "text", "spk2utt", "utt2spk")


@dataclass(frozen=True)
class SchemaDescriptor:
    """Source field names for each canonical field."""

    text: str = "text"
    accuracy: str = "accuracy"
    fluency: str = "fluency"
    prosody: str = "prosodic"
    completeness: str = "completeness"
    total: str = "total"
    words: str = "words"
    word_text: str = "text"
    word_accuracy: str = "accuracy"
    word_stress: str = "stress"
    word_total: str = "total"
    phones: str = "phones"
    phone_accuracy: str = "phones-accuracy"
    speaker: str = "speaker"
    utterance_id: str = "utterance_id"
    audio: str = "wav"
    has_phones: bool = True

    @classmethod
    def from_mapping(cls, overrides: dict) -> "SchemaDescriptor":
        known = {f.name for f in fields(cls)}
        bad = set(overrides) - known
        if bad:
            raise IngestionError(f"unknown schema field(s): {', '.join(sorted(bad))}")
        return replace(cls(), **overrides)

    def sentence_field(self, aspect: str) -> str:
        return getattr(self, aspect)

    def word_field(self, aspect: str) -> str:
        return getattr(self, f"word_{aspect}")


SO762 = SchemaDescriptor()


@dataclass
class CorpusSplit:
    name: str
    utterances: list[UtteranceAnnotation]
    quarantine: list[tuple[str, list[str]]] = field(default_factory=list)

    def __post_init__(self):
        ids = [u.utterance_id for u in self.utterances]
        if len(ids) != len(set(ids)):
            raise IngestionError(f"split {self.name}: duplicate utterance ids")

    @property
    def speakers(self) -> dict[str, list[str]]:
        idx: dict[str, list[str]] = {}
        for u in self.utterances:
            idx.setdefault(u.speaker_id, []).append(u.utterance_id)
        return idx

    def __len__(self):
        return len(self.utterances)

    def by_id(self) -> dict[str, UtteranceAnnotation]:
        return {u.utterance_id: u for u in self.utterances}


# --------------------------------------------------------------------------
# record conversion


def _require(rec: dict, key: str, uid: str, where: str = ""):
    if key not in rec:
        raise IngestionError(f"utterance {uid}: missing field {where}{key!r}")
    return rec[key]


def _score(value, uid: str, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise IngestionError(f"utterance {uid}: field {name!r} is not a number: {value!r}") from None


def _phone_list(value) -> list[str]:
    return value.split() if isinstance(value, str) else [str(p) for p in value]


def record_to_annotation(uid: str, rec: dict, schema: SchemaDescriptor = SO762,
                         speaker: Optional[str] = None, audio: Optional[str] = None,
                         rescale: bool = True) -> UtteranceAnnotation:
    """Convert one source record (single rater) into an annotation.

    Raises IngestionError for schema problems (missing or non-numeric
    fields). Phone accuracies are rescaled onto [0,10] unless ``rescale`` is
    false; the original value is kept in ``PhoneScore.native``.
    """
    sent = SentenceScores(**{
        a: _score(_require(rec, schema.sentence_field(a), uid), uid, schema.sentence_field(a))
        for a in SENTENCE_ASPECTS
    })
    words, tokens, ref_phones, phone_groups = [], [], [], []
    for i, w in enumerate(_require(rec, schema.words, uid)):
        where = f"{schema.words}[{i}]."
        token = str(_require(w, schema.word_text, uid, where))
        scores = {a: _score(_require(w, schema.word_field(a), uid, where), uid, where + schema.word_field(a))
                  for a in WORD_ASPECTS}
        words.append(WordScore(token, **scores))
        tokens.append(token)
        if schema.has_phones:
            symbols = _phone_list(_require(w, schema.phones, uid, where))
            accs = [_score(v, uid, where + schema.phone_accuracy)
                    for v in _require(w, schema.phone_accuracy, uid, where)]
            if len(accs) != len(symbols):
                raise IngestionError(f"utterance {uid}: {where}{schema.phone_accuracy} has {len(accs)} "
                                     f"scores for {len(symbols)} phones")
            ref_phones.append(symbols)
            group = []
            for sym, acc in zip(symbols, accs):
                if rescale and PHONE_NATIVE_SCALE.contains(acc):
                    group.append(PhoneScore(sym, rescale_phone(acc), native=acc))
                else:
                    # out-of-range values stay put so validation quarantines them
                    group.append(PhoneScore(sym, acc, scale="0-10" if rescale else "0-2"))
            phone_groups.append(group)
    text = rec.get(schema.text)
    reference = text.split() if isinstance(text, str) else tokens
    return UtteranceAnnotation(
        utterance_id=uid,
        speaker_id=str(speaker if speaker is not None else rec.get(schema.speaker, "")),
        reference_text=reference,
        reference_phones=ref_phones,
        sentence=sent,
        words=words,
        phones=phone_groups if schema.has_phones else None,
        audio_path=audio if audio is not None else rec.get(schema.audio),
    )


# --------------------------------------------------------------------------
# file reading


def read_score_file(path: Path, schema: SchemaDescriptor = SO762) -> dict[str, dict]:
    """Read a JSON object keyed by utterance id, or JSON-Lines with an id field."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"score file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        out = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(f"{path}:{n}: invalid JSON ({e.msg})") from None
            if "_header" in rec:
                continue
            if schema.utterance_id not in rec:
                raise IngestionError(f"{path}:{n}: record lacks {schema.utterance_id!r}")
            out[str(rec[schema.utterance_id])] = rec
        return out
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise IngestionError(f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(data, dict):
        raise IngestionError(f"{path}: expected a JSON object keyed by utterance id")
    return {str(k): v for k, v in data.items()}


def _read_kaldi_map(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, _, rest = line.strip().partition(" ")
        if key:
            out[key] = rest.strip()
    return out


def _split_ids(split_dir: Path) -> tuple[list[str], dict[str, str], dict[str, str]]:
    """Utterance ids, speaker map and wave paths from a Kaldi-style split directory."""
    ids: set[str] = set()
    speakers: dict[str, str] = {}
    waves: dict[str, str] = {}
    if (split_dir / "spk2utt").is_file():
        for spk, utts in _read_kaldi_map(split_dir / "spk2utt").items():
            for u in utts.split():
                speakers[u] = spk
                ids.add(u)
    if (split_dir / "utt2spk").is_file():
        for u, spk in _read_kaldi_map(split_dir / "utt2spk").items():
            speakers.setdefault(u, spk)
            ids.add(u)
    if (split_dir / "wav.scp").is_file():
        waves = _read_kaldi_map(split_dir / "wav.scp")
        ids.update(waves)
    if (split_dir / "text").is_file():
        ids.update(_read_kaldi_map(split_dir / "text"))
    return sorted(ids), speakers, waves


def discover(root: Path) -> dict[str, tuple[Path, Optional[list[str]], dict, dict]]:
    """Map split name to (score file, id list or None for all, speakers, waves)."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"corpus root is not a directory: {root}")
    found = {}
    shared = next((p for p in (root / "resource" / "scores.json", root / "scores.json") if p.is_file()), None)
    for split in SPLITS:
        d = root / split
        if shared is not None and d.is_dir() and any((d / f).is_file() for f in _ID_LISTS):
            ids, spk, wav = _split_ids(d)
            found[split] = (shared, ids, spk, wav)
            continue
        for ext in (".jsonl", ".json"):
            if (root / f"{split}{ext}").is_file():
                found[split] = (root / f"{split}{ext}", None, {}, {})
                break
    if not found and shared is not None:
        found["all"] = (shared, None, {}, {})
    if not found:
        raise IngestionError(f"no score file found under {root}")
    return found


def load_corpus(root, schema: SchemaDescriptor = SO762) -> dict[str, CorpusSplit]:
    """Load and validate every split under ``root``.

    Schema errors (missing fields, non-numeric values, ids listed in a split
    but absent from the score file) raise IngestionError. Annotation invariant
    violations put the utterance in the split's quarantine list instead.
    """
    splits = {}
    cache: dict[Path, dict] = {}
    for name, (path, ids, speakers, waves) in discover(root).items():
        if path not in cache:
            cache[path] = read_score_file(path, schema)
        records = cache[path]
        if ids is None:
            ids = sorted(records)
        utts, quarantine = [], []
        for uid in ids:
            if uid not in records:
                raise IngestionError(f"utterance {uid} listed in split {name!r} but absent from {path.name}")
            ann = record_to_annotation(uid, records[uid], schema, speakers.get(uid), waves.get(uid))
            problems = validate_annotation(ann, averaged=True)
            if problems:
                quarantine.append((uid, [str(v) for v in problems]))
                log.warning("quarantined %s: %s", uid, problems[0])
            else:
                utts.append(ann)
        splits[name] = CorpusSplit(name, utts, quarantine)
        log.info("split %s: %d utterances loaded, %d quarantined", name, len(utts), len(quarantine))
    return splits


def write_canonical(utterances: Iterable[UtteranceAnnotation], path, header: Optional[dict] = None) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"_header": header}, sort_keys=True) + "\n")
        for u in utterances:
            fh.write(json.dumps(u.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_canonical(path) -> list[UtteranceAnnotation]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"corpus file not found: {path}")
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise IngestionError(f"{path}:{n}: invalid JSON ({e.msg})") from None
        if "_header" in rec:
            continue
        try:
            out.append(UtteranceAnnotation.from_dict(rec))
        except (KeyError, TypeError, ValueError) as e:
            raise IngestionError(f"{path}:{n}: bad annotation record ({e})") from None
    return out


# --------------------------------------------------------------------------
# raters


@dataclass
class RaterAnnotationSet:
    utterance_id: str
    raters: dict[str, UtteranceAnnotation]

    def __post_init__(self):
        if len(self.raters) < 2:
            raise AlignmentError(f"utterance {self.utterance_id}: need at least 2 raters, got {len(self.raters)}")


def _structure(a: UtteranceAnnotation):
    phones = None if a.phones is None else [[p.phone for p in g] for g in a.phones]
    return [w.word for w in a.words], phones


def average_raters(s: RaterAnnotationSet) -> UtteranceAnnotation:
    """Arithmetic mean of every score across raters; structure from the first rater."""
    anns = list(s.raters.values())
    first = anns[0]
    shape = _structure(first)
    for rid, a in s.raters.items():
        if _structure(a) != shape:
            raise AlignmentError(f"utterance {s.utterance_id}: rater {rid} word/phone structure differs")
        for g, g0 in zip(a.phones or [], first.phones or []):
            if any(p.scale != p0.scale for p, p0 in zip(g, g0)):
                raise AlignmentError(f"utterance {s.utterance_id}: rater {rid} phone scale differs")

    def mean(values):
        return fmean(values) if None not in values else None

    sentence = SentenceScores(**{a: mean([x.sentence.get(a) for x in anns]) for a in SENTENCE_ASPECTS})
    words = [WordScore(w.word, **{a: mean([x.words[i].get(a) for x in anns]) for a in WORD_ASPECTS})
             for i, w in enumerate(first.words)]
    phones = None
    if first.phones is not None:
        phones = []
        for gi, g in enumerate(first.phones):
            grp = []
            for pi, p in enumerate(g):
                natives = [x.phones[gi][pi].native for x in anns]
                grp.append(PhoneScore(p.phone, fmean(x.phones[gi][pi].accuracy for x in anns), p.scale,
                                      mean(natives)))
            phones.append(grp)
    return replace(first, sentence=sentence, words=words, phones=phones)


def _expand_rater_record(uid: str, rec: dict, schema: SchemaDescriptor) -> dict[str, dict]:
    """Split a record whose numeric fields are per-rater lists into one record per rater."""
    counts = set()
    for a in SENTENCE_ASPECTS:
        v = rec.get(schema.sentence_field(a))
        if isinstance(v, list) and v and all(isinstance(x, (int, float)) for x in v):
            counts.add(len(v))
    if len(counts) != 1:
        raise IngestionError(f"utterance {uid}: cannot infer rater count from sentence fields")
    n = counts.pop()

    def pick(v, r):
        return v[r] if isinstance(v, list) and len(v) == n else v

    out = {}
    for r in range(n):
        one = {k: pick(v, r) for k, v in rec.items() if k != schema.words}
        one[schema.words] = []
        for w in rec.get(schema.words, []):
            ww = {}
            for k, v in w.items():
                if k == schema.phone_accuracy and isinstance(v, list) and v and isinstance(v[0], list):
                    ww[k] = v[r] if len(v) == n else [pick(x, r) for x in v]
                elif k == schema.phones:
                    ww[k] = v
                else:
                    ww[k] = pick(v, r)
            one[schema.words].append(ww)
        out[f"rater{r + 1}"] = one
    return out


def load_rater_sets(path, schema: SchemaDescriptor = SO762) -> list[RaterAnnotationSet]:
    """Read per-rater annotations.

    Accepts JSON-Lines ``{"utterance_id": ..., "raters": {rater_id: record}}``
    or a score file (JSON / JSON-Lines) whose numeric fields are lists with
    one entry per rater. Phone accuracies stay on their native scale.
    """
    path = Path(path)
    sets = []
    for uid, rec in sorted(read_score_file(path, schema).items()):
        raw = rec["raters"] if "raters" in rec else _expand_rater_record(uid, rec, schema)
        anns = {rid: record_to_annotation(uid, r, schema, rescale=False) for rid, r in sorted(raw.items())}
        sets.append(RaterAnnotationSet(uid, anns))
    return sets


@dataclass(frozen=True)
class QcThresholds:
    sentence_pcc_min: float = 0.6
    sentence_scc_min: float = 0.6
    word_pcc_min: float = 0.6
    word_scc_min: float = 0.5
    strict: bool = True  # "exceed": equality fails

    def __post_init__(self):
        for name in ("sentence_pcc_min", "sentence_scc_min", "word_pcc_min", "word_scc_min"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [-1, 1]")

    def passes(self, value: Optional[float], minimum: float) -> bool:
        if value is None:
            return False
        return value > minimum if self.strict else value >= minimum


@dataclass
class PairQc:
    rater_a: str
    rater_b: str
    sentence_pcc: Optional[float]
    sentence_scc: Optional[float]
    word_pcc: Optional[float]
    word_scc: Optional[float]
    failures: list[str]

    @property
    def flagged(self) -> bool:
        return bool(self.failures)


@dataclass
class QcReport:
    pairs: list[PairQc]
    thresholds: QcThresholds

    @property
    def passed(self) -> bool:
        return not any(p.flagged for p in self.pairs)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "thresholds": {k: getattr(self.thresholds, k) for k in
                           ("sentence_pcc_min", "sentence_scc_min", "word_pcc_min", "word_scc_min", "strict")},
            "pairs": [p.__dict__ | {"flagged": p.flagged} for p in self.pairs],
        }


def rater_series(sets: Sequence[RaterAnnotationSet], rater: str) -> tuple[list[float], list[float]]:
    """One rater's sentence scores and word scores, each concatenated aspect by aspect.

    Words are pooled across utterances in utterance order.
    """
    sent = [s.raters[rater].sentence.get(a) for a in SENTENCE_ASPECTS for s in sets]
    word = [w.get(a) for a in WORD_ASPECTS for s in sets for w in s.raters[rater].words]
    return sent, word


def rater_qc(sets: Sequence[RaterAnnotationSet], t: QcThresholds = QcThresholds()) -> QcReport:
    """Check PCC/SCC between every rater pair against the QC thresholds."""
    if len(sets) < 2:
        raise InsufficientDataError(f"rater QC needs at least 2 utterances, got {len(sets)}")
    raters = sorted(sets[0].raters)
    for s in sets:
        if sorted(s.raters) != raters:
            raise AlignmentError(f"utterance {s.utterance_id}: rater ids differ from {raters}")
        shape = _structure(s.raters[raters[0]])[0]
        if any(_structure(s.raters[r])[0] != shape for r in raters):
            raise AlignmentError(f"utterance {s.utterance_id}: raters disagree on word tokens")
    series = {r: rater_series(sets, r) for r in raters}
    pairs = []
    for a, b in itertools.combinations(raters, 2):
        (sa, wa), (sb, wb) = series[a], series[b]
        vals = {
            "sentence_pcc": pcc(sa, sb).value, "sentence_scc": scc(sa, sb).value,
            "word_pcc": pcc(wa, wb).value, "word_scc": scc(wa, wb).value,
        }
        failures = [k for k, v in vals.items() if not t.passes(v, getattr(t, f"{k}_min"))]
        pairs.append(PairQc(a, b, failures=failures, **vals))
    return QcReport(pairs, t)


# --------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Bucket:
    lo: float
    hi: float
    closed_hi: bool = False

    def __contains__(self, x: float) -> bool:
        return self.lo <= x and (x <= self.hi if self.closed_hi else x < self.hi)

    def __str__(self):
        return f"[{self.lo:g},{self.hi:g}{']' if self.closed_hi else ')'}"

    @classmethod
    def parse(cls, text: str) -> "Bucket":
        """Parse ``[lo,hi)`` or ``[lo,hi]``."""
        t = text.strip()
        if not (t.startswith("[") and t[-1] in ")]" and "," in t):
            raise ValueError(f"bucket must look like [lo,hi) or [lo,hi]: {text!r}")
        lo, hi = t[1:-1].split(",")
        return cls(float(lo), float(hi), t[-1] == "]")


def buckets_from_edges(edges: Sequence[float]) -> list[Bucket]:
    """Half-open buckets between consecutive edges; the last one is closed."""
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("need at least two strictly increasing edges")
    out = [Bucket(a, b) for a, b in zip(edges, edges[1:])]
    out[-1] = Bucket(edges[-2], edges[-1], True)
    return out


def distribution_report(split: CorpusSplit, aspect: str, buckets: Sequence[Bucket],
                        granularity: str = "sentence") -> list[tuple[Bucket, int]]:
    """Count scores of one aspect falling in each bucket."""
    if granularity == "sentence":
        if aspect not in SENTENCE_ASPECTS:
            raise ValueError(f"unknown sentence aspect {aspect!r}")
        values = [u.sentence.get(aspect) for u in split.utterances]
    elif granularity == "word":
        if aspect not in WORD_ASPECTS:
            raise ValueError(f"unknown word aspect {aspect!r}")
        values = [w.get(aspect) for u in split.utterances for w in u.words]
    elif granularity == "phone" and aspect == "accuracy":
        values = [p.accuracy for u in split.utterances for g in (u.phones or []) for p in g]
    else:
        raise ValueError(f"unknown aspect {granularity}/{aspect}")
    return [(b, sum(1 for v in values if v in b)) for b in buckets]
